"""Command-line driver: ``spcplab {gen,train,eval,analyze,sweep}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as cfgmod
from .analysis import export_pattern_csv, export_score_histogram, pattern_report
from .dataset import (
    _atomic_write_text,
    fmt_float,
    gen_gaussian_noise,
    load_labeled_csv,
    load_unlabeled_csv,
    save_csv,
)
from .experiment import evaluate, make_benchmark, run_sweep
from .metrics import EvalReport
from .network import deserialize, dumps_model
from .scoring import default_pathway, pathway_logits, scores_from_logits
from .trainer import train

log = logging.getLogger("spcplab")

DATA_FILES = ("id_train", "id_test", "near", "far", "noise")


class CliError(Exception):
    pass


def _write_json(path: Path, doc) -> None:
    _atomic_write_text(path, json.dumps(doc, indent=1) + "\n")


def _out_dir(path: str, create: bool = True) -> Path:
    p = Path(path)
    if not p.is_dir():
        if not create:
            raise CliError(f"output directory {p} does not exist")
        p.mkdir(parents=True, exist_ok=True)
    return p


def _load_config(args) -> cfgmod.RunConfig:
    overrides = []
    for item in args.set or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides.append((k.strip(), v.strip()))
    if args.seed is not None:
        overrides.append(("seed", str(args.seed)))
    if getattr(args, "data", None):
        overrides.append(("paths.data", args.data))
    if getattr(args, "out", None):
        overrides.append(("paths.out", args.out))
    return cfgmod.load(args.config, overrides)


def _train_set(cfg):
    return load_labeled_csv(Path(cfg.data_dir) / "id_train.csv")


def _test_set(cfg, K: int):
    return load_labeled_csv(Path(cfg.data_dir) / "id_test.csv", num_classes=K)


# --- commands ---------------------------------------------------------------


def cmd_gen(cfg, force: bool = False, create: bool = True) -> list[Path]:
    out = _out_dir(cfg.out_dir, create)
    targets = [out / f"{name}.csv" for name in DATA_FILES]
    clash = [str(t) for t in targets if t.exists()]
    if clash and not force:
        raise CliError(f"refusing to overwrite {', '.join(clash)} (use --force)")
    bench = make_benchmark(cfg.data, cfg.seed)
    for t, data in zip(targets, bench.files().values()):
        save_csv(data, t)
    log.info("wrote %d files to %s", len(targets), out)
    return targets


def cmd_train(cfg) -> tuple[Path, Path]:
    out = _out_dir(cfg.out_dir)
    tcfg = cfg.train_config()
    model, tlog = train(tcfg, _train_set(cfg))
    for e in tlog.epochs:
        lam = "disabled" if e["lambda"] is None else f"{e['lambda']:.6g}"
        print(f"epoch {e['epoch']:3d}  loss {e['loss']:.6f}  acc {e['train_acc']:.4f}  lambda {lam}  lr {e['lr']:.6g}")
    print(f"lambda_final {model.lambda_final}  wall time {tlog.wall_time:.2f}s")
    model.config = dict(model.config, run=cfg.to_dict())
    mpath, lpath = out / "model.json", out / "train_log.json"
    _atomic_write_text(mpath, dumps_model(model))
    _write_json(lpath, tlog.to_dict())
    return mpath, lpath


def _ood_sets(cfg, specs: list[str] | None):
    if not specs:
        specs = [f"near={Path(cfg.data_dir) / 'near.csv'}", f"far={Path(cfg.data_dir) / 'far.csv'}"]
    sets = []
    for s in specs:
        if "=" not in s:
            raise CliError(f"--ood expects name=path, got {s!r}")
        name, path = s.split("=", 1)
        sets.append(load_unlabeled_csv(path, name))
    return sets


def _resolve_pathway(cfg, model) -> str:
    return default_pathway(model) if cfg.pathway == "auto" else cfg.pathway


def print_report(report: EvalReport) -> None:
    print(f"{'set':<12}{'FPR95':>10}{'AUROC':>10}")
    for r in report.ood:
        print(f"{r.name:<12}{100 * r.fpr95:>10.2f}{100 * r.auroc:>10.2f}")
    for g, m in report.group_means().items():
        print(f"{g + '-avg':<12}{100 * m['fpr95']:>10.2f}{100 * m['auroc']:>10.2f}")
    print(f"ID ACC {100 * report.id_acc:.2f}")


def cmd_eval(cfg, model_path: str, ood_specs: list[str] | None = None) -> Path:
    model = deserialize(model_path)
    out = _out_dir(cfg.out_dir)
    report = evaluate(
        model, _test_set(cfg, model.K), _ood_sets(cfg, ood_specs), cfg.score_fn, _resolve_pathway(cfg, model), cfg.level
    )
    doc = report.to_dict()
    doc["config"] = dict(doc["config"], run=cfg.to_dict())
    path = out / "report.json"
    _write_json(path, doc)
    print_report(report)
    return path


def cmd_analyze(cfg, model_path: str) -> tuple[Path, Path]:
    model = deserialize(model_path)
    out = _out_dir(cfg.out_dir)
    pathway = _resolve_pathway(cfg, model)
    test = _test_set(cfg, model.K)
    ood = load_unlabeled_csv(Path(cfg.data_dir) / f"{cfg.analyze_ood}.csv", cfg.analyze_ood)
    report = pattern_report(model, test, pathway, cfg.group_by)
    s_id = scores_from_logits(pathway_logits(model, test.features, pathway), cfg.score_fn)
    s_ood = scores_from_logits(pathway_logits(model, ood.features, pathway), cfg.score_fn)
    ppath, hpath = out / "pattern.csv", out / "histogram.csv"
    export_pattern_csv(report, ppath)
    export_score_histogram(s_id, s_ood, cfg.bins, hpath)
    _write_json(out / "analyze_config.json", {"model": model.config, "pathway": pathway, "run": cfg.to_dict()})
    print(f"mean gini {report.mean_gini:.4f}  mean eff90 {report.mean_eff90:.2f}  ({pathway} pathway)")
    return ppath, hpath


def cmd_sweep(cfg, val_id: str | None = None, val_ood: str | None = None) -> tuple[Path, Path]:
    out = _out_dir(cfg.out_dir)
    train_set = _train_set(cfg)
    vid = load_labeled_csv(val_id or Path(cfg.data_dir) / "id_test.csv", num_classes=train_set.num_classes)
    noise_path = Path(val_ood) if val_ood else Path(cfg.data_dir) / "noise.csv"
    if noise_path.exists():
        vood = load_unlabeled_csv(noise_path, "noise")
    elif val_ood:
        raise CliError(f"validation OOD file {noise_path} not found")
    else:
        vood = gen_gaussian_noise(train_set.dim, cfg.data.n_noise, cfg.seed)
    result = run_sweep(cfg.train_config(), list(cfg.rho_norms), train_set, vid, vood, cfg.level)
    lines = ["rho_norm,val_auroc,val_fpr95,id_acc"]
    print(f"{'rho_norm':>9}{'AUROC':>10}{'FPR95':>10}{'ID ACC':>10}")
    for i, r in enumerate(result.rows):
        lines.append(",".join(fmt_float(v) for v in (r.rho_norm, r.val_auroc, r.val_fpr95, r.id_acc)))
        mark = "  *" if i == result.best else ""
        print(f"{r.rho_norm:>9g}{100 * r.val_auroc:>10.2f}{100 * r.val_fpr95:>10.2f}{100 * r.id_acc:>10.2f}{mark}")
    tpath, mpath = out / "sweep.csv", out / "model.json"
    _atomic_write_text(tpath, "\n".join(lines) + "\n")
    best = result.best_model
    best.config = dict(best.config, run=cfg.to_dict())
    _atomic_write_text(mpath, dumps_model(best))
    print(f"selected rho_norm {result.rows[result.best].rho_norm:g}")
    return tpath, mpath


# --- entry point ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spcplab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        if data:
            sp.add_argument("--data", help="directory holding id_train.csv, id_test.csv, near.csv, far.csv, noise.csv")
        sp.add_argument("-v", "--verbose", action="store_true")

    g = sub.add_parser("gen", help="write the synthetic benchmark CSVs")
    common(g, data=False)
    g.add_argument("--force", action="store_true", help="overwrite existing files")
    g.add_argument("--no-create", action="store_true", help="fail if the output directory is missing")

    common(sub.add_parser("train", help="train a model"))

    e = sub.add_parser("eval", help="evaluate a model on ID test and OOD sets")
    common(e)
    e.add_argument("--model", required=True)
    e.add_argument("--ood", action="append", metavar="NAME=PATH", help="OOD set; names starting near/far are grouped")

    a = sub.add_parser("analyze", help="export contribution patterns and score histograms")
    common(a)
    a.add_argument("--model", required=True)

    s = sub.add_parser("sweep", help="grid-search rho_norm on validation AUROC")
    common(s)
    s.add_argument("--rho-norms", help="comma-separated list, e.g. 0,0.5,3.0")
    s.add_argument("--val-id", help="validation ID CSV (default: id_test.csv in --data)")
    s.add_argument("--val-ood", help="validation OOD CSV (default: noise.csv in --data, else generated noise)")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "sweep" and args.rho_norms:
            args.set = (args.set or []) + [f"sweep.rho_norms={args.rho_norms}"]
        cfg = _load_config(args)
        if args.command == "gen":
            if args.out is None:
                cfg = cfgmod.apply(cfg, [("paths.out", cfg.data_dir)])
            cmd_gen(cfg, force=args.force, create=not args.no_create)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "eval":
            cmd_eval(cfg, args.model, args.ood)
        elif args.command == "analyze":
            cmd_analyze(cfg, args.model)
        elif args.command == "sweep":
            cmd_sweep(cfg, args.val_id, args.val_ood)
    except (CliError, ValueError, OSError, ArithmeticError, RuntimeError) as e:
        msg = str(e).splitlines()[0] if str(e) else type(e).__name__
        print(f"spcplab {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
