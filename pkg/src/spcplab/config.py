"""Flat ``key = value`` run configuration with dotted sections.

Example::

    seed = 3
    train.epochs = 30
    spcp.rho_norm = 1.0   # 0 disables truncation
    spcp.beta = 0.99

Unknown keys are errors. Precedence is command line > file > defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .experiment import BenchmarkSpec
from .mechanism import ALL, SpcpConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


# the grid searched for rho_norm when none is given
DEFAULT_RHO_NORMS = (0.1, 0.2, 0.3, 0.4, 0.5, 1.0, 2.0, 3.0, 5.0)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    data: BenchmarkSpec = field(default_factory=BenchmarkSpec)
    score_fn: str = "energy"
    pathway: str = "auto"
    level: float = 0.95
    bins: int = 20
    group_by: str = "true"
    analyze_ood: str = "far"
    rho_norms: tuple[float, ...] = DEFAULT_RHO_NORMS
    data_dir: str = "data"
    out_dir: str = "out"

    def train_config(self) -> TrainConfig:
        return replace(self.train, seed=self.seed, score_fn=self.score_fn)

    def to_dict(self) -> dict:
        """Experiment settings; paths are left out so artifacts do not depend on where they were written."""
        return {
            "seed": self.seed,
            "train": self.train_config().to_dict(),
            "data": {f.name: getattr(self.data, f.name) for f in fields(self.data)},
            "eval": {"score_fn": self.score_fn, "pathway": self.pathway, "level": self.level},
            "analyze": {"bins": self.bins, "by": self.group_by, "ood": self.analyze_ood},
            "sweep": {"rho_norms": list(self.rho_norms)},
        }


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s: str) -> tuple[int, ...]:
    s = s.strip()
    return tuple(int(v) for v in s.split(",")) if s else ()


def _floats(s: str) -> tuple[float, ...]:
    s = s.strip()
    return tuple(float(v) for v in s.split(",")) if s else ()


def _count_or_all(s: str):
    return ALL if s.strip() == ALL else int(s)


# key -> (section, attribute, parser); section None means a RunConfig field
_KEYS = {
    "seed": (None, "seed", int),
    "train.lr0": ("train", "lr0", float),
    "train.epochs": ("train", "epochs", int),
    "train.batch_size": ("train", "batch_size", int),
    "train.momentum": ("train", "momentum", float),
    "train.weight_decay": ("train", "weight_decay", float),
    "train.hidden": ("train", "hidden", _ints),
    "train.final_activation": ("train", "final_activation", str),
    "logitnorm.enabled": ("train", "logitnorm", _bool),
    "logitnorm.temperature": ("train", "temperature", float),
    "spcp.rho_norm": ("spcp", "rho_norm", float),
    "spcp.beta": ("spcp", "beta", float),
    "spcp.lambda0": ("spcp", "lambda0", float),
    "spcp.sample_per_batch": ("spcp", "sample_per_batch", _count_or_all),
    "spcp.truncate_train": ("spcp", "truncate_train", _bool),
    "spcp.truncate_infer": ("spcp", "truncate_infer", _bool),
    "data.classes": ("data", "classes", int),
    "data.dim": ("data", "dim", int),
    "data.radius": ("data", "radius", float),
    "data.sigma": ("data", "sigma", float),
    "data.n_per_class": ("data", "n_per_class", int),
    "data.test_fraction": ("data", "test_fraction", float),
    "data.n_near": ("data", "n_near", int),
    "data.n_far": ("data", "n_far", int),
    "data.n_noise": ("data", "n_noise", int),
    "data.far_scale": ("data", "far_scale", float),
    "data.means": ("data", "means", str),
    "eval.score_fn": (None, "score_fn", str),
    "eval.pathway": (None, "pathway", str),
    "eval.level": (None, "level", float),
    "analyze.bins": (None, "bins", int),
    "analyze.by": (None, "group_by", str),
    "analyze.ood": (None, "analyze_ood", str),
    "sweep.rho_norms": (None, "rho_norms", _floats),
    "paths.data": (None, "data_dir", str),
    "paths.out": (None, "out_dir", str),
}

KNOWN_KEYS = tuple(_KEYS)


def parse_lines(text: str, origin: str = "<config>") -> list[tuple[str, str]]:
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        pairs.append((key, value))
    return pairs


def apply(cfg: RunConfig, pairs: list[tuple[str, str]], origin: str = "<config>") -> RunConfig:
    top, train, spcp, data = {}, {}, {}, {}
    buckets = {None: top, "train": train, "spcp": spcp, "data": data}
    for key, value in pairs:
        if key not in _KEYS:
            raise ConfigError(f"{origin}: unknown key {key!r}")
        section, attr, parse = _KEYS[key]
        try:
            buckets[section][attr] = parse(value)
        except ValueError as e:
            raise ConfigError(f"{origin}: bad value for {key}: {e}") from None
    try:
        new_spcp = replace(cfg.train.spcp, **spcp)
        new_train = replace(cfg.train, spcp=new_spcp, **train)
        new_data = replace(cfg.data, **data)
        out = replace(cfg, train=new_train, data=new_data, **top)
    except ValueError as e:
        raise ConfigError(f"{origin}: {e}") from None
    _validate(out)
    return out


def _validate(cfg: RunConfig) -> None:
    if cfg.score_fn not in ("msp", "energy"):
        raise ConfigError(f"eval.score_fn must be msp or energy, got {cfg.score_fn!r}")
    if cfg.pathway not in ("auto", "vanilla", "spcp"):
        raise ConfigError(f"eval.pathway must be auto, vanilla or spcp, got {cfg.pathway!r}")
    if cfg.group_by not in ("true", "predicted"):
        raise ConfigError(f"analyze.by must be true or predicted, got {cfg.group_by!r}")
    if cfg.seed < 0:
        raise ConfigError("seed must be non-negative")


def load(path: str | Path | None, overrides: list[tuple[str, str]] = ()) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {p}: {e.strerror}") from None
        cfg = apply(cfg, parse_lines(text, str(p)), str(p))
    if overrides:
        cfg = apply(cfg, list(overrides), "command line")
    return cfg
