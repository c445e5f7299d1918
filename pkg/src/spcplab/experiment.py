"""End-to-end pieces shared by the CLI and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import (
    BlobSpec,
    LabeledSet,
    UnlabeledSet,
    axis_means,
    data_radius,
    gen_blobs,
    gen_far_ood,
    gen_gaussian_noise,
    gen_near_ood,
    random_means,
    stratified_split,
)
from .metrics import EvalReport, OodResult, accuracy, auroc, fpr_at_tpr
from .network import Model
from .scoring import default_pathway, pathway_logits, scores_from_logits
from .trainer import TrainConfig, TrainLog, train


@dataclass(frozen=True)
class BenchmarkSpec:
    classes: int = 4
    dim: int = 8
    radius: float = 4.0
    sigma: float = 1.0
    n_per_class: int = 1000
    test_fraction: float = 0.5
    n_near: int = 2000
    n_far: int = 2000
    n_noise: int = 2000
    far_scale: float = 2.0  # far-OOD box half-width as a multiple of the ID radius
    means: str = "random"  # "random" (on a sphere) or "axis" (radius * e_k)


@dataclass
class Benchmark:
    train: LabeledSet
    test: LabeledSet
    near: UnlabeledSet
    far: UnlabeledSet
    noise: UnlabeledSet

    def files(self) -> dict:
        return {"id_train": self.train, "id_test": self.test, "near": self.near, "far": self.far, "noise": self.noise}


def make_benchmark(spec: BenchmarkSpec, seed: int) -> Benchmark:
    if spec.means == "axis":
        means = axis_means(spec.classes, spec.dim, spec.radius)
    elif spec.means == "random":
        means = random_means(spec.classes, spec.dim, spec.radius, seed)
    else:
        raise ValueError(f"unknown means layout {spec.means!r}")
    blobs = BlobSpec(means, spec.sigma, spec.n_per_class, seed)
    full = gen_blobs(blobs)
    tr, te = stratified_split(full, spec.test_fraction, seed)
    radius = data_radius(full.features)
    return Benchmark(
        tr,
        te,
        gen_near_ood(blobs, spec.n_near, seed),
        gen_far_ood(spec.dim, spec.n_far, spec.far_scale * radius, seed, radius),
        gen_gaussian_noise(spec.dim, spec.n_noise, seed),
    )


def ood_group(name: str) -> str | None:
    for g in ("near", "far"):
        if name.startswith(g):
            return g
    return None


def evaluate(
    model: Model,
    id_test: LabeledSet,
    ood_sets: list[UnlabeledSet],
    kind: str = "energy",
    pathway: str | None = None,
    level: float = 0.95,
) -> EvalReport:
    pathway = pathway or default_pathway(model)
    z_id = pathway_logits(model, id_test.features, pathway)
    s_id = scores_from_logits(z_id, kind)
    results = []
    for s in ood_sets:
        s_ood = scores_from_logits(pathway_logits(model, s.features, pathway), kind)
        results.append(OodResult(s.name, auroc(s_id, s_ood), fpr_at_tpr(s_id, s_ood, level), ood_group(s.name)))
    echo = {
        "model": model.config,
        "lambda_final": model.lambda_final,
        "score_fn": kind,
        "pathway": pathway,
        "level": level,
    }
    return EvalReport(accuracy(np.argmax(z_id, axis=1), id_test.labels), results, echo)


@dataclass
class SweepRow:
    rho_norm: float
    val_auroc: float
    val_fpr95: float
    id_acc: float


@dataclass
class SweepResult:
    rows: list[SweepRow]
    best: int
    models: list[Model] = field(repr=False, default_factory=list)
    logs: list[TrainLog] = field(repr=False, default_factory=list)

    @property
    def best_model(self) -> Model:
        return self.models[self.best]


def select_best(rows: list[SweepRow]) -> int:
    """Highest validation AUROC; ties go to the smaller rho_norm."""
    if not rows:
        raise ValueError("empty sweep")
    return min(range(len(rows)), key=lambda i: (-rows[i].val_auroc, rows[i].rho_norm))


def run_sweep(
    config: TrainConfig,
    rho_norms: list[float],
    train_set: LabeledSet,
    val_id: LabeledSet,
    val_ood: UnlabeledSet,
    level: float = 0.95,
) -> SweepResult:
    if not rho_norms:
        raise ValueError("rho_norm list is empty")
    rows, models, logs = [], [], []
    for r in rho_norms:
        cfg = replace(config, spcp=replace(config.spcp, rho_norm=float(r)))
        model, tlog = train(cfg, train_set)
        rep = evaluate(model, val_id, [val_ood], config.score_fn, None, level)
        rows.append(SweepRow(float(r), rep.ood[0].auroc, rep.ood[0].fpr95, rep.id_acc))
        models.append(model)
        logs.append(tlog)
    return SweepResult(rows, select_best(rows), models, logs)
