"""Contribution-pattern concentration and score histograms, exported as CSV."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import LabeledSet, _atomic_write_text, fmt_float
from .mechanism import contributions_batch, truncate
from .network import Model, forward_features
from .numerics import ContractError, ordered_sum
from .scoring import PathwayError, pathway_logits


@dataclass
class PatternReport:
    mean: np.ndarray  # D x K mean contribution per class column, NaN column when the class is absent
    present: np.ndarray  # bool per class
    sorted_columns: list[np.ndarray | None]
    gini: list[float | None]
    eff90: list[int | None]

    @property
    def mean_gini(self) -> float:
        vals = [g for g in self.gini if g is not None]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def mean_eff90(self) -> float:
        vals = [e for e in self.eff90 if e is not None]
        return float(np.mean(vals)) if vals else float("nan")


def mean_contribution(model: Model, data: LabeledSet, pathway: str = "vanilla", by: str = "true"):
    """Per class k, the mean k-th contribution column over samples assigned to k.

    ``by="true"`` groups samples by label, ``by="predicted"`` by argmax of the
    pathway logits. Returns (D x K matrix, bool mask of classes with samples).
    """
    if data.num_classes != model.K:
        raise ContractError(f"data has {data.num_classes} classes, model has {model.K}")
    if by not in ("true", "predicted"):
        raise ContractError(f"by must be 'true' or 'predicted', got {by!r}")
    h, _ = forward_features(model, data.features)
    c = contributions_batch(h, model.head.W)
    if pathway == "spcp":
        if model.lambda_final is None:
            raise PathwayError("spcp pathway requested but the model has no lambda_final")
        c = truncate(c, model.lambda_final)
    elif pathway != "vanilla":
        raise ContractError(f"unknown pathway {pathway!r}")
    groups = data.labels if by == "true" else np.argmax(pathway_logits(model, data.features, pathway), axis=1)
    D, K = model.head.W.shape
    out = np.full((D, K), np.nan)
    present = np.zeros(K, dtype=bool)
    for k in range(K):
        idx = np.flatnonzero(groups == k)
        if idx.size:
            out[:, k] = ordered_sum(c[idx, :, k], axis=0) / idx.size
            present[k] = True
    return out, present


def gini(values) -> float:
    """Mean absolute difference over all pairs divided by twice the mean (sorted-rank form)."""
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0 or np.any(x < 0):
        raise ContractError("gini needs a non-empty non-negative vector")
    total = float(np.sum(x))
    if not total > 0:
        raise ContractError("gini of an all-zero vector")
    n = x.size
    xs = np.sort(x)
    # sum_{i,j} |x_i - x_j| = 2 * sum_i (2i - n + 1) xs[i] for 0-based i
    coeff = 2 * np.arange(n) - n + 1
    return float(np.clip(2 * np.dot(coeff, xs) / (2 * n * total), 0.0, 1.0))


def effective_count(sorted_desc, mass: float = 0.9) -> int:
    x = np.asarray(sorted_desc, dtype=float).ravel()
    if x.size == 0 or np.any(np.diff(x) > 0):
        raise ContractError("effective_count needs a non-empty nonincreasing vector")
    total = float(np.sum(x))
    if not total > 0:
        raise ContractError("effective_count needs a positive total")
    prefix = np.cumsum(x)
    return int(np.searchsorted(prefix, mass * total, side="left") + 1)


def pattern_report(model: Model, data: LabeledSet, pathway: str = "vanilla", by: str = "true") -> PatternReport:
    """Concentration is measured on positive parts max(c, 0) of each class's mean column."""
    mean, present = mean_contribution(model, data, pathway, by)
    cols, ginis, effs = [], [], []
    for k in range(model.K):
        if not present[k]:
            cols.append(None)
            ginis.append(None)
            effs.append(None)
            continue
        col = np.sort(mean[:, k])[::-1]
        cols.append(col)
        pos = np.maximum(col, 0.0)
        if pos.sum() > 0:
            ginis.append(gini(pos))
            effs.append(effective_count(pos, 0.9))
        else:
            ginis.append(None)
            effs.append(None)
    return PatternReport(mean, present, cols, ginis, effs)


def export_pattern_csv(report: PatternReport, path) -> None:
    lines = ["class,rank,mean_contribution"]
    for k, col in enumerate(report.sorted_columns):
        if col is None:
            continue
        lines += [f"{k},{r},{fmt_float(v)}" for r, v in enumerate(col)]
    for k, col in enumerate(report.sorted_columns):
        if col is None:
            lines.append(f"#absent,{k}")
            continue
        g = report.gini[k]
        lines.append(f"#gini,{k},{'nan' if g is None else fmt_float(g)}")
        e = report.eff90[k]
        lines.append(f"#eff90,{k},{'nan' if e is None else e}")
    _atomic_write_text(Path(path), "\n".join(lines) + "\n")


def score_histogram(id_scores, ood_scores, bins: int):
    """Equal-width bins over min-max normalised scores of the union; returns (edges, id_counts, ood_counts)."""
    if bins < 2:
        raise ContractError(f"need at least 2 bins, got {bins}")
    a = np.asarray(id_scores, dtype=float).ravel()
    b = np.asarray(ood_scores, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ContractError("histogram needs non-empty ID and OOD scores")
    both = np.concatenate([a, b])
    lo, hi = float(both.min()), float(both.max())
    span = hi - lo

    def norm(s):
        return np.zeros_like(s) if span == 0 else (s - lo) / span

    def count(s):
        # bin i covers [i/bins, (i+1)/bins); the last bin also takes 1.0
        idx = np.minimum(np.floor(norm(s) * bins).astype(np.int64), bins - 1)
        return np.bincount(idx, minlength=bins)

    edges = np.arange(bins + 1) / bins
    return edges, count(a), count(b)


def export_score_histogram(id_scores, ood_scores, bins: int, path) -> None:
    edges, ci, co = score_histogram(id_scores, ood_scores, bins)
    lines = ["bin_lo,bin_hi,id_count,ood_count"]
    for i in range(bins):
        lines.append(f"{fmt_float(edges[i])},{fmt_float(edges[i + 1])},{ci[i]},{co[i]}")
    _atomic_write_text(Path(path), "\n".join(lines) + "\n")
