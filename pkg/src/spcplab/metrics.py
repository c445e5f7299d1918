"""AUROC, FPR at a TPR level, and accuracy, with pinned tie conventions.

AUROC gives half credit to tied ID/OOD pairs (Mann-Whitney). FPR uses the
nearest-rank threshold tau = r-th largest ID score, r = ceil(level * n_id), and
counts OOD samples with score >= tau as false positives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .numerics import ContractError


@dataclass
class OodResult:
    name: str
    auroc: float
    fpr95: float
    group: str | None = None


@dataclass
class EvalReport:
    id_acc: float
    ood: list[OodResult]
    config: dict = field(default_factory=dict)

    def group_means(self) -> dict:
        groups = {}
        for g in ("near", "far"):
            members = [r for r in self.ood if r.group == g]
            if members:
                groups[g] = {
                    "auroc": sum(r.auroc for r in members) / len(members),
                    "fpr95": sum(r.fpr95 for r in members) / len(members),
                }
        return groups

    def to_dict(self) -> dict:
        return {
            "id_acc": self.id_acc,
            "ood": [{"name": r.name, "auroc": r.auroc, "fpr95": r.fpr95} for r in self.ood],
            "groups": self.group_means(),
            "config": self.config,
        }


def _nonempty(a, what: str) -> np.ndarray:
    a = np.asarray(a, dtype=float).ravel()
    if a.size == 0:
        raise ContractError(f"{what} is empty")
    return a


def auroc(id_scores, ood_scores) -> float:
    """P(s_id > s_ood) + 0.5 P(s_id = s_ood), via midranks of the pooled scores."""
    s_id = _nonempty(id_scores, "ID scores")
    s_ood = _nonempty(ood_scores, "OOD scores")
    n1, n0 = s_id.size, s_ood.size
    pooled = np.concatenate([s_id, s_ood])
    order = np.argsort(pooled, kind="stable")
    sorted_vals = pooled[order]
    # twice the midrank keeps everything integral
    ranks2 = np.empty(pooled.size, dtype=np.int64)
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    ends = np.r_[starts[1:], pooled.size]
    for s, e in zip(starts, ends):
        ranks2[order[s:e]] = s + e + 1  # 2 * mean of 1-based ranks s+1..e
    u2 = int(ranks2[:n1].sum()) - n1 * (n1 + 1)
    return float(Fraction(u2, 2 * n1 * n0))


def choose_tau(id_scores, level: float = 0.95) -> float:
    s = _nonempty(id_scores, "ID scores")
    if not 0 < level <= 1:
        raise ContractError(f"level must lie in (0, 1], got {level}")
    r = min(max(math.ceil(Fraction(repr(float(level))) * s.size), 1), s.size)
    return float(np.sort(s)[::-1][r - 1])


def fpr_at_tpr(id_scores, ood_scores, level: float = 0.95) -> float:
    tau = choose_tau(id_scores, level)
    s_ood = _nonempty(ood_scores, "OOD scores")
    return int(np.sum(s_ood >= tau)) / s_ood.size


def accuracy(pred_labels, true_labels) -> float:
    p = np.asarray(pred_labels)
    t = np.asarray(true_labels)
    if p.shape != t.shape:
        raise ContractError(f"prediction shape {p.shape} != label shape {t.shape}")
    if p.size == 0:
        raise ContractError("accuracy of empty input")
    return int(np.sum(p == t)) / p.size
