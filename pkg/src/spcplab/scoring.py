"""Post-hoc OOD scores (higher means more ID-like) and the level-set detector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mechanism import contributions_batch, spcp_logits, truncate
from .network import Model, forward_features, logits
from .numerics import ContractError, logsumexp, logsumexp_rows, ordered_sum

KINDS = ("msp", "energy")
PATHWAYS = ("vanilla", "spcp")

ID, OOD = "ID", "OOD"


class PathwayError(ContractError):
    pass


@dataclass(frozen=True)
class ScoreFn:
    kind: str = "energy"
    pathway: str = "vanilla"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"score kind must be one of {KINDS}, got {self.kind!r}")
        if self.pathway not in PATHWAYS:
            raise ContractError(f"pathway must be one of {PATHWAYS}, got {self.pathway!r}")


def msp_score(z) -> float:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] < 2:
        raise ContractError("MSP needs at least two classes")
    e = np.exp(z - np.max(z))
    return float(np.max(e) / ordered_sum(e))


def energy_score(z) -> float:
    return logsumexp(z)


def default_pathway(model: Model) -> str:
    """spcp when the model carries a threshold and was configured to truncate at inference."""
    infer = model.config.get("spcp", {}).get("truncate_infer", True)
    return "spcp" if model.lambda_final is not None and infer else "vanilla"


def pathway_logits(model: Model, x_batch, pathway: str) -> np.ndarray:
    if pathway not in PATHWAYS:
        raise ContractError(f"pathway must be one of {PATHWAYS}, got {pathway!r}")
    h, _ = forward_features(model, x_batch)
    if pathway == "vanilla":
        return logits(model.head, h)
    if model.lambda_final is None:
        raise PathwayError("spcp pathway requested but the model has no lambda_final (trained without truncation)")
    c = contributions_batch(h, model.head.W)
    return spcp_logits(truncate(c, model.lambda_final), model.head.b)


def scores_from_logits(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "energy":
        return logsumexp_rows(z)
    if kind == "msp":
        if z.shape[1] < 2:
            raise ContractError("MSP needs at least two classes")
        e = np.exp(z - np.max(z, axis=1, keepdims=True))
        return np.max(e, axis=1) / ordered_sum(e, axis=1)
    raise ContractError(f"score kind must be one of {KINDS}, got {kind!r}")


def score_batch(model: Model, score_fn: ScoreFn, x_batch) -> np.ndarray:
    return scores_from_logits(pathway_logits(model, x_batch, score_fn.pathway), score_fn.kind)


def detect(score: float, tau: float) -> str:
    """ID iff score > tau; a score exactly at the threshold is OOD."""
    return ID if score > tau else OOD
