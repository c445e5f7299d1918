"""Per-weight contributions of the classifier head, their truncation, and the threshold EMA.

For a linear head f = W^T h + b, zeroing W[i, j] only moves logit j, and by
exactly W[i, j] * h[i]. The contribution matrix C(x) = W * h[:, None] therefore
holds every single-weight ablation effect, and its column sums plus the bias
reproduce the logits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .network import Model, forward_features, logits
from .numerics import ContractError, as_matrix, as_vector, hadamard_broadcast, ordered_sum, top_percentile_rows

ALL = "all"


@dataclass(frozen=True)
class SpcpConfig:
    rho_norm: float = 0.0
    beta: float = 0.999
    lambda0: float = 1000.0
    sample_per_batch: int | str = ALL
    truncate_train: bool = True
    truncate_infer: bool = True

    def __post_init__(self):
        if not self.rho_norm >= 0:
            raise ContractError(f"rho_norm must be non-negative, got {self.rho_norm}")
        if not 0 <= self.beta <= 1:
            raise ContractError(f"beta must lie in [0, 1], got {self.beta}")
        if not math.isfinite(self.lambda0):
            raise ContractError("lambda0 must be finite")
        if self.sample_per_batch != ALL and not (
            isinstance(self.sample_per_batch, int) and self.sample_per_batch >= 1
        ):
            raise ContractError(f"sample_per_batch must be a positive count or 'all', got {self.sample_per_batch!r}")

    @property
    def enabled(self) -> bool:
        return self.rho_norm > 0

    def rho(self, K: int) -> float:
        return rho_from_norm(self.rho_norm, K)


@dataclass(frozen=True)
class ThresholdState:
    lam: float
    beta: float
    rho: float
    sample_per_batch: int | str = ALL
    step: int = 0

    def __post_init__(self):
        if not 0 <= self.beta <= 1:
            raise ContractError(f"beta must lie in [0, 1], got {self.beta}")
        if not 0 <= self.rho <= 100:
            raise ContractError(f"rho must lie in [0, 100], got {self.rho}")
        if not math.isfinite(self.lam):
            raise ContractError("threshold must be finite")

    @property
    def enabled(self) -> bool:
        return self.rho > 0


def rho_from_norm(rho_norm: float, K: int) -> float:
    """Class-count-normalised percentile: rho = rho_norm * 100 / K, clamped to [0, 100]."""
    if rho_norm < 0:
        raise ContractError(f"rho_norm must be non-negative, got {rho_norm}")
    if K < 1:
        raise ContractError(f"K must be positive, got {K}")
    return min(max(rho_norm * 100 / K, 0.0), 100.0)


def contribution_matrix(h, W) -> np.ndarray:
    return hadamard_broadcast(W, h)


def contributions_batch(h_batch: np.ndarray, W: np.ndarray) -> np.ndarray:
    """n x D x K stack of contribution matrices."""
    h_batch = as_matrix(h_batch, "features")
    W = as_matrix(W, "head weight")
    if h_batch.shape[1] != W.shape[0]:
        raise ContractError(f"features have length {h_batch.shape[1]}, head expects {W.shape[0]}")
    return h_batch[:, :, None] * W[None, :, :]


def contribution_ablation_oracle(model: Model, x, i: int, j: int, k: int) -> float:
    """f_k(x) with W[i, j] intact minus f_k(x) with W[i, j] zeroed, by two forward passes."""
    D, K = model.head.W.shape
    if not (0 <= i < D and 0 <= j < K and 0 <= k < K):
        raise ContractError(f"index out of range: i={i}, j={j}, k={k} for W of shape {(D, K)}")
    if k != j:
        return 0.0
    x = np.asarray(x, dtype=float).reshape(1, -1)
    h, _ = forward_features(model, x)
    full = logits(model.head, h)[0, k]
    ablated = model.copy()
    ablated.head.W[i, j] = 0.0
    h2, _ = forward_features(ablated, x)
    return float(full - logits(ablated.head, h2)[0, k])


def truncate(c: np.ndarray, lam: float | None) -> np.ndarray:
    """min(c, lam) elementwise; ``lam=None`` is the identity."""
    c = np.asarray(c, dtype=float)
    if lam is None:
        return c.copy()
    return np.minimum(c, lam)


def spcp_logits(c_trunc: np.ndarray, b) -> np.ndarray:
    """Column sums of a (possibly truncated) contribution matrix plus bias.

    Accepts a single D x K matrix or an n x D x K stack.
    """
    c_trunc = np.asarray(c_trunc, dtype=float)
    b = as_vector(b, "bias")
    if c_trunc.shape[-1] != b.shape[0]:
        raise ContractError(f"contributions have {c_trunc.shape[-1]} classes, bias has {b.shape[0]}")
    if c_trunc.ndim == 2:
        return ordered_sum(c_trunc, axis=0) + b
    if c_trunc.ndim == 3:
        return ordered_sum(c_trunc, axis=1) + b[None, :]
    raise ContractError(f"contributions must be 2-D or 3-D, got shape {c_trunc.shape}")


def batch_threshold_stat(
    h_batch: np.ndarray, W: np.ndarray, rho: float, sample_per_batch: int | str, rng: np.random.Generator | None
) -> float:
    """Mean over (sub)sampled instances of the per-sample top-rho contribution."""
    h_batch = as_matrix(h_batch, "features")
    n = h_batch.shape[0]
    if n == 0:
        raise ContractError("empty batch")
    if sample_per_batch == ALL or sample_per_batch >= n:
        idx = np.arange(n)
    else:
        if rng is None:
            raise ContractError("subsampling needs an rng")
        idx = np.sort(rng.choice(n, size=sample_per_batch, replace=False))
    tops = top_percentile_rows(contributions_batch(h_batch[idx], W).reshape(idx.size, -1), rho)
    # sorted before summing so the mean is exactly permutation invariant
    return float(ordered_sum(np.sort(tops)) / tops.size)


def ema_update(state: ThresholdState, stat: float) -> ThresholdState:
    if not math.isfinite(stat):
        raise ContractError(f"threshold statistic is not finite: {stat}")
    lam = state.beta * state.lam + (1 - state.beta) * stat
    return replace(state, lam=lam, step=state.step + 1)
