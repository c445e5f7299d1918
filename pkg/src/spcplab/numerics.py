"""Dense float64 kernels, percentile selection and seeded generators.

Every reduction here walks its summation axis left to right, so results are
reproducible across runs and independent of how samples are batched.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

DTYPE = np.float64


class ContractError(ValueError):
    """Raised when an operation's preconditions are violated."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=DTYPE)
    if m.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def as_vector(a, name: str = "vector") -> np.ndarray:
    v = np.asarray(a, dtype=DTYPE)
    if v.ndim != 1:
        raise ContractError(f"{name} must be 1-D, got shape {v.shape}")
    return v


def ordered_sum(a: np.ndarray, axis: int = 0) -> np.ndarray:
    """Sum along ``axis`` strictly left to right.

    numpy's own reductions switch to pairwise summation on contiguous axes,
    which makes a per-sample result depend on memory layout. This loop does not.
    """
    a = np.moveaxis(np.asarray(a, dtype=DTYPE), axis, 0)
    if a.shape[0] == 0:
        return np.zeros(a.shape[1:], dtype=DTYPE)
    acc = a[0].copy()
    for i in range(1, a.shape[0]):
        acc += a[i]
    return acc


def matvec(m, v) -> np.ndarray:
    m = as_matrix(m)
    v = as_vector(v)
    if m.shape[1] != v.shape[0]:
        raise ContractError(f"matvec: matrix is {m.shape}, vector has length {v.shape[0]}")
    return ordered_sum(m * v[None, :], axis=1)


def matmul(a, b) -> np.ndarray:
    """(n x m) @ (m x p), accumulated over m in index order."""
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul: shapes {a.shape} and {b.shape} do not chain")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=DTYPE)
    for i in range(a.shape[1]):
        out += a[:, i : i + 1] * b[i][None, :]
    return out


def hadamard_broadcast(w, h) -> np.ndarray:
    """out[i, j] = w[i, j] * h[i]."""
    w = as_matrix(w, "w")
    h = as_vector(h, "h")
    if h.shape[0] != w.shape[0]:
        raise ContractError(f"hadamard_broadcast: w is {w.shape}, h has length {h.shape[0]}")
    return w * h[:, None]


def logsumexp(v) -> float:
    v = np.asarray(v, dtype=DTYPE)
    if v.size == 0:
        raise ContractError("logsumexp of an empty vector")
    m = float(np.max(v))
    return m + math.log(float(ordered_sum(np.exp(v - m), axis=-1)))


def logsumexp_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise logsumexp of a 2-D array."""
    m = as_matrix(m)
    if m.shape[1] == 0:
        raise ContractError("logsumexp of an empty vector")
    top = np.max(m, axis=1)
    return top + np.log(ordered_sum(np.exp(m - top[:, None]), axis=1))


def nearest_rank(rho: float, n: int) -> int:
    """Rank from the top, clamp(ceil(rho/100 * n), 1, n), in exact arithmetic."""
    # decimal reading of rho, so e.g. 0.1 * 10 ranks exactly 1
    r = math.ceil(Fraction(repr(float(rho))) * n / 100)
    return min(max(r, 1), n)


def top_percentile(values, rho: float) -> float:
    """Value at the top-``rho`` percentile by nearest rank, counted from the largest."""
    flat = np.asarray(values, dtype=DTYPE).ravel()
    n = flat.size
    if n == 0:
        raise ContractError("top_percentile of an empty input")
    if not (0 < rho <= 100):
        raise ContractError(f"rho must lie in (0, 100], got {rho}")
    k = n - nearest_rank(rho, n)
    return float(np.partition(flat, k)[k])


def top_percentile_rows(values: np.ndarray, rho: float) -> np.ndarray:
    """``top_percentile`` applied to each row of a 2-D array."""
    values = as_matrix(values, "values")
    n = values.shape[1]
    if n == 0 or values.shape[0] == 0:
        raise ContractError("top_percentile of an empty input")
    if not (0 < rho <= 100):
        raise ContractError(f"rho must lie in (0, 100], got {rho}")
    k = n - nearest_rank(rho, n)
    return np.partition(values, k, axis=1)[:, k]


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """PCG64 stream for ``seed``; each distinct ``keys`` tuple is an independent substream.

    Substreams come from ``SeedSequence([seed, *keys])``, so adding a new consumer
    under a fresh key never perturbs existing ones.
    """
    if seed < 0:
        raise ContractError(f"seed must be non-negative, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))
