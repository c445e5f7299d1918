"""Synthetic ID / near-OOD / far-OOD generators and the CSV exchange format."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import DTYPE, ContractError, as_matrix, make_rng

# substream keys under a generator seed
_KEY_BLOBS = 1
_KEY_NEAR = 2
_KEY_FAR = 3
_KEY_NOISE = 4
_KEY_SPLIT = 5
_KEY_MEANS = 6

# Far-OOD rejection sampling gives up below this acceptance rate.
MIN_ACCEPTANCE = 0.01


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledSet:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        x = as_matrix(self.features, "features")
        y = np.asarray(self.labels)
        if x.shape[0] == 0:
            raise ContractError("labeled set is empty")
        if y.shape != (x.shape[0],):
            raise ContractError(f"labels shape {y.shape} does not match {x.shape[0]} rows")
        if not np.issubdtype(y.dtype, np.integer):
            raise ContractError("labels must be integers")
        if self.num_classes < 1 or y.min() < 0 or y.max() >= self.num_classes:
            raise ContractError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y.astype(np.int64))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class UnlabeledSet:
    features: np.ndarray
    name: str

    def __post_init__(self):
        x = as_matrix(self.features, "features")
        if x.shape[0] == 0:
            raise ContractError(f"unlabeled set {self.name!r} is empty")
        object.__setattr__(self, "features", x)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class BlobSpec:
    means: np.ndarray
    sigma: float
    n_per_class: int
    seed: int = 0

    def __post_init__(self):
        means = as_matrix(self.means, "means")
        if means.shape[0] < 1 or means.shape[1] < 1:
            raise ContractError("means must be a non-empty K x d matrix")
        if not self.sigma > 0:
            raise ContractError(f"sigma must be positive, got {self.sigma}")
        if self.n_per_class < 1:
            raise ContractError(f"n_per_class must be positive, got {self.n_per_class}")
        object.__setattr__(self, "means", means)

    @property
    def K(self) -> int:
        return self.means.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]


def axis_means(K: int, d: int, radius: float) -> np.ndarray:
    """Class k centred at radius * e_k. Needs K <= d."""
    if K > d:
        raise ContractError(f"axis_means needs K <= d, got K={K}, d={d}")
    means = np.zeros((K, d), dtype=DTYPE)
    means[np.arange(K), np.arange(K)] = radius
    return means


def random_means(K: int, d: int, radius: float, seed: int) -> np.ndarray:
    """K means drawn uniformly on the sphere of the given radius."""
    g = make_rng(seed, _KEY_MEANS).standard_normal((K, d))
    return radius * g / np.linalg.norm(g, axis=1, keepdims=True)


def gen_blobs(spec: BlobSpec) -> LabeledSet:
    rng = make_rng(spec.seed, _KEY_BLOBS)
    noise = rng.standard_normal((spec.K * spec.n_per_class, spec.d))
    labels = np.repeat(np.arange(spec.K), spec.n_per_class)
    x = spec.means[labels] + spec.sigma * noise
    return LabeledSet(x, labels, spec.K)


def gen_near_ood(spec: BlobSpec, n: int, seed: int, name: str = "near") -> UnlabeledSet:
    """Gaussian samples around the midpoints of every pair of class means."""
    if spec.K < 2:
        raise ContractError("near-OOD needs at least two classes")
    if n < 1:
        raise ContractError(f"sample count must be positive, got {n}")
    i, j = np.triu_indices(spec.K, k=1)
    centers = 0.5 * (spec.means[i] + spec.means[j])
    rng = make_rng(seed, _KEY_NEAR)
    pick = rng.integers(0, centers.shape[0], size=n)
    x = centers[pick] + spec.sigma * rng.standard_normal((n, spec.d))
    return UnlabeledSet(x, name)


def gen_far_ood(
    d: int, n: int, box_halfwidth: float, seed: int, id_radius: float, name: str = "far"
) -> UnlabeledSet:
    """Uniform samples on [-w, w]^d with the ball of radius ``id_radius`` cut out."""
    if d < 1 or n < 1:
        raise ContractError(f"far-OOD needs d >= 1 and n >= 1, got d={d}, n={n}")
    if not box_halfwidth > id_radius:
        raise ContractError(
            f"box half-width {box_halfwidth} must exceed the ID radius {id_radius}"
        )
    rng = make_rng(seed, _KEY_FAR)
    kept = []
    total = drawn = 0
    while total < n:
        chunk = max(2 * (n - total), 64)
        cand = rng.uniform(-box_halfwidth, box_halfwidth, size=(chunk, d))
        drawn += chunk
        ok = cand[np.linalg.norm(cand, axis=1) > id_radius]
        kept.append(ok)
        total += ok.shape[0]
        if drawn >= 1000 and total / drawn < MIN_ACCEPTANCE:
            raise ContractError(
                f"far-OOD acceptance {total / drawn:.4f} below {MIN_ACCEPTANCE}: the ID ball of "
                f"radius {id_radius} fills most of the box of half-width {box_halfwidth} in d={d}"
            )
    return UnlabeledSet(np.concatenate(kept)[:n], name)


def gen_gaussian_noise(d: int, n: int, seed: int, name: str = "noise") -> UnlabeledSet:
    if d < 1 or n < 1:
        raise ContractError(f"noise needs d >= 1 and n >= 1, got d={d}, n={n}")
    return UnlabeledSet(make_rng(seed, _KEY_NOISE).standard_normal((n, d)), name)


def data_radius(features: np.ndarray) -> float:
    return float(np.max(np.linalg.norm(features, axis=1)))


def stratified_split(data: LabeledSet, test_fraction: float, seed: int) -> tuple[LabeledSet, LabeledSet]:
    """Per class, floor(test_fraction * n_c) rows go to test and the rest to train."""
    if not 0 < test_fraction < 1:
        raise ContractError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = make_rng(seed, _KEY_SPLIT)
    train_idx, test_idx = [], []
    for k in range(data.num_classes):
        idx = np.flatnonzero(data.labels == k)
        idx = idx[rng.permutation(idx.size)]
        n_test = int(np.floor(test_fraction * idx.size))
        test_idx.append(np.sort(idx[:n_test]))
        train_idx.append(np.sort(idx[n_test:]))
    tr = np.concatenate(train_idx)
    te = np.concatenate(test_idx)
    if te.size == 0:
        raise ContractError("test split is empty; increase test_fraction")
    return (
        LabeledSet(data.features[tr], data.labels[tr], data.num_classes),
        LabeledSet(data.features[te], data.labels[te], data.num_classes),
    )


# --- CSV --------------------------------------------------------------------


def fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def _atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp-{os.getpid()}")
    try:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def save_csv(data: LabeledSet | UnlabeledSet, path) -> None:
    d = data.dim
    cols = [f"f{i}" for i in range(d)]
    lines = []
    if isinstance(data, LabeledSet):
        lines.append(",".join(["label", *cols]))
        for y, row in zip(data.labels, data.features):
            lines.append(",".join([str(int(y)), *map(fmt_float, row)]))
    else:
        lines.append(",".join(cols))
        for row in data.features:
            lines.append(",".join(map(fmt_float, row)))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def _read_rows(path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    return rows[0], [(i + 2, r) for i, r in enumerate(rows[1:]) if r]


def _check_feature_header(path, names: list[str]) -> int:
    if not names or names != [f"f{i}" for i in range(len(names))]:
        raise DataFormatError(f"{path}:1: malformed header, expected f0,f1,...")
    return len(names)


def _parse_floats(path, lineno: int, cells: list[str]) -> list[float]:
    out = []
    for c in cells:
        try:
            out.append(float(c))
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: non-numeric cell {c!r}") from None
    return out


def load_labeled_csv(path, num_classes: int | None = None) -> LabeledSet:
    """Read a labeled CSV. Without ``num_classes``, K is taken as max label + 1."""
    header, rows = _read_rows(path)
    if not header or header[0] != "label":
        raise DataFormatError(f"{path}:1: malformed header, first column must be 'label'")
    d = _check_feature_header(path, header[1:])
    labels, feats = [], []
    for lineno, r in rows:
        if len(r) != d + 1:
            raise DataFormatError(f"{path}:{lineno}: expected {d + 1} cells, got {len(r)}")
        try:
            y = int(r[0])
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: non-integer label {r[0]!r}") from None
        if y < 0 or (num_classes is not None and y >= num_classes):
            raise DataFormatError(f"{path}:{lineno}: label {y} out of range")
        labels.append(y)
        feats.append(_parse_floats(path, lineno, r[1:]))
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    K = num_classes if num_classes is not None else max(labels) + 1
    return LabeledSet(np.array(feats, dtype=DTYPE), np.array(labels, dtype=np.int64), K)


def load_unlabeled_csv(path, name: str | None = None) -> UnlabeledSet:
    header, rows = _read_rows(path)
    d = _check_feature_header(path, header)
    feats = []
    for lineno, r in rows:
        if len(r) != d:
            raise DataFormatError(f"{path}:{lineno}: expected {d} cells, got {len(r)}")
        feats.append(_parse_floats(path, lineno, r))
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return UnlabeledSet(np.array(feats, dtype=DTYPE), name or Path(path).stem)
