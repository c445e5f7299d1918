"""MLP feature extractor plus linear classifier head, and the JSON model file."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import _atomic_write_text
from .numerics import DTYPE, ContractError, as_matrix, as_vector, make_rng, matmul, ordered_sum

MODEL_FORMAT_VERSION = 1

# He initialisation: weights ~ N(0, INIT_GAIN / fan_in), biases zero. Applied to the head too.
INIT_GAIN = 2.0
_KEY_INIT = 11

ACTIVATIONS = ("relu", "identity")


class NonFiniteError(FloatingPointError):
    pass


class ModelFileError(ValueError):
    pass


@dataclass
class Layer:
    w: np.ndarray  # fan_in x fan_out
    b: np.ndarray

    def __post_init__(self):
        self.w = as_matrix(self.w, "layer weight")
        self.b = as_vector(self.b, "layer bias")
        if self.b.shape[0] != self.w.shape[1]:
            raise ContractError(f"layer bias length {self.b.shape[0]} != fan_out {self.w.shape[1]}")


@dataclass
class ClassifierHead:
    W: np.ndarray  # D x K
    b: np.ndarray

    def __post_init__(self):
        self.W = as_matrix(self.W, "head weight")
        self.b = as_vector(self.b, "head bias")
        if self.b.shape[0] != self.W.shape[1]:
            raise ContractError(f"head bias length {self.b.shape[0]} != K = {self.W.shape[1]}")

    @property
    def D(self) -> int:
        return self.W.shape[0]

    @property
    def K(self) -> int:
        return self.W.shape[1]


@dataclass
class Model:
    layers: list[Layer]
    head: ClassifierHead
    lambda_final: float | None = None  # None means truncation disabled
    final_activation: str = "relu"
    config: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.final_activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.final_activation!r}")
        prev = None
        for i, layer in enumerate(self.layers):
            if prev is not None and layer.w.shape[0] != prev:
                raise ContractError(f"layer {i} expects {layer.w.shape[0]} inputs, previous gives {prev}")
            prev = layer.w.shape[1]
        if prev is not None and prev != self.head.D:
            raise ContractError(f"extractor outputs {prev} features, head expects {self.head.D}")
        if self.lambda_final is not None and not math.isfinite(self.lambda_final):
            raise ContractError("lambda_final must be finite or None")

    @property
    def input_dim(self) -> int:
        return self.layers[0].w.shape[0] if self.layers else self.head.D

    @property
    def K(self) -> int:
        return self.head.K

    def parameters(self) -> list[np.ndarray]:
        """Flat parameter list in a fixed order: each layer (w, b), then head (W, b)."""
        out = []
        for layer in self.layers:
            out += [layer.w, layer.b]
        return out + [self.head.W, self.head.b]

    def copy(self) -> "Model":
        return Model(
            [Layer(l.w.copy(), l.b.copy()) for l in self.layers],
            ClassifierHead(self.head.W.copy(), self.head.b.copy()),
            self.lambda_final,
            self.final_activation,
            json.loads(json.dumps(self.config)),
            self.seed,
        )


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each layer
    preacts: list[np.ndarray]  # affine output of each layer
    h: np.ndarray


def init_model(dims: list[int], K: int, seed: int, final_activation: str = "relu") -> Model:
    """``dims`` = [d, hidden..., D]; a single entry gives a zero-depth extractor (h = x)."""
    if len(dims) < 1 or K < 1 or any(int(d) < 1 for d in dims):
        raise ContractError(f"invalid dimensions dims={dims}, K={K}")
    rng = make_rng(seed, _KEY_INIT)
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = rng.standard_normal((fan_in, fan_out)) * math.sqrt(INIT_GAIN / fan_in)
        layers.append(Layer(w, np.zeros(fan_out)))
    D = dims[-1]
    head = ClassifierHead(rng.standard_normal((D, K)) * math.sqrt(INIT_GAIN / D), np.zeros(K))
    return Model(layers, head, None, final_activation, {}, seed)


def _check_finite(a: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"non-finite value in {where}")


def forward_features(model: Model, x) -> tuple[np.ndarray, ForwardCache]:
    x = as_matrix(x, "input batch")
    if x.shape[1] != model.input_dim:
        raise ContractError(f"input has {x.shape[1]} features, model expects {model.input_dim}")
    inputs, preacts = [], []
    a = x
    last = len(model.layers) - 1
    for i, layer in enumerate(model.layers):
        inputs.append(a)
        z = matmul(a, layer.w) + layer.b[None, :]
        _check_finite(z, f"layer {i}")
        preacts.append(z)
        if i < last or model.final_activation == "relu":
            a = np.maximum(z, 0.0)
        else:
            a = z
    return a, ForwardCache(inputs, preacts, a)


def logits(head: ClassifierHead, h) -> np.ndarray:
    """f_k = sum_d W[d, k] h[d] + b[k]; ``h`` may be one vector or an n x D batch."""
    h = np.asarray(h, dtype=DTYPE)
    single = h.ndim == 1
    hb = h[None, :] if single else as_matrix(h, "features")
    if hb.shape[1] != head.D:
        raise ContractError(f"features have length {hb.shape[1]}, head expects {head.D}")
    # same products and summation order as summing a contribution matrix's columns
    out = ordered_sum(hb[:, :, None] * head.W[None, :, :], axis=1) + head.b[None, :]
    return out[0] if single else out


# --- model file -------------------------------------------------------------


def _floats(a: np.ndarray) -> list[float]:
    return [float(v) for v in np.asarray(a).ravel()]


def model_to_dict(model: Model) -> dict:
    return {
        "version": MODEL_FORMAT_VERSION,
        "config": model.config,
        "extractor": {
            "final_activation": model.final_activation,
            "layers": [
                {"rows": l.w.shape[0], "cols": l.w.shape[1], "w": _floats(l.w), "b": _floats(l.b)}
                for l in model.layers
            ],
        },
        "head": {"D": model.head.D, "K": model.head.K, "w": _floats(model.head.W), "b": _floats(model.head.b)},
        "lambda_final": model.lambda_final,
        "seed": model.seed,
    }


def dumps_model(model: Model) -> str:
    for i, p in enumerate(model.parameters()):
        if not np.all(np.isfinite(p)):
            raise NonFiniteError(f"parameter {i} has non-finite entries; refusing to serialize")
    # float repr is the shortest string that round-trips, so the file is bit-exact
    return json.dumps(model_to_dict(model), indent=1) + "\n"


def serialize(model: Model, path) -> None:
    _atomic_write_text(Path(path), dumps_model(model))


def _get(d: dict, key: str, where: str):
    if not isinstance(d, dict) or key not in d:
        raise ModelFileError(f"schema error: missing '{key}' in {where}")
    return d[key]


def _array(values, shape: tuple[int, ...], where: str) -> np.ndarray:
    if not isinstance(values, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in values
    ):
        raise ModelFileError(f"schema error: {where} must be a list of numbers")
    a = np.array(values, dtype=DTYPE)
    if a.size != math.prod(shape):
        raise ModelFileError(f"schema error: {where} has {a.size} values, expected {math.prod(shape)}")
    if not np.all(np.isfinite(a)):
        raise ModelFileError(f"non-finite value in {where}")
    return a.reshape(shape)


def model_from_dict(doc: dict) -> Model:
    version = _get(doc, "version", "model file")
    if version != MODEL_FORMAT_VERSION:
        raise ModelFileError(f"version mismatch: file has {version}, reader supports {MODEL_FORMAT_VERSION}")
    ext = _get(doc, "extractor", "model file")
    layers = []
    for i, ld in enumerate(_get(ext, "layers", "extractor")):
        r, c = int(_get(ld, "rows", f"layer {i}")), int(_get(ld, "cols", f"layer {i}"))
        layers.append(Layer(_array(_get(ld, "w", f"layer {i}"), (r, c), f"layer {i} w"),
                            _array(_get(ld, "b", f"layer {i}"), (c,), f"layer {i} b")))
    head = _get(doc, "head", "model file")
    D, K = int(_get(head, "D", "head")), int(_get(head, "K", "head"))
    lam = _get(doc, "lambda_final", "model file")
    if lam is not None and (isinstance(lam, bool) or not isinstance(lam, (int, float)) or not math.isfinite(lam)):
        raise ModelFileError("lambda_final must be a finite number or null")
    try:
        return Model(
            layers,
            ClassifierHead(_array(_get(head, "w", "head"), (D, K), "head w"), _array(_get(head, "b", "head"), (K,), "head b")),
            None if lam is None else float(lam),
            ext.get("final_activation", "relu"),
            _get(doc, "config", "model file"),
            int(_get(doc, "seed", "model file")),
        )
    except ContractError as e:
        raise ModelFileError(f"schema error: {e}") from None


def deserialize(path) -> Model:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ModelFileError(f"{path}: not valid JSON ({e})") from None
    return model_from_dict(doc)
