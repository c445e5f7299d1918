"""Cross-entropy training with SGD + momentum, optionally with contribution truncation.

One iteration on a mini-batch:

1. features h for the batch under the current parameters;
2. if truncating, fold the batch's mean top-rho contribution into the EMA threshold;
3. logits from the contributions clipped at the *updated* threshold (optionally LogitNorm'd);
4. exact gradient of mean cross-entropy, with the threshold held constant;
5. SGD step with coupled L2 weight decay.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .dataset import LabeledSet
from .mechanism import (
    SpcpConfig,
    ThresholdState,
    batch_threshold_stat,
    contributions_batch,
    ema_update,
    spcp_logits,
    truncate,
)
from .network import ForwardCache, Model, NonFiniteError, forward_features, init_model, logits
from .numerics import ContractError, as_matrix, make_rng, matmul, ordered_sum

log = logging.getLogger(__name__)

SCORE_FNS = ("msp", "energy")

_KEY_SHUFFLE = 21
_KEY_SUBSAMPLE = 22
_KEY_REPLAY = 23


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.1
    epochs: int = 30
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    hidden: tuple[int, ...] = ()
    final_activation: str = "relu"
    logitnorm: bool = False
    temperature: float = 0.04
    spcp: SpcpConfig = field(default_factory=SpcpConfig)
    score_fn: str = "energy"

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ContractError(f"lr0 must be positive, got {self.lr0}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be at least 1")
        if not 0 <= self.momentum < 1:
            raise ContractError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not self.weight_decay >= 0:
            raise ContractError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if not self.temperature > 0:
            raise ContractError(f"temperature must be positive, got {self.temperature}")
        if self.score_fn not in SCORE_FNS:
            raise ContractError(f"score_fn must be one of {SCORE_FNS}, got {self.score_fn!r}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def truncating(self) -> bool:
        return self.spcp.enabled and self.spcp.truncate_train

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["spcp"] = SpcpConfig(**d.get("spcp", {}))
        d["hidden"] = tuple(d.get("hidden", ()))
        return cls(**d)


@dataclass
class TrainLog:
    epochs: list[dict] = field(default_factory=list)
    batch_stats: list[float] = field(default_factory=list)  # threshold statistic fed to each EMA step
    wall_time: float = 0.0
    validation: dict | None = None  # final val_acc / val_auroc / val_fpr95 when validation sets are given

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_stats": self.batch_stats,
            "validation": self.validation,
            "wall_time": self.wall_time,
        }


@dataclass
class TrainCache:
    features: ForwardCache
    h: np.ndarray
    mask: np.ndarray | None  # n x D x K, True where the contribution passed untouched
    raw_logits: np.ndarray  # before LogitNorm
    norms: np.ndarray | None  # per-sample L2 norm of raw_logits, when LogitNorm is on


# --- losses and transforms --------------------------------------------------


def softmax_rows(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - np.max(z, axis=1, keepdims=True))
    return e / ordered_sum(e, axis=1)[:, None]


def cross_entropy(logits_vec, y: int) -> float:
    z = np.asarray(logits_vec, dtype=float)
    if not 0 <= y < z.shape[0]:
        raise ContractError(f"label {y} out of range for {z.shape[0]} classes")
    m = float(np.max(z))
    return m + math.log(float(ordered_sum(np.exp(z - m)))) - float(z[y])


def cross_entropy_batch(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    m = np.max(z, axis=1)
    lse = m + np.log(ordered_sum(np.exp(z - m[:, None]), axis=1))
    return lse - z[np.arange(z.shape[0]), y]


def _row_norms(f: np.ndarray) -> np.ndarray:
    return np.sqrt(ordered_sum(f * f, axis=1))


def logitnorm_transform(logits_vec, temperature: float) -> np.ndarray:
    """f / (temperature * ||f||_2)."""
    f = np.asarray(logits_vec, dtype=float)
    single = f.ndim == 1
    fb = f[None, :] if single else f
    norms = _row_norms(fb)
    if np.any(norms == 0):
        raise ContractError("LogitNorm of zero-norm logits")
    out = fb / (temperature * norms[:, None])
    return out[0] if single else out


def cosine_lr(epoch: int, epochs: int, lr0: float) -> float:
    if not 0 <= epoch < epochs:
        raise ContractError(f"epoch {epoch} outside [0, {epochs})")
    return max(0.5 * lr0 * (1 + math.cos(math.pi * epoch / epochs)), 0.0)


# --- forward / backward -----------------------------------------------------


def head_forward(
    model: Model, h: np.ndarray, feats: ForwardCache, lam: float | None, config: TrainConfig
) -> tuple[np.ndarray, TrainCache]:
    """Logits from precomputed features; ``lam=None`` means no truncation."""
    if lam is None:
        raw = logits(model.head, h)
        mask = None
    else:
        c = contributions_batch(h, model.head.W)
        mask = c <= lam
        raw = spcp_logits(truncate(c, lam), model.head.b)
    if not np.all(np.isfinite(raw)):
        raise NonFiniteError("non-finite value in classifier head")
    norms = None
    out = raw
    if config.logitnorm:
        norms = _row_norms(raw)
        if np.any(norms == 0):
            raise ContractError("LogitNorm of zero-norm logits")
        out = raw / (config.temperature * norms[:, None])
    return out, TrainCache(feats, h, mask, raw, norms)


def forward_train(
    model: Model, state: ThresholdState | None, x_batch, config: TrainConfig
) -> tuple[np.ndarray, TrainCache]:
    """Training-pathway logits. The threshold in ``state`` must already hold this batch's update."""
    h, feats = forward_features(model, x_batch)
    lam = state.lam if (state is not None and config.truncating) else None
    return head_forward(model, h, feats, lam, config)


def backward(model: Model, cache: TrainCache, labels, config: TrainConfig) -> list[np.ndarray]:
    """Gradient of mean cross-entropy w.r.t. ``model.parameters()``, in that order."""
    y = np.asarray(labels)
    z = cache.raw_logits
    n, K = z.shape
    if y.shape != (n,):
        raise ContractError(f"{y.shape[0] if y.ndim else 0} labels for a cached batch of {n}")
    out = z
    if cache.norms is not None:
        out = z / (config.temperature * cache.norms[:, None])
    g = softmax_rows(out)
    g[np.arange(n), y] -= 1.0
    g /= n
    if cache.norms is not None:
        # d(f / (T|f|)) / df = (I - u u^T) / (T |f|), u = f / |f|
        u = z / cache.norms[:, None]
        g = (g - u * ordered_sum(u * g, axis=1)[:, None]) / (config.temperature * cache.norms[:, None])

    h = cache.h
    W = model.head.W
    gc = g[:, None, :] if cache.mask is None else g[:, None, :] * cache.mask  # n x 1|D x K
    dW = ordered_sum(gc * h[:, :, None], axis=0)
    db = ordered_sum(g, axis=0)
    dh = ordered_sum(gc * W[None, :, :], axis=2)

    grads = [dW, db]
    feats = cache.features
    ga = dh
    last = len(model.layers) - 1
    for i in range(last, -1, -1):
        layer = model.layers[i]
        if i < last or model.final_activation == "relu":
            gz = ga * (feats.preacts[i] > 0)
        else:
            gz = ga
        grads = [matmul(feats.inputs[i].T, gz), ordered_sum(gz, axis=0)] + grads
        if i > 0:
            ga = matmul(gz, layer.w.T)
    return grads


def sgd_step(
    params: list[np.ndarray], grads: list[np.ndarray], velocity: list[np.ndarray],
    lr: float, momentum: float, weight_decay: float,
) -> None:
    """In place: g += wd * theta; v = momentum * v + g; theta -= lr * v."""
    if not (len(params) == len(grads) == len(velocity)):
        raise ContractError("parameter, gradient and velocity lists differ in length")
    for p, g, v in zip(params, grads, velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise ContractError(f"shape mismatch: param {p.shape}, grad {g.shape}, velocity {v.shape}")
        g = g + weight_decay * p
        v *= momentum
        v += g
        p -= lr * v


# --- training loop ----------------------------------------------------------


def _batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def replay_threshold(model: Model, data: LabeledSet, config: TrainConfig) -> float:
    """Threshold a frozen model would have accumulated over one epoch of EMA updates."""
    rho = config.spcp.rho(model.K)
    state = ThresholdState(config.spcp.lambda0, config.spcp.beta, rho, config.spcp.sample_per_batch)
    order = make_rng(config.seed, _KEY_REPLAY).permutation(data.n)
    sub = make_rng(config.seed, _KEY_REPLAY, 1)
    for idx in _batches(data.n, config.batch_size, order):
        h, _ = forward_features(model, data.features[idx])
        state = ema_update(state, batch_threshold_stat(h, model.head.W, rho, state.sample_per_batch, sub))
    return state.lam


def _validate(model: Model, config: TrainConfig, val_id: LabeledSet, val_ood) -> dict:
    """Final validation numbers, scored through the model's inference pathway."""
    from .metrics import accuracy, auroc, fpr_at_tpr
    from .scoring import default_pathway, pathway_logits, scores_from_logits

    pathway = default_pathway(model)
    z_id = pathway_logits(model, val_id.features, pathway)
    out = {"pathway": pathway, "val_acc": accuracy(np.argmax(z_id, axis=1), val_id.labels)}
    if val_ood is not None:
        s_id = scores_from_logits(z_id, config.score_fn)
        s_ood = scores_from_logits(pathway_logits(model, val_ood.features, pathway), config.score_fn)
        out["val_auroc"] = auroc(s_id, s_ood)
        out["val_fpr95"] = fpr_at_tpr(s_id, s_ood, 0.95)
    return out


def train(
    config: TrainConfig, train_set: LabeledSet, val_id: LabeledSet | None = None, val_ood=None,
) -> tuple[Model, TrainLog]:
    t0 = time.perf_counter()
    K = train_set.num_classes
    dims = [train_set.dim, *config.hidden]
    model = init_model(dims, K, config.seed, config.final_activation)
    params = model.parameters()
    velocity = [np.zeros_like(p) for p in params]
    shuffle = make_rng(config.seed, _KEY_SHUFFLE)
    subsample = make_rng(config.seed, _KEY_SUBSAMPLE)
    trainlog = TrainLog()

    state = None
    if config.truncating:
        state = ThresholdState(
            config.spcp.lambda0, config.spcp.beta, config.spcp.rho(K), config.spcp.sample_per_batch
        )

    x_all, y_all = train_set.features, train_set.labels
    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config.epochs, config.lr0)
        order = shuffle.permutation(train_set.n)
        loss_sum = 0.0
        correct = 0
        for b, idx in enumerate(_batches(train_set.n, config.batch_size, order)):
            x, y = x_all[idx], y_all[idx]
            try:
                h, feats = forward_features(model, x)
                lam = None
                if state is not None:
                    stat = batch_threshold_stat(h, model.head.W, state.rho, state.sample_per_batch, subsample)
                    state = ema_update(state, stat)
                    trainlog.batch_stats.append(stat)
                    lam = state.lam
                out, cache = head_forward(model, h, feats, lam, config)
            except (NonFiniteError, ContractError) as e:
                raise TrainingError(f"epoch {epoch}, batch {b}: {e}") from e
            losses = cross_entropy_batch(out, y)
            batch_loss = float(ordered_sum(losses) / losses.size)
            if not math.isfinite(batch_loss):
                raise TrainingError(f"epoch {epoch}, batch {b}: non-finite loss")
            loss_sum += float(ordered_sum(losses))
            correct += int(np.sum(np.argmax(out, axis=1) == y))
            sgd_step(params, backward(model, cache, y, config), velocity, lr, config.momentum, config.weight_decay)
        entry = {
            "epoch": epoch,
            "loss": loss_sum / train_set.n,
            "train_acc": correct / train_set.n,
            "lambda": None if state is None else state.lam,
            "lr": lr,
        }
        trainlog.epochs.append(entry)
        log.info(
            "epoch %d loss %.6f acc %.4f lambda %s lr %.6g",
            epoch, entry["loss"], entry["train_acc"], entry["lambda"], lr,
        )

    if state is not None:
        model.lambda_final = state.lam
    elif config.spcp.enabled and config.spcp.truncate_infer:
        model.lambda_final = replay_threshold(model, train_set, config)
    model.config = config.to_dict()
    if val_id is not None:
        trainlog.validation = _validate(model, config, val_id, val_ood)
    trainlog.wall_time = time.perf_counter() - t0
    return model, trainlog
