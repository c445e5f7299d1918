"""Central finite-difference check of trainer.backward, shared by unit and acceptance tests."""

import numpy as np

from spcplab.network import forward_features
from spcplab.numerics import ordered_sum
from spcplab.trainer import backward, cross_entropy_batch, head_forward


def _loss_and_pattern(model, x, y, lam, config):
    h, feats = forward_features(model, x)
    out, cache = head_forward(model, h, feats, lam, config)
    relu = tuple((p > 0).tobytes() for p in feats.preacts)
    mask = None if cache.mask is None else cache.mask.tobytes()
    losses = cross_entropy_batch(out, y)
    return float(ordered_sum(losses) / losses.size), (relu, mask)


def grad_check(model, x, y, lam, config, step=1e-5, tol=1e-4):
    """Returns (worst relative error, skipped count, total count).

    A parameter is skipped when the +/- step moves some contribution across the
    truncation threshold or some pre-activation across zero: the loss has a kink
    there and the central difference is not a derivative.
    """
    h, feats = forward_features(model, x)
    _, cache = head_forward(model, h, feats, lam, config)
    grads = backward(model, cache, y, config)
    _, base = _loss_and_pattern(model, x, y, lam, config)
    worst, skipped, total = 0.0, 0, 0
    for p, g in zip(model.parameters(), grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            total += 1
            orig = flat[i]
            flat[i] = orig + step
            lp, pat_p = _loss_and_pattern(model, x, y, lam, config)
            flat[i] = orig - step
            lm, pat_m = _loss_and_pattern(model, x, y, lam, config)
            flat[i] = orig
            if pat_p != base or pat_m != base:
                skipped += 1
                continue
            fd = (lp - lm) / (2 * step)
            err = abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), 1e-6)
            worst = max(worst, err)
    return worst, skipped, total
