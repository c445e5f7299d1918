import numpy as np
import pytest

from spcplab.network import ClassifierHead, Layer, Model


def random_model(rng, d, hidden, K, final_activation="relu", scale=1.0):
    dims = [d, *hidden]
    layers = [
        Layer(scale * rng.standard_normal((a, b)), 0.1 * rng.standard_normal(b))
        for a, b in zip(dims[:-1], dims[1:])
    ]
    head = ClassifierHead(scale * rng.standard_normal((dims[-1], K)), rng.standard_normal(K))
    return Model(layers, head, None, final_activation, {}, 0)


def random_model_spec(rng, max_layers=3, max_dim=8):
    """(d, hidden, K) with at most ``max_layers`` affine layers in total, D and K <= max_dim."""
    n_hidden = int(rng.integers(0, max_layers))
    d = int(rng.integers(1, max_dim + 1))
    hidden = [int(rng.integers(1, max_dim + 1)) for _ in range(n_hidden)]
    K = int(rng.integers(1, max_dim + 1))
    return d, hidden, K


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
