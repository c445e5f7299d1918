import json

import numpy as np
import pytest

from conftest import random_model
from spcplab.mechanism import contribution_matrix
from spcplab.network import (
    INIT_GAIN,
    ClassifierHead,
    Layer,
    Model,
    ModelFileError,
    NonFiniteError,
    deserialize,
    dumps_model,
    forward_features,
    init_model,
    logits,
    serialize,
)
from spcplab.numerics import ContractError


def scalar_forward(model, x):
    a = list(x)
    last = len(model.layers) - 1
    for li, layer in enumerate(model.layers):
        out = []
        for j in range(layer.w.shape[1]):
            z = 0.0
            for i in range(layer.w.shape[0]):
                z += a[i] * layer.w[i, j]
            z += layer.b[j]
            if li < last or model.final_activation == "relu":
                z = max(z, 0.0)
            out.append(z)
        a = out
    return np.array(a)


class TestForward:
    def test_zero_depth_identity(self, rng):
        m = init_model([3], 2, seed=0)
        x = rng.standard_normal((4, 3))
        h, _ = forward_features(m, x)
        np.testing.assert_array_equal(h, x)

    def test_relu(self):
        m = Model([Layer(np.eye(2), np.zeros(2))], ClassifierHead(np.eye(2), np.zeros(2)))
        h, _ = forward_features(m, [[-1.0, 2.0]])
        np.testing.assert_array_equal(h, [[0.0, 2.0]])

    def test_two_layers_vs_scalar_loop(self, rng):
        m = random_model(rng, 5, [7, 4], 3)
        x = rng.standard_normal((6, 5))
        h, _ = forward_features(m, x)
        for i in range(6):
            np.testing.assert_allclose(h[i], scalar_forward(m, x[i]), atol=1e-14, rtol=0)

    def test_identity_final_activation(self, rng):
        m = random_model(rng, 3, [4], 2, final_activation="identity")
        x = rng.standard_normal((5, 3))
        h, cache = forward_features(m, x)
        np.testing.assert_array_equal(h, cache.preacts[-1])
        assert np.any(h < 0)

    def test_batch_independence(self, rng):
        m = random_model(rng, 4, [6, 5], 3)
        x = rng.standard_normal((9, 4))
        h, _ = forward_features(m, x)
        for i in range(9):
            alone, _ = forward_features(m, x[i : i + 1])
            np.testing.assert_array_equal(alone[0], h[i])

    def test_dimension_mismatch(self):
        with pytest.raises(ContractError):
            forward_features(init_model([3], 2, 0), np.ones((1, 4)))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_names_layer(self):
        # layer 0 stays finite (1e301), layer 1 overflows
        m = Model([Layer(np.full((1, 1), 1e300), np.zeros(1)), Layer(np.full((1, 1), 1e308), np.zeros(1))],
                  ClassifierHead(np.ones((1, 2)), np.zeros(2)))
        with pytest.raises(NonFiniteError, match="layer 1"):
            forward_features(m, [[10.0]])


class TestLogits:
    def test_bias_only(self):
        np.testing.assert_array_equal(logits(ClassifierHead(np.zeros((3, 2)), [1.0, 2.0]), np.ones(3)), [1, 2])

    def test_identity(self):
        np.testing.assert_array_equal(logits(ClassifierHead(np.eye(2), np.zeros(2)), [3.0, 4.0]), [3, 4])

    def test_contribution_sum(self, rng):
        head = ClassifierHead(rng.standard_normal((6, 4)), rng.standard_normal(4))
        for _ in range(20):
            h = rng.standard_normal(6)
            c = contribution_matrix(h, head.W)
            expected = [sum(c[d, k] for d in range(6)) + head.b[k] for k in range(4)]
            np.testing.assert_allclose(logits(head, h), expected, atol=1e-12, rtol=0)

    def test_mismatch(self):
        with pytest.raises(ContractError):
            logits(ClassifierHead(np.zeros((3, 2)), np.zeros(2)), np.ones(2))


class TestInit:
    def test_bias_zero(self):
        m = init_model([4, 8, 5], 3, seed=1)
        assert all(np.all(l.b == 0) for l in m.layers)
        assert np.all(m.head.b == 0)

    def test_deterministic(self):
        a, b = init_model([4, 8], 3, seed=2), init_model([4, 8], 3, seed=2)
        for p, q in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(p, q)

    def test_fan_in_std(self):
        m = init_model([100, 200], 2, seed=3)
        w = m.layers[0].w
        assert w.size >= 10_000
        target = np.sqrt(INIT_GAIN / 100)
        assert abs(w.std() / target - 1) < 0.1
        assert abs(w.mean()) < 0.1 * target

    def test_invalid(self):
        with pytest.raises(ContractError):
            init_model([3, 0], 2, 0)


class TestModelFile:
    def test_roundtrip_bit_identical_logits(self, tmp_path, rng):
        m = random_model(rng, 5, [6], 4)
        m.lambda_final = 0.123456789012345678
        m.config = {"note": "x"}
        serialize(m, tmp_path / "m.json")
        back = deserialize(tmp_path / "m.json")
        x = rng.standard_normal((100, 5))
        ha, _ = forward_features(m, x)
        hb, _ = forward_features(back, x)
        np.testing.assert_array_equal(logits(m.head, ha), logits(back.head, hb))
        assert back.lambda_final == m.lambda_final
        assert back.config == m.config

    def test_disabled_lambda(self, tmp_path, rng):
        m = random_model(rng, 2, [], 2)
        serialize(m, tmp_path / "m.json")
        doc = json.loads((tmp_path / "m.json").read_text())
        assert doc["lambda_final"] is None
        assert deserialize(tmp_path / "m.json").lambda_final is None

    def test_fields(self, rng):
        doc = json.loads(dumps_model(random_model(rng, 2, [3], 2)))
        assert set(doc) == {"version", "config", "extractor", "head", "lambda_final", "seed"}
        assert set(doc["extractor"]["layers"][0]) == {"rows", "cols", "w", "b"}
        assert set(doc["head"]) == {"D", "K", "w", "b"}

    def test_missing_head(self, tmp_path, rng):
        doc = json.loads(dumps_model(random_model(rng, 2, [], 2)))
        del doc["head"]
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(ModelFileError, match="schema error: missing 'head'"):
            deserialize(tmp_path / "m.json")

    def test_version_mismatch(self, tmp_path, rng):
        doc = json.loads(dumps_model(random_model(rng, 2, [], 2)))
        doc["version"] = 99
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(ModelFileError, match="version mismatch"):
            deserialize(tmp_path / "m.json")

    def test_non_finite(self, tmp_path, rng):
        text = dumps_model(random_model(rng, 1, [], 2)).replace('"b": [', '"b": [NaN, ', 1)
        (tmp_path / "m.json").write_text(text)
        with pytest.raises(ModelFileError):
            deserialize(tmp_path / "m.json")

    def test_wrong_size(self, tmp_path, rng):
        doc = json.loads(dumps_model(random_model(rng, 2, [], 2)))
        doc["head"]["w"] = doc["head"]["w"][:-1]
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(ModelFileError, match="head w"):
            deserialize(tmp_path / "m.json")
