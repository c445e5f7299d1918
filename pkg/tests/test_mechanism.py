import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_model, random_model_spec
from spcplab.mechanism import (
    ALL,
    SpcpConfig,
    ThresholdState,
    batch_threshold_stat,
    contribution_ablation_oracle,
    contribution_matrix,
    ema_update,
    rho_from_norm,
    spcp_logits,
    truncate,
)
from spcplab.network import ClassifierHead, forward_features, logits
from spcplab.numerics import ContractError, top_percentile


class TestContributionMatrix:
    def test_arithmetic(self):
        assert contribution_matrix([2.0], [[0.5]])[0, 0] == 1.0

    def test_zero_features(self, rng):
        np.testing.assert_array_equal(contribution_matrix(np.zeros(4), rng.standard_normal((4, 3))), 0.0)

    def test_matches_ablation_oracle(self, rng):
        for _ in range(10):
            d, hidden, K = random_model_spec(rng)
            m = random_model(rng, d, hidden, K)
            x = rng.standard_normal(d)
            h, _ = forward_features(m, x[None])
            c = contribution_matrix(h[0], m.head.W)
            for i in range(m.head.D):
                for j in range(K):
                    assert abs(c[i, j] - contribution_ablation_oracle(m, x, i, j, j)) < 1e-12


class TestAblationOracle:
    def test_off_class_is_zero(self, rng):
        m = random_model(rng, 3, [], 3)
        assert contribution_ablation_oracle(m, rng.standard_normal(3), 0, 1, 2) == 0.0

    def test_hand(self):
        from spcplab.network import Model

        m = Model([], ClassifierHead(np.array([[3.0, 0.0]]), np.zeros(2)))
        assert contribution_ablation_oracle(m, [-1.0], 0, 0, 0) == -3.0

    def test_index_range(self, rng):
        m = random_model(rng, 2, [], 2)
        with pytest.raises(ContractError):
            contribution_ablation_oracle(m, [0.0, 0.0], 2, 0, 0)

    def test_leaves_model_untouched(self, rng):
        m = random_model(rng, 2, [3], 2)
        before = m.head.W.copy()
        contribution_ablation_oracle(m, [1.0, 1.0], 1, 1, 1)
        np.testing.assert_array_equal(m.head.W, before)


class TestTruncate:
    def test_clip(self):
        assert truncate(np.array([2.0]), 1.5)[0] == 1.5

    def test_huge_lambda_identity(self, rng):
        c = rng.uniform(-1e6, 1e6, (5, 4)) * 0.999
        np.testing.assert_array_equal(truncate(c, 1e9), c)

    def test_one_sided(self):
        np.testing.assert_array_equal(truncate(np.array([-5.0, 0.0, 5.0]), 0.0), [-5, 0, 0])

    def test_disabled(self, rng):
        c = rng.standard_normal((3, 3)) * 100
        np.testing.assert_array_equal(truncate(c, None), c)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(-3, 3))
    def test_bound_and_passthrough(self, seed, lam):
        c = np.random.default_rng(seed).standard_normal((6, 5))
        t = truncate(c, lam)
        assert np.all(t <= lam)
        keep = c <= lam
        np.testing.assert_array_equal(t[keep], c[keep])


class TestSpcpLogits:
    def test_disabled_equals_vanilla_bit_exact(self, rng):
        head = ClassifierHead(rng.standard_normal((7, 5)), rng.standard_normal(5))
        h = rng.standard_normal((11, 7))
        for i in range(11):
            c = contribution_matrix(h[i], head.W)
            np.testing.assert_array_equal(spcp_logits(truncate(c, None), head.b), logits(head, h[i]))

    def test_bias_passthrough(self):
        np.testing.assert_array_equal(spcp_logits(np.zeros((3, 2)), [1.0, -1.0]), [1, -1])

    def test_min_then_sum_loop(self, rng):
        head = ClassifierHead(rng.standard_normal((5, 3)), rng.standard_normal(3))
        h = rng.standard_normal(5)
        lam = 0.3
        expected = []
        for k in range(3):
            acc = 0.0
            for d in range(5):
                acc += min(head.W[d, k] * h[d], lam)
            expected.append(acc + head.b[k])
        np.testing.assert_allclose(
            spcp_logits(truncate(contribution_matrix(h, head.W), lam), head.b), expected, atol=1e-14, rtol=0
        )

    def test_mismatch(self):
        with pytest.raises(ContractError):
            spcp_logits(np.zeros((2, 3)), np.zeros(2))


class TestRho:
    def test_cifar10_optimum(self):
        assert rho_from_norm(3.0, 10) == 30

    def test_cifar100_optimum(self):
        assert rho_from_norm(0.5, 100) == 0.5

    def test_zero_disables(self):
        assert rho_from_norm(0.0, 10) == 0
        assert not SpcpConfig(rho_norm=0).enabled

    def test_clamped(self):
        assert rho_from_norm(50, 10) == 100

    def test_negative(self):
        with pytest.raises(ContractError):
            rho_from_norm(-0.1, 10)

    def test_defaults(self):
        c = SpcpConfig()
        assert (c.beta, c.lambda0, c.sample_per_batch) == (0.999, 1000.0, ALL)


class TestBatchStat:
    def test_singleton(self, rng):
        W, h = rng.standard_normal((4, 3)), rng.standard_normal((1, 4))
        assert batch_threshold_stat(h, W, 25, ALL, None) == top_percentile(contribution_matrix(h[0], W), 25)

    def test_mean_of_two(self):
        # D=1, K=1: the contribution is w * h itself
        W = np.array([[1.0]])
        assert batch_threshold_stat(np.array([[2.0], [4.0]]), W, 100, ALL, None) == 3.0

    def test_all_vs_loop(self, rng):
        W, h = rng.standard_normal((6, 4)), rng.standard_normal((13, 6))
        loop = sum(top_percentile(contribution_matrix(h[i], W), 12.5) for i in range(13)) / 13
        assert abs(batch_threshold_stat(h, W, 12.5, ALL, None) - loop) < 1e-14

    def test_permutation_invariant(self, rng):
        W, h = rng.standard_normal((6, 4)), rng.standard_normal((20, 6))
        a = batch_threshold_stat(h, W, 30, ALL, None)
        b = batch_threshold_stat(h[rng.permutation(20)], W, 30, ALL, None)
        assert a == b

    def test_subsample_deterministic(self, rng):
        from spcplab.numerics import make_rng

        W, h = rng.standard_normal((6, 4)), rng.standard_normal((64, 6))
        a = batch_threshold_stat(h, W, 30, 16, make_rng(5))
        b = batch_threshold_stat(h, W, 30, 16, make_rng(5))
        assert a == b
        assert a != batch_threshold_stat(h, W, 30, ALL, None)

    def test_empty(self):
        with pytest.raises(ContractError):
            batch_threshold_stat(np.zeros((0, 2)), np.zeros((2, 2)), 10, ALL, None)


class TestEma:
    def test_arithmetic(self):
        assert ema_update(ThresholdState(10.0, 0.5, 10.0), 2.0).lam == 6.0

    def test_beta_one_fixed(self):
        s = ThresholdState(1000.0, 1.0, 10.0)
        for v in (3.0, -7.0, 1e5):
            s = ema_update(s, v)
        assert s.lam == 1000.0
        assert s.step == 3

    def test_pure(self):
        s = ThresholdState(10.0, 0.5, 10.0)
        ema_update(s, 0.0)
        assert s.lam == 10.0 and s.step == 0

    @pytest.mark.parametrize("T", [1, 10, 1000, 10_000])
    @pytest.mark.parametrize("beta", [0.5, 0.9, 0.999])
    def test_closed_form(self, T, beta):
        lam0, v = 1000.0, 2.5
        s = ThresholdState(lam0, beta, 10.0)
        for _ in range(T):
            s = ema_update(s, v)
        closed = beta**T * lam0 + (1 - beta**T) * v
        assert abs(s.lam - closed) <= 1e-12 * abs(closed)

    def test_non_finite(self):
        with pytest.raises(ContractError):
            ema_update(ThresholdState(1.0, 0.5, 10.0), float("nan"))
