from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spcplab.metrics import EvalReport, OodResult, accuracy, auroc, choose_tau, fpr_at_tpr
from spcplab.numerics import ContractError


def pairwise_auroc(a, b):
    wins = Fraction(0)
    for x in a:
        for y in b:
            wins += 1 if x > y else Fraction(1, 2) if x == y else 0
    return float(wins / (len(a) * len(b)))


def scan_fpr(a, b, level):
    """Largest threshold, scanned over the ID scores, whose ID recall (score >= t) reaches the level."""
    best = None
    for t in sorted(set(a), reverse=True):
        if Fraction(sum(1 for x in a if x >= t), len(a)) >= Fraction(str(level)):
            best = t
            break
    return sum(1 for y in b if y >= best) / len(b)


def score_sets(g, tied):
    n1, n0 = int(g.integers(1, 501)), int(g.integers(1, 501))
    if tied:
        return g.integers(0, 5, n1).astype(float), g.integers(0, 5, n0).astype(float)
    return g.standard_normal(n1) + 0.5, g.standard_normal(n0)


class TestAuroc:
    def test_separated(self):
        assert auroc([2, 3], [1]) == 1.0

    def test_single_tie(self):
        assert auroc([1], [1]) == 0.5

    def test_mixed(self):
        assert auroc([1, 3], [2]) == 0.5

    def test_empty(self):
        with pytest.raises(ContractError):
            auroc([], [1])

    def test_pairwise_oracle(self):
        g = np.random.default_rng(0)
        for i in range(40):
            a, b = score_sets(g, tied=i % 2 == 0)
            assert auroc(a, b) == pairwise_auroc(a, b)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(-3, 3), min_size=1, max_size=40), st.lists(st.integers(-3, 3), min_size=1, max_size=40))
    def test_complement(self, a, b):
        assert auroc(a, b) + auroc(b, a) == 1.0

    def test_monotone_transform(self, rng):
        a, b = rng.standard_normal(200), rng.standard_normal(150) - 0.3
        assert auroc(a, b) == auroc(np.exp(a), np.exp(b)) == auroc(3 * a + 7, 3 * b + 7)


class TestTau:
    def test_one_to_hundred(self):
        assert choose_tau(np.arange(1, 101), 0.95) == 6

    def test_full_level(self, rng):
        s = rng.standard_normal(13)
        assert choose_tau(s, 1.0) == s.min()

    def test_singleton(self):
        assert choose_tau([4.2]) == 4.2

    def test_recall_reached(self, rng):
        s = rng.standard_normal(37)
        assert np.mean(s >= choose_tau(s, 0.95)) >= 0.95

    def test_level_range(self):
        with pytest.raises(ContractError):
            choose_tau([1.0], 0.0)


class TestFpr:
    def test_hand(self):
        assert fpr_at_tpr(np.arange(1, 101), [5, 6, 7], 0.95) == 2 / 3

    def test_disjoint(self):
        assert fpr_at_tpr([10, 11, 12], [1, 2, 3]) == 0.0

    def test_scan_oracle(self):
        g = np.random.default_rng(1)
        for i in range(40):
            a, b = score_sets(g, tied=i % 2 == 0)
            assert fpr_at_tpr(a, b, 0.95) == scan_fpr(list(a), list(b), 0.95)

    def test_copy_distribution(self):
        g = np.random.default_rng(2)
        a, b = g.standard_normal(10_000), g.standard_normal(10_000)
        assert abs(fpr_at_tpr(a, b, 0.95) - 0.95) < 0.05

    def test_level_ordering(self, rng):
        a, b = rng.standard_normal(300), rng.standard_normal(300) - 1
        assert fpr_at_tpr(a, b, 0.95) <= fpr_at_tpr(a, b, 0.99)


class TestAccuracy:
    def test_cases(self):
        assert accuracy([0, 1, 2], [0, 1, 2]) == 1.0
        assert accuracy([1, 2, 0], [0, 1, 2]) == 0.0
        assert accuracy([0, 1, 2, 0, 0], [0, 1, 2, 1, 1]) == 0.6

    def test_mismatch(self):
        with pytest.raises(ContractError):
            accuracy([0, 1], [0])


class TestReport:
    def test_group_means(self):
        rep = EvalReport(
            0.9,
            [OodResult("near_a", 0.6, 0.5, "near"), OodResult("near_b", 0.8, 0.3, "near"),
             OodResult("far", 0.9, 0.1, "far")],
        )
        d = rep.to_dict()
        assert d["groups"]["near"] == {"auroc": (0.6 + 0.8) / 2, "fpr95": (0.5 + 0.3) / 2}
        assert d["groups"]["far"] == {"auroc": 0.9, "fpr95": 0.1}
        assert d["ood"][0] == {"name": "near_a", "auroc": 0.6, "fpr95": 0.5}
        assert set(d) == {"id_acc", "ood", "groups", "config"}
