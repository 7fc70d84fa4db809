import numpy as np
import pytest

from sci_index.evaluation import (
    ComponentTable,
    ScoredSet,
    SingleClassError,
    auc,
    bootstrap_ci,
    evaluate,
    rates_at,
    roc_curve,
    score_additive,
    score_component,
    score_sci,
    trapezoid_auc,
    youden_threshold,
)
from sci_index.metrics import SciComponents, Weights


def _set(scores, labels):
    return ScoredSet(np.asarray(scores, float), np.asarray(labels, int))


class TestAuc:
    def test_perfect(self):
        assert auc(_set([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])) == 1.0

    def test_random_near_half(self):
        rng = np.random.default_rng(0)
        s = _set(rng.random(20_000), rng.integers(0, 2, 20_000))
        assert auc(s) == pytest.approx(0.5, abs=0.02)

    def test_ties_count_half(self):
        assert auc(_set([0.5, 0.5], [0, 1])) == 0.5

    def test_brute_force(self):
        rng = np.random.default_rng(4)
        scores = rng.integers(0, 5, 60).astype(float)
        labels = rng.integers(0, 2, 60)
        pos, neg = scores[labels == 1], scores[labels == 0]
        expected = np.mean([(p > n) + 0.5 * (p == n) for p in pos for n in neg])
        assert auc(_set(scores, labels)) == pytest.approx(expected, abs=1e-12)

    def test_trapezoid_matches_rank(self):
        rng = np.random.default_rng(5)
        s = _set(rng.integers(0, 10, 200).astype(float), rng.integers(0, 2, 200))
        fpr, tpr, _ = roc_curve(s)
        assert trapezoid_auc(fpr, tpr) == pytest.approx(auc(s), abs=1e-12)

    def test_single_class(self):
        with pytest.raises(SingleClassError):
            auc(_set([0.1, 0.2], [1, 1]))

    def test_validation(self):
        with pytest.raises(ValueError):
            ScoredSet(np.zeros(3), np.array([0, 1, 2]))
        with pytest.raises(ValueError):
            ScoredSet(np.zeros(3), np.array([0, 1]))


class TestBootstrap:
    def test_constant_scores(self):
        lo, hi = bootstrap_ci(_set(np.ones(50), [0, 1] * 25), n_boot=200)
        assert lo == hi == 0.5

    def test_min_resamples(self):
        with pytest.raises(ValueError):
            bootstrap_ci(_set([0, 1], [0, 1]), n_boot=50)

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        s = _set(rng.random(300), rng.integers(0, 2, 300))
        assert bootstrap_ci(s, 200, seed=3) == bootstrap_ci(s, 200, seed=3)

    def test_evaluate_without_bootstrap(self):
        r = evaluate(_set([0.1, 0.9], [0, 1]), n_boot=0)
        assert r.auc == 1.0 and np.isnan(r.ci_low)


class TestYouden:
    def test_separated_midpoint(self):
        tau, tpr, fpr = youden_threshold(_set([0.1, 0.2, 0.6, 0.8], [0, 0, 1, 1]))
        assert tau == pytest.approx(0.4)
        assert (tpr, fpr) == (1.0, 0.0)

    def test_tie_goes_to_larger_tau(self):
        # J = 0.5 at both tau in (0.3, 0.5) and tau in (0.1, 0.2)
        s = _set([0.1, 0.2, 0.3, 0.5], [0, 1, 0, 1])
        tau, tpr, fpr = youden_threshold(s)
        assert tau == pytest.approx(0.4)
        assert tpr - fpr == pytest.approx(0.5)

    def test_optimal_over_sweep(self):
        rng = np.random.default_rng(9)
        labels = rng.integers(0, 2, 500)
        s = _set(rng.normal(labels * 0.8, 1.0), labels)
        tau, tpr, fpr = youden_threshold(s)
        assert rates_at(s, tau) == (tpr, fpr)
        for t in np.linspace(-3, 4, 400):
            a, b = rates_at(s, t)
            assert tpr - fpr >= a - b - 1e-12


def _table():
    comps = [
        SciComponents(0.8, 0.1, 0.05, 0.8 * 0.9 * 0.95),
        SciComponents(0.2, 0.9, 0.1, 0.2 * 0.1 * 0.9),
        SciComponents(float("nan"), float("nan"), float("nan"), 0.0, no_trade=True),
    ]
    return ComponentTable.from_components(["a", "b", "c"], [1, 0, 0], comps)


class TestScorers:
    def test_sci(self):
        t = _table()
        np.testing.assert_allclose(score_sci(t).scores, [0.684, 0.018, 0.0])

    def test_weighted_balanced_matches(self):
        t = _table()
        np.testing.assert_allclose(score_sci(t, Weights()).scores, score_sci(t).scores, rtol=1e-15)

    def test_additive(self):
        s = score_additive(_table()).scores
        assert s[0] == pytest.approx((0.8 + 0.9 + 0.95) / 3)
        assert s[2] == 0.0

    def test_components(self):
        t = _table()
        assert score_component(t, "pr").scores[0] == 0.8
        assert score_component(t, "one_minus_ts").scores[1] == pytest.approx(0.1)
        assert score_component(t, "one_minus_hhi").scores[2] == 0.0
        with pytest.raises(ValueError):
            score_component(t, "hhi")

    def test_select(self):
        t = _table().select(["a", "c"])
        assert len(t) == 2 and t.dgp == ["a", "c"]
