import numpy as np
import pytest

from sci_index.dgp import (
    ADVERSARIAL,
    AR1,
    BASELINE,
    BUILTIN_ORDER,
    PRICE_CLIP,
    DgpSpec,
    IidNormal,
    SpecError,
    TwoGamma,
    builtin_specs,
    generate_dataset,
    path_rng,
    sample_path,
    sweep_specs,
)
from sci_index.evaluation import ComponentTable


@pytest.fixture(scope="module")
def baseline():
    return generate_dataset(BASELINE, 2000, 20260429)


class TestSamplers:
    def test_gamma_mean_shape_scale(self):
        rng = np.random.default_rng(11)
        k, theta = 2.5, 5e4
        x = rng.gamma(k, theta, 100_000)
        se = np.sqrt(k) * theta / np.sqrt(x.size)
        assert abs(x.mean() - k * theta) < 3 * se

    def test_ar1_recursion(self):
        proc = AR1(-0.55, -0.0008, 0.0025)
        r = proc.sample(np.random.default_rng(3), 48)
        e = np.random.default_rng(3).normal(-0.0008, 0.0025, 48)
        expected = np.empty(48)
        expected[0] = e[0]
        for t in range(1, 48):
            expected[t] = -0.55 * expected[t - 1] + e[t]
        np.testing.assert_allclose(r, expected, rtol=0, atol=1e-15)

    def test_ar1_bounds(self):
        with pytest.raises(SpecError):
            AR1(1.0, 0.0, 0.1)


class TestSpecs:
    def test_labels(self):
        specs = builtin_specs()
        positive = {k for k, s in specs.items() if s.label == 1}
        assert positive == {"informed", "whale_informed", "manip_then_info"}
        assert tuple(specs) == BUILTIN_ORDER
        assert set(ADVERSARIAL) | set(BASELINE) == set(BUILTIN_ORDER)

    def test_invalid(self):
        with pytest.raises(SpecError):
            DgpSpec("x", IidNormal(0, 1), TwoGamma(1, 1, 1, 1), (5, 2), 1.0, 1)
        with pytest.raises(SpecError):
            TwoGamma(0.0, 1, 1, 1)
        with pytest.raises(SpecError):
            DgpSpec("x", IidNormal(0, 1), TwoGamma(1, 1, 1, 1), (1, 2), 1.0, 2)

    def test_unknown_name(self):
        with pytest.raises(SpecError, match="nope"):
            generate_dataset(["nope"], 1)

    def test_sweep_specs(self):
        base = builtin_specs()["liquidity"]
        grid = [-0.55, -0.3, 0.0]
        out = sweep_specs(base, "ar_coefficient", grid)
        assert [s.returns.phi for s in out] == grid
        for s in out:
            assert s.volumes == base.volumes and s.family == "liquidity"
            assert s.returns.sd == base.returns.sd

    def test_sweep_not_applicable(self):
        with pytest.raises(SpecError):
            sweep_specs(builtin_specs()["informed"], "ar_coefficient", [0.1])


class TestPaths:
    def test_shapes_and_clipping(self):
        for spec in builtin_specs().values():
            for i in range(20):
                p = sample_path(spec, path_rng(5, 0, i), i)
                assert p.prices.shape == (49,) and p.buy.shape == (48,)
                assert p.prices.min() >= PRICE_CLIP[0] and p.prices.max() <= PRICE_CLIP[1]
                assert p.prices[0] == pytest.approx(0.72)
                lo, hi = spec.trader_range
                assert lo <= p.flows.size <= hi
                assert (p.buy >= 0).all() and (p.sell >= 0).all()

    def test_flows_scale_with_volume(self):
        p = sample_path(builtin_specs()["informed"], path_rng(1, 0, 0))
        weights = np.abs(p.flows) / np.abs(p.flows).sum()
        assert weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.abs(p.flows).sum() == pytest.approx(p.buy.sum() + p.sell.sum())

    def test_flows_by_bin_sums(self):
        p = sample_path(builtin_specs()["liquidity"], path_rng(1, 1, 0))
        np.testing.assert_allclose(p.flows_by_bin().sum(axis=0), p.flows, rtol=1e-12)

    def test_determinism_across_workers(self):
        a = generate_dataset(BUILTIN_ORDER, 30, 7, workers=1)
        b = generate_dataset(BUILTIN_ORDER, 30, 7, workers=4)
        for x, y in zip(a.paths, b.paths):
            assert x.dgp_name == y.dgp_name and x.path_index == y.path_index
            assert np.array_equal(x.prices, y.prices)
            assert np.array_equal(x.flows, y.flows)
            assert np.array_equal(x.buy, y.buy)

    def test_seed_changes_output(self):
        a = generate_dataset(["informed"], 3, 1)
        b = generate_dataset(["informed"], 3, 2)
        assert not np.array_equal(a.paths[0].prices, b.paths[0].prices)

    def test_counts(self):
        d = generate_dataset(BASELINE, 10)
        assert len(d) == 30 and d.counts == {k: 10 for k in BASELINE}
        assert d.labels().sum() == 10


class TestStatistics:
    def test_within_dgp_correlations(self, baseline):
        t = ComponentTable.from_dataset(baseline)
        for name in BASELINE:
            m = t.mask([name])
            c = np.corrcoef(np.vstack([t.pr[m], t.ts[m], t.hhi[m]]))
            off = c[np.triu_indices(3, 1)]
            assert np.all(np.abs(off) < 0.1), (name, off)

    def test_alpha_sweep_hhi_decreasing(self):
        grid = [0.5, 1.0, 4.0, 16.0]
        hhi = []
        for spec in sweep_specs(builtin_specs()["informed"], "dirichlet_alpha", grid):
            t = ComponentTable.from_dataset(generate_dataset([spec], 300, 3))
            hhi.append(t.hhi.mean())
        assert all(a > b for a, b in zip(hhi, hhi[1:]))
