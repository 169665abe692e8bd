import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from chebdim.rfem import (
    HullWhiteParams,
    MarketState,
    ModelState,
    PillarConfig,
    SabrParams,
    check_regeneration,
    g_map,
    g_matrix,
    horizon_states,
    simulate,
)

HW = HullWhiteParams(mean_reversion=0.1, vol=0.01, initial_rate=0.02, long_term_level=0.04)
SABR = SabrParams(initial_vol=0.05, vol_of_vol=0.4, beta=0.5, correlation=-0.3)
PILLARS = PillarConfig()


class TestParams:
    @pytest.mark.parametrize("kw", [{"mean_reversion": 0.0}, {"vol": -0.01}, {"initial_rate": math.nan}])
    def test_hull_white_invalid(self, kw):
        base = dict(mean_reversion=0.1, vol=0.01, initial_rate=0.02, long_term_level=0.03)
        with pytest.raises(ValueError):
            HullWhiteParams(**{**base, **kw})

    @pytest.mark.parametrize(
        "kw", [{"initial_vol": 0.0}, {"vol_of_vol": -1.0}, {"beta": 1.5}, {"correlation": 1.0}, {"shift": -0.01}]
    )
    def test_sabr_invalid(self, kw):
        with pytest.raises(ValueError):
            SabrParams(**{"initial_vol": 0.05, "vol_of_vol": 0.3, **kw})

    def test_pillars_invalid(self):
        with pytest.raises(ValueError):
            PillarConfig(swap_tenors=(2, 1))
        with pytest.raises(ValueError):
            PillarConfig(swap_tenors=(1.5,))

    def test_model_state_non_finite(self):
        with pytest.raises(ValueError):
            ModelState((0.01, math.inf))

    def test_market_state_vol_positive(self):
        with pytest.raises(ValueError):
            MarketState((0.01,), (0.0,))


class TestHullWhite:
    def test_b_unit_kappa(self):
        hw = HullWhiteParams(1.0, 0.01, 0.0, 0.0)
        assert hw.B(1.0) == pytest.approx(0.6321206, abs=1e-7)

    def test_bond_matches_mean_of_integrated_rate(self):
        # P = E[exp(-int r)]; with integrated rate Gaussian, P = exp(-mu + var/2)
        hw = HW
        k, s, th, r0, tau = hw.mean_reversion, hw.vol, hw.long_term_level, hw.initial_rate, 4.0
        b = hw.B(tau)
        mu = th * tau + (r0 - th) * b
        var = s * s / (k * k) * (tau - b - k * b * b / 2)
        assert hw.bond(r0, tau) == pytest.approx(math.exp(-mu + var / 2), rel=1e-13)


class TestGMap:
    def test_flat_curve_par_rates(self):
        r = 0.035
        hw = HullWhiteParams(0.2, 0.0, r, r)
        # annual bonds exp(-r k); par rate by direct bond algebra
        expected = []
        for tenor in PILLARS.swap_tenors:
            bonds = [math.exp(-r * k) for k in range(1, tenor + 1)]
            expected.append((1 - bonds[-1]) / sum(bonds))
        got = g_map(ModelState((r, math.log(0.2))), hw, PILLARS)
        np.testing.assert_allclose(got.swap_rates, expected, rtol=1e-13)
        np.testing.assert_allclose(got.swap_rates, math.expm1(r), rtol=1e-12)

    def test_vol_pillars_flat(self):
        pillars = PillarConfig(vol_expiries=(0.5, 1.0, 2.0))
        got = g_map(ModelState((0.02, math.log(0.07))), HW, pillars)
        assert got.vols == pytest.approx((0.07, 0.07, 0.07), rel=1e-15)

    def test_vector_round_trip(self):
        m = g_map(ModelState((0.02, math.log(0.07))), HW, PILLARS)
        assert MarketState.from_vector(m.as_vector(), PILLARS) == m

    def test_rates_increasing_in_short_rate(self):
        r = np.linspace(-0.05, 0.12, 400)
        out = g_matrix(np.column_stack([r, np.zeros_like(r)]), HW, PILLARS)
        assert np.all(np.diff(out[:, : PILLARS.n_rates], axis=0) > 0)

    def test_second_derivative_smooth(self):
        h = 1e-4
        r = np.arange(-0.05, 0.12, h)
        out = g_matrix(np.column_stack([r, np.zeros_like(r)]), HW, PILLARS)[:, : PILLARS.n_rates]
        d2 = np.abs(out[2:] - 2 * out[1:-1] + out[:-2]) / (h * h)
        assert np.all(np.isfinite(d2))
        floor = 1e-12 + np.minimum(d2[:-1], d2[1:])
        assert np.all(np.maximum(d2[:-1], d2[1:]) <= 1e3 * np.maximum(floor, np.median(d2)))


class TestSimulate:
    def test_deterministic_limit(self):
        hw = HullWhiteParams(0.3, 0.0, 0.01, 0.05)
        sabr = SabrParams(0.04, 0.0)
        times = [0.25, 1.0, 3.0]
        cube = simulate(hw, sabr, 5, times, seed=3)
        for ti, t in enumerate(times):
            expected = 0.05 + (0.01 - 0.05) * math.exp(-0.3 * t)
            np.testing.assert_allclose(cube.model_states[:, ti, 0], expected, rtol=1e-13)
            np.testing.assert_allclose(np.exp(cube.model_states[:, ti, 1]), 0.04, rtol=1e-15)
        assert np.all(cube.model_states == cube.model_states[0])

    def test_same_seed_bit_identical(self):
        a = simulate(HW, SABR, 20, [0.5, 1.0], seed=11)
        b = simulate(HW, SABR, 20, [0.5, 1.0], seed=11)
        assert np.array_equal(a.model_states, b.model_states)
        assert np.array_equal(a.market_states, b.market_states)
        c = simulate(HW, SABR, 20, [0.5, 1.0], seed=12)
        assert not np.array_equal(a.model_states, c.model_states)

    def test_paths_independent_of_path_count(self):
        a = simulate(HW, SABR, 10, [0.5, 1.0], seed=5)
        b = simulate(HW, SABR, 30, [0.5, 1.0], seed=5)
        assert np.array_equal(a.model_states, b.model_states[:10])

    def test_ou_mean_one_year(self):
        hw = HullWhiteParams(0.1, 0.01, 0.02, 0.04)
        cube = simulate(hw, SABR, 2000, [1.0], seed=2024)
        r1 = cube.model_states[:, 0, 0]
        expected = 0.04 + (0.02 - 0.04) * math.exp(-0.1)
        se = r1.std(ddof=1) / math.sqrt(r1.size)
        assert abs(r1.mean() - expected) < 3 * se

    def test_ou_variance_and_vol_martingale(self):
        cube = simulate(HW, SABR, 4000, [0.5, 2.0], seed=7)
        r = cube.model_states[:, 1, 0]
        # chi-square-ish tolerance on the sample variance
        assert r.var(ddof=1) == pytest.approx(HW.stdev(0.5) ** 2 * math.exp(-0.3) + HW.stdev(1.5) ** 2, rel=0.1)
        alpha = np.exp(cube.model_states[:, 1, 1])
        se = alpha.std(ddof=1) / math.sqrt(alpha.size)
        assert abs(alpha.mean() - SABR.initial_vol) < 4 * se

    def test_regeneration(self):
        cube = simulate(HW, SABR, 15, [0.1, 0.7, 2.0], seed=1)
        assert check_regeneration(cube)
        ms = cube.market_state(3, 1)
        assert ms == g_map(cube.model_state(3, 1), HW, PILLARS)

    def test_cube_read_only(self):
        cube = simulate(HW, SABR, 2, [1.0], seed=1)
        with pytest.raises(ValueError):
            cube.model_states[0, 0, 0] = 1.0

    @pytest.mark.parametrize("times", [[], [0.0, 1.0], [1.0, 0.5], [1.0, 1.0]])
    def test_bad_time_points(self, times):
        with pytest.raises(ValueError):
            simulate(HW, SABR, 2, times, seed=1)

    def test_bad_paths(self):
        with pytest.raises(ValueError):
            simulate(HW, SABR, 0, [1.0], seed=1)

    def test_csv_export(self, tmp_path):
        cube = simulate(HW, SABR, 2, [0.5, 1.0], seed=1)
        cube.to_csv(tmp_path / "cube.csv")
        lines = (tmp_path / "cube.csv").read_text().splitlines()
        assert lines[0].split(",")[:4] == ["path", "time", "rate", "log_vol"]
        assert len(lines) == 1 + 4
        assert float(lines[1].split(",")[2]) == cube.model_states[0, 0, 0]

    @given(st.integers(0, 2**32 - 1))
    def test_horizon_states_leave_cube_alone(self, seed):
        cube = simulate(HW, SABR, 3, [0.5, 1.0], seed=seed)
        before = cube.model_states.copy()
        model, market = horizon_states(cube, 10 / 252)
        assert np.array_equal(cube.model_states, before)
        assert model.shape == cube.model_states.shape
        assert np.array_equal(market, g_matrix(model.reshape(-1, 2), HW, PILLARS).reshape(market.shape))
        m2, _ = horizon_states(cube, 10 / 252)
        assert np.array_equal(model, m2)
