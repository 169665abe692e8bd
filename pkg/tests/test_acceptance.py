"""Acceptance criteria, one test per criterion, each reporting PASS/FAIL."""

import filecmp
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from chebdim import cheb_core as cc
from chebdim import dim_methods as dm
from chebdim.cheb_core import ChebyshevGrid, ChebyshevTensor, HyperRectangle, Interval, build_tensor
from chebdim.config import load_config, packaged_config
from chebdim.harness import run
from chebdim.pricers import EuropeanSwaption
from chebdim.rfem import HullWhiteParams, simulate

from conftest import ACCEPTANCE_LINES


def report(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} -- {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    swap, swaption = load_config(packaged_config())
    start = time.perf_counter()
    s_swap = run(swap, out / "swap")
    swap_seconds = time.perf_counter() - start
    s_opt = run(swaption, out / "swaption")
    return {"swap": s_swap, "swaption": s_opt, "swap_seconds": swap_seconds, "out": out, "configs": (swap, swaption)}


def _rel(got, want, scale):
    return abs(got - want) / scale


def test_c1_barycentric_correctness():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst_poly, node_failures, cases = 0.0, 0, 0
    for _ in range(600):
        n = int(rng.integers(2, 16))
        lo = float(rng.uniform(-5, 5))
        hi = lo + float(rng.uniform(0.1, 5))
        coeffs = rng.uniform(-1, 1, int(rng.integers(1, n + 1)))
        u = lambda x: 2 * (x - lo) / (hi - lo) - 1  # noqa: E731
        f = lambda x: float(np.polynomial.chebyshev.chebval(u(x), coeffs))  # noqa: E731
        t = build_tensor(f, ChebyshevGrid.build(HyperRectangle((Interval(lo, hi),)), [n]))
        scale = float(np.abs(coeffs).sum())
        for x in rng.uniform(lo, hi, 20):
            worst_poly = max(worst_poly, _rel(cc.eval_1d(t, x), f(x), scale))
        node_failures += sum(cc.eval_1d(t, x) != v for x, v in zip(t.grid.points[0], t.values))
        cases += 1
    for _ in range(400):
        d = int(rng.integers(2, 4))
        counts = [int(c) for c in rng.integers(2, 6, d)]
        bounds = [(float(a), float(a) + float(w)) for a, w in zip(rng.uniform(-3, 3, d), rng.uniform(0.2, 4, d))]
        coeffs = rng.uniform(-1, 1, counts)

        def f(*x):
            us = [2 * (xi - a) / (b - a) - 1 for xi, (a, b) in zip(x, bounds)]
            basis = [np.polynomial.chebyshev.chebvander(ui, c - 1)[0] for ui, c in zip(us, counts)]
            out = coeffs
            for b in basis:
                out = np.tensordot(b, out, axes=(0, 0))
            return float(out)

        grid = ChebyshevGrid.build(HyperRectangle.from_bounds(bounds), counts)
        t = ChebyshevTensor(grid, [f(*node) for node in grid.nodes()])
        scale = float(np.abs(coeffs).sum())
        pts = np.column_stack([rng.uniform(a, b, 10) for a, b in bounds])
        for p in pts:
            worst_poly = max(worst_poly, _rel(cc.eval_nd(t, p), f(*p), scale))
        nodes = np.array(list(grid.nodes()))
        flat = t.values.reshape(-1)
        node_failures += int(sum(cc.eval_nd(t, nd) != v for nd, v in zip(nodes, flat)))
        node_failures += int(np.sum(cc.eval_many(t, nodes) != flat))
        cases += 1
    seconds = time.perf_counter() - start
    ok = worst_poly <= 1e-12 and node_failures == 0 and cases >= 1000 and seconds < 10
    assert report(
        1,
        "barycentric node exactness and polynomial reproduction",
        ok,
        f"{cases} cases, node mismatches {node_failures}, worst relative error {worst_poly:.2e} (<= 1e-12), {seconds:.1f}s (< 10s)",
    )


def test_c2_geometric_convergence():
    unit = HyperRectangle((Interval(-1.0, 1.0),))
    at20 = cc.convergence_study(math.exp, unit, [20]).max_abs_errors[0]
    # the fit stops before the error reaches the rounding floor
    rep = cc.convergence_study(math.exp, unit, [4, 6, 8, 10, 12])
    slope = math.log(rep.fitted_decay_rate)
    ok = at20 < 1e-12 and slope < -1 and rep.fit_r_squared > 0.99
    assert report(
        2,
        "geometric convergence for exp on [-1, 1]",
        ok,
        f"error(20 pts) {at20:.2e} (< 1e-12), slope of ln error vs count {slope:.2f} (< -1) over "
        f"{rep.counts_tried}, R^2 {rep.fit_r_squared:.4f} (> 0.99)",
    )


def test_c3_call_count_law(monkeypatch):
    grid = ChebyshevGrid.build(HyperRectangle.from_bounds([(-1, 1)] * 3), [10, 10, 10])
    t = build_tensor(lambda x, y, z: math.sin(x) * y + z, grid)
    calls = [0]
    real = cc._barycentric

    def counting(x, nodes, values):
        calls[0] += int(np.prod(values.shape[1:], dtype=int))
        return real(x, nodes, values)

    monkeypatch.setattr(cc, "_barycentric", counting)
    cc.eval_nd(t, [0.1, -0.2, 0.3])
    assert report(3, "d=3, m=10 evaluation call count", calls[0] == 111, f"{calls[0]} one-dimensional evaluations (== 111)")


def test_c4_desk_swap(desk):
    s = desk["swap"]
    e = {(m, k): s.error("swap_10y", m, k).value for m in
         ("cheb_model_space", "cheb_market_space", "regression_polynomial", "regression_nadaraya_watson")
         for k in ("eim", "q95")}
    model_ok = e["cheb_model_space", "eim"] <= 1e-4 and e["cheb_model_space", "q95"] <= 1e-3
    market_ok = e["cheb_market_space", "eim"] <= 1e-2 and e["cheb_market_space", "q95"] <= 1e-2
    regression = min(e[m, k] for m in ("regression_polynomial", "regression_nadaraya_watson") for k in ("eim", "q95"))
    ordering = all(e["cheb_model_space", k] < e["cheb_market_space", k] < regression for k in ("eim", "q95"))
    ok = model_ok and market_ok and ordering and desk["swap_seconds"] < 300
    assert report(
        4,
        "desk-scale swap DIM, 1000 paths x 10 time points",
        ok,
        f"model eim {e['cheb_model_space', 'eim']:.2e} (<= 1e-4) q95 {e['cheb_model_space', 'q95']:.2e} (<= 1e-3); "
        f"market eim {e['cheb_market_space', 'eim']:.2e} q95 {e['cheb_market_space', 'q95']:.2e} (<= 1e-2); "
        f"min regression {regression:.2e}; ordering model < market < regression {ordering}; "
        f"{desk['swap_seconds']:.1f}s (< 300s)",
    )


def test_c5_desk_swaptions(desk):
    s = desk["swaption"]
    lines, ok = [], True
    for trade in ("swaption_atm", "swaption_otm", "swaption_itm"):
        for k in ("eim", "q95"):
            model = s.error(trade, "cheb_model_space", k).value
            market = s.error(trade, "cheb_market_space", k).value
            reg = min(s.error(trade, m, k).value for m in ("regression_polynomial", "regression_nadaraya_watson"))
            ok &= model <= 1e-2 and market <= 1e-1 and reg > max(model, market)
            lines.append(f"{trade[9:]} {k}: model {model:.1e} market {market:.1e} regression {reg:.1e}")
    assert len(desk["configs"][1].time_points) == 8
    assert report(
        5, "desk-scale swaptions ATM/OTM/ITM, 1000 paths x 8 time points (model <= 1e-2, market <= 1e-1, regression worse)",
        ok, "; ".join(lines),
    )


def test_c6_cost_accounting(desk):
    swap, swaption = desk["configs"]
    opt = desk["swaption"]
    l = swaption.pillars.n_factors
    m, t = swaption.paths, len(swaption.time_points)
    mesh = swaption.model_space_mesh
    expected = {
        "brute_force": 2 * l * m * t,
        "cheb_model_space": 2 * l * mesh[0] * mesh[1] * t,
        "cheb_market_space": 2 * l * swaption.market_space_mesh * t,
        "regression_polynomial": 2 * m * t,
    }
    measured = {k: opt.calls("swaption_atm", k) for k in expected}
    identities = measured == expected
    chain = measured["brute_force"] >= 10 * measured["cheb_model_space"] >= 10 * measured["cheb_market_space"]

    sw = desk["swap"]
    ls, ms, ts = swap.pillars.n_factors, swap.paths, len(swap.time_points)
    swap_expected = {
        "brute_force": 2 * ls * ms * ts,
        # vol frozen: one active model dimension, and the vol market factor needs a single FD pair
        "cheb_model_space": 2 * ls * swap.model_space_mesh[0] * ts,
        "cheb_market_space": 2 * (swap.pillars.n_rates * swap.market_space_mesh + (ls - swap.pillars.n_rates)) * ts,
    }
    swap_measured = {k: sw.calls("swap_10y", k) for k in swap_expected}
    swap_ok = swap_measured == swap_expected and all(
        swap_measured["brute_force"] >= 10 * swap_measured[k] for k in ("cheb_model_space", "cheb_market_space")
    )

    # full scale by formula: 10,000 paths, 100 time points, 10-50 sensitivities,
    # 10-node market tensors, 3-factor model tensors of 5^3 = 125 nodes
    full = []
    for lf in (10, 50):
        brute, reg = 2 * lf * 10_000 * 100, 2 * 10_000 * 100
        model, market = 2 * lf * 125 * 100, 2 * lf * 10 * 100
        full.append(brute >= 10 * model >= 10 * market and reg >= 10 * market and reg > model)
    at10_market_ratio = (2 * 10_000 * 100) / (2 * 10 * 10 * 100)

    ok = identities and chain and swap_ok and all(full) and at10_market_ratio >= 100
    assert report(
        6,
        "pricer-call accounting",
        ok,
        f"swaption measured {measured} == identities {identities}; chain brute >= 10 model >= 10 market {chain}; "
        f"swap {swap_measured} brute >= 10x each {swap_ok}; full-scale formula chain {all(full)}, "
        f"regression/market at l=10 {at10_market_ratio:.0f}x",
    )


def test_c7_degenerate_equivalence(desk):
    swap_cfg, opt_cfg = desk["configs"]
    hw = HullWhiteParams(0.1, 0.0, 0.03, 0.03)
    sabr = replace(opt_cfg.sabr, vol_of_vol=0.0)
    details, ok = [], True
    cases = [
        (simulate(hw, sabr, 200, swap_cfg.time_points, 1, swap_cfg.pillars), swap_cfg.trades[0], swap_cfg),
        (simulate(hw, sabr, 200, opt_cfg.time_points, 1, opt_cfg.pillars), opt_cfg.trades[0], opt_cfg),
        (simulate(hw, sabr, 200, opt_cfg.time_points, 1, opt_cfg.pillars), opt_cfg.trades[2], opt_cfg),
    ]
    for cube, trade, cfg in cases:
        bf = dm.brute_force_dim(cube, trade, cfg.bumps, cfg.simm)[1].im
        model = dm.cheb_model_space_dim(cube, trade, cfg.model_space_mesh, cfg.bumps, cfg.simm)[1].im
        market = dm.cheb_market_space_dim(cube, trade, cfg.market_space_mesh, cfg.bumps, cfg.simm)[1].im
        regs = [dm.regression_dim(cube, trade, v).im for v in ("polynomial", "nadaraya_watson")]
        same = np.array_equal(model, bf) and np.array_equal(market, bf)
        zero = all(np.all(r == 0.0) for r in regs)
        ok &= same and zero and bool(np.all(bf > 0))
        details.append(f"{trade.name}: chebyshev bit-identical {same}, regression IM == 0 {zero}")
    assert isinstance(cases[1][1], EuropeanSwaption)
    assert report(7, "zero-volatility equivalence", ok, "; ".join(details))


def test_c8_determinism(desk, tmp_path):
    out = desk["out"]
    swap, swaption = desk["configs"]
    ok, detail = True, []
    for cfg in (swap, swaption):
        run(cfg, tmp_path / f"{cfg.name}_again")
        run(replace(cfg, workers=4), tmp_path / f"{cfg.name}_w4")
        names = sorted(p.name for p in (out / cfg.name).iterdir() if p.name != "timing.csv")
        for other in (f"{cfg.name}_again", f"{cfg.name}_w4"):
            match, mismatch, errors = filecmp.cmpfiles(out / cfg.name, tmp_path / other, names, shallow=False)
            ok &= match == names
            detail.append(f"{other}: {len(match)}/{len(names)} files identical")
    assert report(8, "byte-identical outputs across reruns and 1 vs 4 workers", ok, "; ".join(detail))
