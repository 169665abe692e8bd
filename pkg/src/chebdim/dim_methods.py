"""Dynamic initial margin on a scenario cube.

Four ways to get an IM number at every (path, time) node:

* ``brute_force_dim`` - finite-difference sensitivities from the pricer at
  every node, then SIMM. This is the benchmark.
* ``cheb_model_space_dim`` - per time point and risk factor, a Chebyshev
  tensor over the model-space hyper-rectangle of sensitivity o g.
* ``cheb_market_space_dim`` - per time point and risk factor, a 1-D
  Chebyshev tensor over the simulated range of that factor, with the other
  factors filled in by interpolating between neighbouring simulated states.
* ``regression_dim`` - quantile IM from regressed conditional PnL variance
  (polynomial or Nadaraya-Watson), assuming normal PnL.

Work is split per time point; with ``workers > 1`` time points run on a
thread pool, and the results do not depend on the number of workers.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Callable, Sequence

import numpy as np

from .cheb_core import ChebyshevGrid, ChebyshevTensor, HyperRectangle, Interval, eval_many
from .pricers import (
    BumpConfig,
    CallCounter,
    PricingEnv,
    Trade,
    all_sensitivities_many,
    fd_sensitivity_many,
    price_many,
)
from .rfem import MarketState, ScenarioCube, g_matrix, horizon_states
from .simm import SimmConfig, simm_margin_many

__all__ = [
    "SensitivityMatrix",
    "DimSurface",
    "DimProfile",
    "MarketSpaceSlice",
    "ProfileError",
    "UndefinedMetricError",
    "brute_force_dim",
    "cheb_model_space_dim",
    "cheb_market_space_dim",
    "build_h",
    "market_space_slice",
    "regression_dim",
    "polynomial_regression",
    "nadaraya_watson",
    "profiles",
    "profile_error",
    "eq5_error",
]

log = logging.getLogger(__name__)

BRUTE_FORCE = "brute_force"
CHEB_MODEL = "cheb_model_space"
CHEB_MARKET = "cheb_market_space"
REG_POLY = "regression_polynomial"
REG_NW = "regression_nadaraya_watson"


@dataclass(frozen=True)
class SensitivityMatrix:
    values: np.ndarray = field(repr=False)  # (paths, T, l)
    method: str
    pricer_calls: int


@dataclass(frozen=True)
class DimSurface:
    im: np.ndarray = field(repr=False)  # (paths, T)
    method: str
    time_points: tuple[float, ...]
    pricer_calls: int

    def __post_init__(self):
        if np.any(self.im < 0) or not np.all(np.isfinite(self.im)):
            raise ValueError(f"{self.method}: IM must be finite and non-negative")


@dataclass(frozen=True)
class DimProfile:
    time_points: tuple[float, ...]
    eim: np.ndarray
    q95: np.ndarray
    method: str

    def kind(self, name: str) -> np.ndarray:
        if name not in ("eim", "q95"):
            raise KeyError(name)
        return getattr(self, name)


@dataclass(frozen=True)
class ProfileError:
    value: float
    skipped: int


class UndefinedMetricError(ValueError):
    """Every time point of the benchmark profile is (numerically) zero."""


def _env(cube: ScenarioCube) -> PricingEnv:
    return PricingEnv(cube.pillars, cube.sabr)


def _per_time(fn: Callable[[int], object], n_times: int, workers: int) -> list:
    if workers <= 1:
        return [fn(ti) for ti in range(n_times)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_times)))


def _surface(sens: np.ndarray, simm: SimmConfig) -> np.ndarray:
    paths, n_t, l = sens.shape
    delta, vega = simm_margin_many(sens.reshape(-1, l), simm)
    return (delta + vega).reshape(paths, n_t)


def _finish(cube, sens_by_time, method, counter, simm):
    sens = np.stack(sens_by_time, axis=1)
    calls = counter.total
    im = _surface(sens, simm)
    return (
        SensitivityMatrix(sens, method, calls),
        DimSurface(im, method, cube.time_points, calls),
    )


def brute_force_dim(
    cube: ScenarioCube,
    trade: Trade,
    bumps: BumpConfig,
    simm: SimmConfig,
    workers: int = 1,
) -> tuple[SensitivityMatrix, DimSurface]:
    """Benchmark: ``2 * l * paths * T`` pricer calls."""
    env = _env(cube)
    counter = CallCounter(BRUTE_FORCE)

    def one(ti):
        t = cube.time_points[ti]
        return all_sensitivities_many(trade, cube.market_states[:, ti, :], t, bumps, env, counter)

    return _finish(cube, _per_time(one, cube.n_times, workers), BRUTE_FORCE, counter, simm)


def _model_space_time(cube, trade, ti, mesh, bumps, env, counter) -> np.ndarray:
    t = cube.time_points[ti]
    states = cube.model_states[:, ti, :]
    lo, hi = states.min(axis=0), states.max(axis=0)
    active = [d for d in range(states.shape[1]) if hi[d] > lo[d]]
    l = env.pillars.n_factors

    if not active:
        # every path sits on the same model state: tensor is a single sample
        rows = g_matrix(lo[None, :], cube.hw, cube.pillars)
        sens = [fd_sensitivity_many(trade, rows, t, bumps.request(i, env.pillars), env, counter)[0] for i in range(l)]
        return np.tile(np.array(sens), (states.shape[0], 1))

    grid = ChebyshevGrid.build(
        HyperRectangle(tuple(Interval(lo[d], hi[d]) for d in active)), [mesh[d] for d in active]
    )
    nodes = np.array(list(grid.nodes()))
    full = np.tile(lo, (nodes.shape[0], 1))
    full[:, active] = nodes
    rows = g_matrix(full, cube.hw, cube.pillars)
    query = states[:, active]
    out = np.empty((states.shape[0], l))
    for i in range(l):
        vals = fd_sensitivity_many(trade, rows, t, bumps.request(i, env.pillars), env, counter)
        out[:, i] = eval_many(ChebyshevTensor(grid, vals), query)
    return out


def cheb_model_space_dim(
    cube: ScenarioCube,
    trade: Trade,
    mesh_sizes: int | Sequence[int],
    bumps: BumpConfig,
    simm: SimmConfig,
    workers: int = 1,
) -> tuple[SensitivityMatrix, DimSurface]:
    """Chebyshev tensors on the model space, one per factor and time point.

    The domain at each time point is the box spanned by the simulated model
    states. A model factor that takes a single value across all paths is held
    at that value (the tensor is constant along it), so a run with no vol of
    vol is effectively one-dimensional. Pricer calls per time point:
    ``2 * l * prod(mesh over non-degenerate factors)``.
    """
    k = cube.model_states.shape[2]
    mesh = [int(mesh_sizes)] * k if np.isscalar(mesh_sizes) else [int(m) for m in mesh_sizes]
    if len(mesh) != k or any(m < 2 for m in mesh):
        raise ValueError(f"need {k} mesh sizes >= 2, got {mesh_sizes}")
    env = _env(cube)
    counter = CallCounter(CHEB_MODEL)
    sens = _per_time(lambda ti: _model_space_time(cube, trade, ti, mesh, bumps, env, counter), cube.n_times, workers)
    return _finish(cube, sens, CHEB_MODEL, counter, simm)


@dataclass(frozen=True)
class MarketSpaceSlice:
    """Simulated values of one market factor at one time point, sorted.

    ``order[j]`` is the path whose value is ``values[j]``; ties keep path
    order. ``states`` are the full market vectors of all paths.
    """

    factor_index: int
    values: np.ndarray = field(repr=False)
    order: np.ndarray = field(repr=False)
    states: np.ndarray = field(repr=False)


def market_space_slice(states: np.ndarray, factor_index: int) -> MarketSpaceSlice:
    col = states[:, factor_index]
    order = np.argsort(col, kind="stable")
    return MarketSpaceSlice(factor_index, col[order], order, states)


def _h_row(sl: MarketSpaceSlice, s: float) -> np.ndarray:
    vals = sl.values
    if not vals[0] <= s <= vals[-1]:
        raise ValueError(f"s = {s!r} outside simulated range [{vals[0]!r}, {vals[-1]!r}]")
    j2 = int(np.searchsorted(vals, s, side="left"))
    if vals[j2] == s:
        row = sl.states[sl.order[j2]].copy()
    else:
        j1 = j2 - 1
        a1, a2 = vals[j1], vals[j2]
        w = (s - a1) / (a2 - a1)
        b1, b2 = sl.states[sl.order[j1]], sl.states[sl.order[j2]]
        row = (1.0 - w) * b1 + w * b2
    row[sl.factor_index] = s
    return row


def build_h(sl: MarketSpaceSlice, s: float, pillars) -> MarketState:
    """Market state on the simulated curve family at factor value ``s``.

    Neighbours ``alpha1 <= s <= alpha2`` among the simulated values supply two
    full market states; every other factor is interpolated linearly between
    them. If ``s`` is a simulated value, the first path (in path order)
    carrying it is returned with the factor set to ``s``.
    """
    return MarketState.from_vector(_h_row(sl, s), pillars)


def _market_space_time(cube, trade, ti, mesh, bumps, env, counter) -> np.ndarray:
    t = cube.time_points[ti]
    states = cube.market_states[:, ti, :]
    l = env.pillars.n_factors
    out = np.empty((states.shape[0], l))
    for i in range(l):
        sl = market_space_slice(states, i)
        req = bumps.request(i, env.pillars)
        lo, hi = sl.values[0], sl.values[-1]
        if lo == hi:
            v = fd_sensitivity_many(trade, _h_row(sl, lo)[None, :], t, req, env, counter)[0]
            out[:, i] = v
            continue
        grid = ChebyshevGrid.build(HyperRectangle((Interval(lo, hi),)), [mesh])
        rows = np.array([_h_row(sl, s) for s in grid.points[0]])
        vals = fd_sensitivity_many(trade, rows, t, req, env, counter)
        out[:, i] = eval_many(ChebyshevTensor(grid, vals), states[:, i : i + 1])
    return out


def cheb_market_space_dim(
    cube: ScenarioCube,
    trade: Trade,
    mesh_size_1d: int,
    bumps: BumpConfig,
    simm: SimmConfig,
    workers: int = 1,
) -> tuple[SensitivityMatrix, DimSurface]:
    """One 1-D Chebyshev tensor per market factor and time point.

    Pricer calls per time point: ``2 * l * mesh_size_1d`` (2 per factor
    whose simulated values are all equal).
    """
    if int(mesh_size_1d) != mesh_size_1d or mesh_size_1d < 2:
        raise ValueError(f"mesh_size_1d must be an integer >= 2, got {mesh_size_1d}")
    env = _env(cube)
    counter = CallCounter(CHEB_MARKET)
    sens = _per_time(
        lambda ti: _market_space_time(cube, trade, ti, int(mesh_size_1d), bumps, env, counter), cube.n_times, workers
    )
    return _finish(cube, sens, CHEB_MARKET, counter, simm)


# --- regression baselines ---------------------------------------------------


def _active_columns(x: np.ndarray) -> np.ndarray:
    return x[:, np.ptp(x, axis=0) > 0]


def _poly_design(x: np.ndarray, degree: int) -> np.ndarray:
    cols = [np.ones(x.shape[0])]
    for deg in range(1, degree + 1):
        for combo in combinations_with_replacement(range(x.shape[1]), deg):
            cols.append(np.prod(x[:, list(combo)], axis=1))
    return np.column_stack(cols)


def polynomial_regression(x: np.ndarray, y: np.ndarray, degree: int = 2) -> np.ndarray:
    """Least-squares polynomial fit of ``y`` on ``x``, returned at the samples.

    Regressors are standardised first. Falls back to the sample mean, with a
    warning, if the design matrix is rank deficient.
    """
    x = _active_columns(np.asarray(x, dtype=float).reshape(len(y), -1))
    y = np.asarray(y, dtype=float)
    if x.shape[1] == 0:
        return np.full_like(y, y.mean())
    z = (x - x.mean(axis=0)) / x.std(axis=0)
    a = _poly_design(z, degree)
    if np.linalg.matrix_rank(a) < a.shape[1]:
        warnings.warn("singular regression design, using the unconditional mean", RuntimeWarning, stacklevel=2)
        return np.full_like(y, y.mean())
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    return a @ coef


def silverman_bandwidth(x: np.ndarray) -> np.ndarray:
    n, d = x.shape
    return x.std(axis=0, ddof=1) * (4.0 / (d + 2)) ** (1.0 / (d + 4)) * n ** (-1.0 / (d + 4))


def nadaraya_watson(x: np.ndarray, y: np.ndarray, query: np.ndarray | None = None, bandwidth=None) -> np.ndarray:
    """Gaussian product-kernel Nadaraya-Watson estimate of ``E[y | x]``.

    Bandwidth defaults to Silverman's rule per regressor. Regressors with no
    spread carry no information and are dropped, so a single distinct
    regressor value yields the sample mean everywhere.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float).reshape(len(y), -1)
    q = x if query is None else np.asarray(query, dtype=float).reshape(-1, x.shape[1])
    keep = np.ptp(x, axis=0) > 0
    x, q = x[:, keep], q[:, keep]
    if x.shape[1] == 0:
        return np.full(q.shape[0], y.mean())
    if bandwidth is None:
        h = silverman_bandwidth(x)
    else:
        h = np.broadcast_to(np.atleast_1d(np.asarray(bandwidth, dtype=float)), keep.shape)[keep]
    u = (q[:, None, :] - x[None, :, :]) / h
    k = np.exp(-0.5 * np.sum(u * u, axis=2))
    return (k @ y) / k.sum(axis=1)


def _conditional_variance(x: np.ndarray, pnl: np.ndarray, variant: str, degree: int) -> np.ndarray:
    # shift by the median first: identical PnLs then give exactly zero variance
    d = pnl - np.median(pnl)
    if variant == "polynomial":
        m1 = polynomial_regression(x, d, degree)
        m2 = polynomial_regression(x, d * d, degree)
    elif variant == "nadaraya_watson":
        m1 = nadaraya_watson(x, d)
        m2 = nadaraya_watson(x, d * d)
    else:
        raise ValueError(f"unknown regression variant {variant!r}")
    return np.maximum(m2 - m1 * m1, 0.0)


def regression_dim(
    cube: ScenarioCube,
    trade: Trade,
    variant: str = "polynomial",
    horizon: float = 10.0 / 252.0,
    quantile_z: float = 2.326,
    degree: int = 2,
    workers: int = 1,
) -> DimSurface:
    """Normal-quantile IM from regressed ``horizon`` PnL variance.

    PnL at each node is the PV at ``t + horizon`` (one extra exact sub-step
    along the same path) minus the PV at ``t``: ``2 * paths * T`` pricer
    calls. Regressors are the model-space state. No shift to match SIMM at
    the first time point is applied.
    """
    method = {"polynomial": REG_POLY, "nadaraya_watson": REG_NW}.get(variant)
    if method is None:
        raise ValueError(f"unknown regression variant {variant!r}")
    env = _env(cube)
    counter = CallCounter(method)
    _, h_market = horizon_states(cube, horizon)

    def one(ti):
        t = cube.time_points[ti]
        pv0 = price_many(trade, cube.market_states[:, ti, :], t, env, counter)
        pv1 = price_many(trade, h_market[:, ti, :], t + horizon, env, counter)
        var = _conditional_variance(cube.model_states[:, ti, :], pv1 - pv0, variant, degree)
        return quantile_z * np.sqrt(var)

    im = np.stack(_per_time(one, cube.n_times, workers), axis=1)
    return DimSurface(im, method, cube.time_points, counter.total)


# --- profiles and error metric ---------------------------------------------


def profiles(surface: DimSurface) -> DimProfile:
    """Per-time mean (EIM) and 95th percentile (linear interpolation between
    order statistics) of IM over paths."""
    if surface.im.size == 0:
        raise ValueError("empty DIM surface")
    # offset by the first path so a constant column averages to itself exactly
    ref = surface.im[0]
    eim = ref + (surface.im - ref).mean(axis=0)
    q95 = np.percentile(surface.im, 95.0, axis=0, method="linear")
    return DimProfile(surface.time_points, eim, q95, surface.method)


def eq5_error(pbm: Sequence[float], palt: Sequence[float]) -> ProfileError:
    """Mean over time of ``|pbm - palt| / pbm``.

    Points where the benchmark is below ``1e-12 * max(pbm)`` are skipped and
    counted.
    """
    pbm = np.asarray(pbm, dtype=float)
    palt = np.asarray(palt, dtype=float)
    if pbm.shape != palt.shape:
        raise ValueError(f"profile lengths differ: {pbm.shape} vs {palt.shape}")
    eps = 1e-12 * pbm.max() if pbm.size else 0.0
    keep = pbm >= eps if eps > 0 else pbm > 0
    if not keep.any():
        raise UndefinedMetricError("benchmark profile is zero at every time point")
    rel = np.abs(pbm[keep] - palt[keep]) / pbm[keep]
    return ProfileError(float(rel.mean()), int((~keep).sum()))


def profile_error(pbm: DimProfile, palt: DimProfile) -> dict[str, ProfileError]:
    if tuple(pbm.time_points) != tuple(palt.time_points):
        raise ValueError("profiles are on different time grids")
    return {kind: eq5_error(pbm.kind(kind), palt.kind(kind)) for kind in ("eim", "q95")}
