"""Risk factor evolution: Hull-White short rate and a lognormal SABR vol state.

The model space has two factors per node, ``(r, log(alpha))``. The map ``g``
turns a model state into market risk factors: par swap rates at the configured
tenor pillars (from Hull-White affine bond prices) followed by one vol per vol
pillar (flat at the simulated SABR ``alpha``).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "HullWhiteParams",
    "SabrParams",
    "PillarConfig",
    "ModelState",
    "MarketState",
    "ScenarioCube",
    "simulate",
    "g_map",
    "g_matrix",
    "horizon_states",
    "check_regeneration",
]

RATE, LOGVOL = 0, 1
N_MODEL_FACTORS = 2


@dataclass(frozen=True)
class HullWhiteParams:
    mean_reversion: float
    vol: float
    initial_rate: float
    long_term_level: float

    def __post_init__(self):
        if not self.mean_reversion > 0:
            raise ValueError(f"mean_reversion must be > 0, got {self.mean_reversion}")
        if not self.vol >= 0:
            raise ValueError(f"vol must be >= 0, got {self.vol}")
        for name in ("initial_rate", "long_term_level"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def B(self, tau):
        k = self.mean_reversion
        return -np.expm1(-k * np.asarray(tau, dtype=float)) / k

    def log_A(self, tau):
        tau = np.asarray(tau, dtype=float)
        k, s, th = self.mean_reversion, self.vol, self.long_term_level
        b = self.B(tau)
        return (th - s * s / (2 * k * k)) * (b - tau) - s * s * b * b / (4 * k)

    def bond(self, r, tau):
        """Zero-coupon bond price ``A(tau) exp(-B(tau) r)``."""
        return np.exp(self.log_A(tau) - self.B(tau) * r)

    def mean(self, r0, dt: float):
        k, th = self.mean_reversion, self.long_term_level
        return th + (r0 - th) * math.exp(-k * dt)

    def stdev(self, dt: float) -> float:
        k = self.mean_reversion
        return self.vol * math.sqrt(-math.expm1(-2 * k * dt) / (2 * k))


@dataclass(frozen=True)
class SabrParams:
    """SABR vol-process and smile parameters.

    ``shift`` displaces forward and strike in the Hagan formula so that
    Gaussian short rates going negative do not break the lognormal smile.
    """

    initial_vol: float
    vol_of_vol: float
    beta: float = 0.5
    correlation: float = 0.0
    shift: float = 0.0

    def __post_init__(self):
        if not self.initial_vol > 0:
            raise ValueError(f"initial_vol must be > 0, got {self.initial_vol}")
        if not self.vol_of_vol >= 0:
            raise ValueError(f"vol_of_vol must be >= 0, got {self.vol_of_vol}")
        if not 0 <= self.beta <= 1:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")
        if not -1 < self.correlation < 1:
            raise ValueError(f"correlation must be in (-1, 1), got {self.correlation}")
        if not self.shift >= 0:
            raise ValueError(f"shift must be >= 0, got {self.shift}")


@dataclass(frozen=True)
class PillarConfig:
    """Market-space layout: swap tenors (whole years) then vol expiries."""

    swap_tenors: tuple[int, ...] = (1, 2, 3, 5, 7, 10)
    vol_expiries: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        tenors = tuple(self.swap_tenors)
        if not tenors:
            raise ValueError("need at least one swap tenor")
        if any(int(t) != t or t < 1 for t in tenors):
            raise ValueError(f"swap tenors must be whole years >= 1, got {tenors}")
        tenors = tuple(int(t) for t in tenors)
        if any(b <= a for a, b in zip(tenors, tenors[1:])):
            raise ValueError(f"swap tenors must be strictly increasing, got {tenors}")
        object.__setattr__(self, "swap_tenors", tenors)
        object.__setattr__(self, "vol_expiries", tuple(float(e) for e in self.vol_expiries))

    @property
    def n_rates(self) -> int:
        return len(self.swap_tenors)

    @property
    def n_vols(self) -> int:
        return len(self.vol_expiries)

    @property
    def n_factors(self) -> int:
        return self.n_rates + self.n_vols

    def factor_names(self) -> list[str]:
        return [f"swap_{t}y" for t in self.swap_tenors] + [f"vol_{e:g}y" for e in self.vol_expiries]


@dataclass(frozen=True)
class ModelState:
    factors: tuple[float, ...]

    def __post_init__(self):
        f = tuple(float(x) for x in self.factors)
        if not f:
            raise ValueError("model state needs at least one factor")
        if not all(math.isfinite(x) for x in f):
            raise ValueError(f"non-finite model state {f}")
        object.__setattr__(self, "factors", f)

    @property
    def rate(self) -> float:
        return self.factors[RATE]

    @property
    def vol(self) -> float:
        return math.exp(self.factors[LOGVOL]) if len(self.factors) > 1 else float("nan")


@dataclass(frozen=True)
class MarketState:
    swap_rates: tuple[float, ...]
    vols: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "swap_rates", tuple(float(x) for x in self.swap_rates))
        object.__setattr__(self, "vols", tuple(float(x) for x in self.vols))
        if any(v <= 0 for v in self.vols):
            raise ValueError(f"vols must be positive, got {self.vols}")

    def as_vector(self) -> np.ndarray:
        return np.array(self.swap_rates + self.vols, dtype=float)

    @classmethod
    def from_vector(cls, vec, pillars: PillarConfig) -> "MarketState":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (pillars.n_factors,):
            raise ValueError(f"expected {pillars.n_factors} factors, got shape {vec.shape}")
        return cls(tuple(vec[: pillars.n_rates]), tuple(vec[pillars.n_rates :]))


def g_matrix(model: np.ndarray, hw: HullWhiteParams, pillars: PillarConfig) -> np.ndarray:
    """Vectorised ``g``: model states ``(N, 2)`` to market vectors ``(N, n)``."""
    model = np.atleast_2d(np.asarray(model, dtype=float))
    r = model[:, RATE]
    max_t = pillars.swap_tenors[-1]
    # annual bonds P(k), k = 1..max_t, one column each
    bonds = [hw.bond(r, float(k)) for k in range(1, max_t + 1)]
    out = np.empty((model.shape[0], pillars.n_factors))
    annuity = np.zeros_like(r)
    col = 0
    for k in range(1, max_t + 1):
        annuity = annuity + bonds[k - 1]
        if k in pillars.swap_tenors:
            out[:, col] = (1.0 - bonds[k - 1]) / annuity
            col += 1
    vol = np.exp(model[:, LOGVOL]) if model.shape[1] > 1 else np.full_like(r, np.nan)
    for j in range(pillars.n_vols):
        out[:, pillars.n_rates + j] = vol
    return out


def g_map(state: ModelState, hw: HullWhiteParams, pillars: PillarConfig) -> MarketState:
    vec = g_matrix(np.array([state.factors]), hw, pillars)[0]
    return MarketState.from_vector(vec, pillars)


def _path_seed(seed: int, stream: int, path: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream, path))))


def _correlated_normals(rng: np.random.Generator, n: int, rho: float) -> np.ndarray:
    z = rng.standard_normal((n, 2))
    z[:, 1] = rho * z[:, 0] + math.sqrt(1.0 - rho * rho) * z[:, 1]
    return z


def _step(r, y, dt, z, hw: HullWhiteParams, sabr: SabrParams):
    """Exact OU step for r and exact lognormal step for y = log(alpha)."""
    nu = sabr.vol_of_vol
    r_new = hw.mean(r, dt) + hw.stdev(dt) * z[..., 0]
    y_new = y - 0.5 * nu * nu * dt + nu * math.sqrt(dt) * z[..., 1]
    return r_new, y_new


@dataclass(frozen=True)
class ScenarioCube:
    """Simulated model states and the market states ``g`` derives from them.

    ``model_states`` has shape ``(paths, T, 2)`` and ``market_states`` shape
    ``(paths, T, n_factors)``. Both arrays are read-only.
    """

    paths: int
    time_points: tuple[float, ...]
    model_states: np.ndarray = field(repr=False)
    market_states: np.ndarray = field(repr=False)
    seed: int
    hw: HullWhiteParams
    sabr: SabrParams
    pillars: PillarConfig

    @property
    def n_times(self) -> int:
        return len(self.time_points)

    def model_state(self, path: int, t_index: int) -> ModelState:
        return ModelState(tuple(self.model_states[path, t_index]))

    def market_state(self, path: int, t_index: int) -> MarketState:
        return MarketState.from_vector(self.market_states[path, t_index], self.pillars)

    def to_csv(self, path) -> None:
        names = self.pillars.factor_names()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path", "time", "rate", "log_vol", *names])
            for p in range(self.paths):
                for ti, t in enumerate(self.time_points):
                    w.writerow(
                        [p, repr(t), *(repr(float(x)) for x in self.model_states[p, ti]),
                         *(repr(float(x)) for x in self.market_states[p, ti])]
                    )


def _validate_times(time_points: Sequence[float]) -> tuple[float, ...]:
    tp = tuple(float(t) for t in time_points)
    if not tp:
        raise ValueError("need at least one time point")
    if tp[0] <= 0 or any(b <= a for a, b in zip(tp, tp[1:])):
        raise ValueError(f"time points must be strictly increasing and > 0, got {tp}")
    return tp


def simulate(
    hw: HullWhiteParams,
    sabr: SabrParams,
    paths: int,
    time_points: Sequence[float],
    seed: int,
    pillars: PillarConfig | None = None,
) -> ScenarioCube:
    """Simulate ``paths`` independent paths on ``time_points``.

    Each path draws from its own generator keyed by ``(seed, path)``, so the
    cube does not depend on the order in which paths are produced.
    """
    if int(paths) != paths or paths < 1:
        raise ValueError(f"paths must be a positive integer, got {paths}")
    paths = int(paths)
    tp = _validate_times(time_points)
    pillars = pillars or PillarConfig()
    dts = np.diff((0.0,) + tp)

    model = np.empty((paths, len(tp), N_MODEL_FACTORS))
    for p in range(paths):
        z = _correlated_normals(_path_seed(seed, 0, p), len(tp), sabr.correlation)
        r, y = hw.initial_rate, math.log(sabr.initial_vol)
        for ti, dt in enumerate(dts):
            r, y = _step(r, y, float(dt), z[ti], hw, sabr)
            model[p, ti] = (r, y)

    market = g_matrix(model.reshape(-1, N_MODEL_FACTORS), hw, pillars).reshape(paths, len(tp), -1)
    model.flags.writeable = False
    market.flags.writeable = False
    return ScenarioCube(paths, tp, model, market, int(seed), hw, sabr, pillars)


def horizon_states(cube: ScenarioCube, horizon: float) -> tuple[np.ndarray, np.ndarray]:
    """Model and market states ``horizon`` years after every node.

    One extra exact sub-step per node, drawn from a per-path stream separate
    from the main simulation so the cube itself is unchanged.
    """
    if not horizon > 0:
        raise ValueError(f"horizon must be > 0, got {horizon}")
    out = np.empty_like(cube.model_states)
    for p in range(cube.paths):
        z = _correlated_normals(_path_seed(cube.seed, 1, p), cube.n_times, cube.sabr.correlation)
        r, y = _step(cube.model_states[p, :, RATE], cube.model_states[p, :, LOGVOL], horizon, z, cube.hw, cube.sabr)
        out[p, :, RATE] = r
        out[p, :, LOGVOL] = y
    market = g_matrix(out.reshape(-1, N_MODEL_FACTORS), cube.hw, cube.pillars).reshape(cube.market_states.shape)
    return out, market


def check_regeneration(cube: ScenarioCube) -> bool:
    """True when every stored market state equals ``g`` of its model state."""
    regen = g_matrix(cube.model_states.reshape(-1, N_MODEL_FACTORS), cube.hw, cube.pillars)
    return bool(np.array_equal(regen.reshape(cube.market_states.shape), cube.market_states))
