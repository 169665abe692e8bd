"""Trades, present values on market states, and bump-and-reprice sensitivities.

A market vector holds par swap rates at the pillar tenors followed by the SABR
``alpha`` at each vol pillar. Discount factors are bootstrapped from the par
rates (annual fixed coupons, par rates linear in tenor between pillars, flat
before the first pillar) and interpolated log-linearly in time.

Every evaluated market state counts as one pricer call on the supplied
``CallCounter``; the batch functions count one call per row.
"""

from __future__ import annotations

import math
import threading
import warnings
from collections import defaultdict
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import ndtr

from .rfem import MarketState, PillarConfig, SabrParams

__all__ = [
    "Swap",
    "EuropeanSwaption",
    "Trade",
    "PricingEnv",
    "BumpConfig",
    "SensitivityRequest",
    "CallCounter",
    "discount_factors",
    "par_rate",
    "forward_swap",
    "hagan_lognormal_vol",
    "black",
    "pv_many",
    "price",
    "price_many",
    "fd_sensitivity",
    "fd_sensitivity_many",
    "all_sensitivities",
    "all_sensitivities_many",
    "resolve_strike",
]


@dataclass(frozen=True)
class Swap:
    notional: float
    fixed_rate: float
    maturity: int
    payer: bool = True
    name: str = "swap"

    def __post_init__(self):
        if self.notional == 0:
            raise ValueError("notional must be nonzero")
        if int(self.maturity) != self.maturity or self.maturity < 1:
            raise ValueError(f"swap maturity must be a whole number of years >= 1, got {self.maturity}")

    @property
    def end(self) -> float:
        return float(self.maturity)


@dataclass(frozen=True)
class EuropeanSwaption:
    """Option at ``expiry`` to enter a ``tenor``-year annual swap at ``strike``."""

    notional: float
    strike: float
    expiry: float
    tenor: int
    payer: bool = True
    moneyness: str = ""
    name: str = "swaption"

    def __post_init__(self):
        if self.notional == 0:
            raise ValueError("notional must be nonzero")
        if not self.expiry > 0:
            raise ValueError(f"expiry must be positive, got {self.expiry}")
        if int(self.tenor) != self.tenor or self.tenor < 1:
            raise ValueError(f"tenor must be a whole number of years >= 1, got {self.tenor}")

    @property
    def end(self) -> float:
        return float(self.expiry)


Trade = Union[Swap, EuropeanSwaption]


@dataclass(frozen=True)
class PricingEnv:
    """Fixed pricing inputs: the market-vector layout and the smile parameters."""

    pillars: PillarConfig
    sabr: SabrParams | None = None


@dataclass(frozen=True)
class SensitivityRequest:
    factor_index: int
    bump_size: float

    def __post_init__(self):
        if not self.bump_size > 0:
            raise ValueError(f"bump_size must be > 0, got {self.bump_size}")


@dataclass(frozen=True)
class BumpConfig:
    rate_bump: float = 1e-4
    vol_bump: float = 1e-3

    def __post_init__(self):
        if not (self.rate_bump > 0 and self.vol_bump > 0):
            raise ValueError(f"bump sizes must be > 0, got rate={self.rate_bump}, vol={self.vol_bump}")

    def request(self, factor_index: int, pillars: PillarConfig) -> SensitivityRequest:
        if not 0 <= factor_index < pillars.n_factors:
            raise IndexError(f"factor index {factor_index} out of range 0..{pillars.n_factors - 1}")
        bump = self.rate_bump if factor_index < pillars.n_rates else self.vol_bump
        return SensitivityRequest(factor_index, bump)


class CallCounter:
    """Thread-safe pricer-call tally, split by label."""

    def __init__(self, label: str = ""):
        self.label = label
        self._counts: dict[str, int] = defaultdict(int)
        self._lock = threading.Lock()

    def add(self, n: int = 1, label: str | None = None) -> None:
        if n < 0:
            raise ValueError("call counts never decrease")
        with self._lock:
            self._counts[self.label if label is None else label] += int(n)

    @property
    def total(self) -> int:
        with self._lock:
            return sum(self._counts.values())

    def by_label(self) -> dict[str, int]:
        with self._lock:
            return dict(self._counts)

    def merge(self, other: "CallCounter") -> None:
        for label, n in other.by_label().items():
            self.add(n, label)

    def __repr__(self):
        return f"CallCounter({self.by_label()})"


def _as_rows(market, pillars: PillarConfig) -> np.ndarray:
    if isinstance(market, MarketState):
        market = market.as_vector()
    rows = np.atleast_2d(np.asarray(market, dtype=float))
    if rows.shape[1] != pillars.n_factors:
        raise ValueError(f"market vector has {rows.shape[1]} factors, layout expects {pillars.n_factors}")
    return rows


def _log_dfs(rows: np.ndarray, pillars: PillarConfig) -> np.ndarray:
    """Log discount factors at 0, 1, ..., max tenor, one row per market state."""
    tenors = pillars.swap_tenors
    rates = rows[:, : pillars.n_rates]
    max_t = tenors[-1]
    out = np.zeros((rows.shape[0], max_t + 1))
    annuity = np.zeros(rows.shape[0])
    for k in range(1, max_t + 1):
        j = int(np.searchsorted(tenors, k))
        if j == 0 or tenors[j] == k:
            s = rates[:, j]
        else:
            t0, t1 = tenors[j - 1], tenors[j]
            w = (k - t0) / (t1 - t0)
            s = (1.0 - w) * rates[:, j - 1] + w * rates[:, j]
        p = (1.0 - s * annuity) / (1.0 + s)
        annuity = annuity + p
        out[:, k] = np.log(p)
    return out


def _df_at(log_dfs: np.ndarray, tau: float) -> np.ndarray:
    max_t = log_dfs.shape[1] - 1
    if tau <= 0:
        return np.ones(log_dfs.shape[0])
    k = min(int(math.floor(tau)), max_t - 1)
    w = tau - k
    return np.exp((1.0 - w) * log_dfs[:, k] + w * log_dfs[:, k + 1])


def discount_factors(market, taus, pillars: PillarConfig) -> np.ndarray:
    """Discount factors at year fractions ``taus``; shape ``(rows, len(taus))``."""
    ld = _log_dfs(_as_rows(market, pillars), pillars)
    return np.stack([_df_at(ld, float(t)) for t in taus], axis=1)


def par_rate(market, tenor: int, pillars: PillarConfig) -> np.ndarray:
    """Spot-starting annual par swap rate for a whole-year tenor."""
    df = discount_factors(market, range(1, tenor + 1), pillars)
    annuity = np.zeros(df.shape[0])
    for k in range(tenor):
        annuity = annuity + df[:, k]
    return (1.0 - df[:, -1]) / annuity


def _forward_swap(ld: np.ndarray, start: float, tenor: int):
    p_start = _df_at(ld, start)
    annuity = np.zeros(ld.shape[0])
    for k in range(1, tenor + 1):
        annuity = annuity + _df_at(ld, start + k)
    p_end = _df_at(ld, start + tenor)
    return (p_start - p_end) / annuity, annuity


def forward_swap(market, start: float, tenor: int, pillars: PillarConfig):
    """Forward par rate and annuity of a swap starting ``start`` years ahead."""
    return _forward_swap(_log_dfs(_as_rows(market, pillars), pillars), start, tenor)


def _z_over_x(z, rho):
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-4
    zs = np.where(small, 1.0, z)
    xz = np.log((np.sqrt(1.0 - 2.0 * rho * zs + zs * zs) + zs - rho) / (1.0 - rho))
    series = 1.0 - 0.5 * rho * z + (1.0 / 6.0 - 0.25 * rho * rho) * z * z + (5.0 * rho / 24.0 - 0.25 * rho**3) * z**3
    return np.where(small, series, zs / xz)


def hagan_lognormal_vol(forward, strike, expiry, alpha, beta, rho, nu, shift=0.0):
    """Hagan et al. (2002) lognormal implied vol, optionally displaced by ``shift``."""
    f = np.asarray(forward, dtype=float) + shift
    k = np.asarray(strike, dtype=float) + shift
    alpha = np.asarray(alpha, dtype=float)
    omb = 1.0 - beta
    fk = f * k
    fk_b = fk ** (0.5 * omb)
    log_fk = np.log(f / k)
    denom = fk_b * (1.0 + omb**2 / 24.0 * log_fk**2 + omb**4 / 1920.0 * log_fk**4)
    z = nu / alpha * fk_b * log_fk
    corr = 1.0 + (
        omb**2 / 24.0 * alpha**2 / fk**omb + 0.25 * rho * beta * nu * alpha / fk_b + (2.0 - 3.0 * rho**2) / 24.0 * nu**2
    ) * expiry
    return alpha / denom * _z_over_x(z, rho) * corr


def black(forward, strike, vol, expiry, payer=True):
    """Undiscounted Black price per unit annuity."""
    forward = np.asarray(forward, dtype=float)
    sd = np.asarray(vol, dtype=float) * math.sqrt(expiry)
    d1 = np.log(forward / strike) / sd + 0.5 * sd
    d2 = d1 - sd
    if payer:
        return forward * ndtr(d1) - strike * ndtr(d2)
    return strike * ndtr(-d2) - forward * ndtr(-d1)


def _vol_column(trade: EuropeanSwaption, pillars: PillarConfig) -> int:
    exps = np.array(pillars.vol_expiries)
    if exps.size == 0:
        raise ValueError("swaption pricing needs at least one vol pillar")
    return pillars.n_rates + int(np.argmin(np.abs(exps - trade.expiry)))


def _swap_pv(trade: Swap, ld: np.ndarray, t: float) -> np.ndarray:
    pay_times = [k - t for k in range(1, trade.maturity + 1) if k > t]
    fixed = np.zeros(ld.shape[0])
    for tau in pay_times:
        fixed = fixed + _df_at(ld, tau)
    floating = 1.0 - _df_at(ld, trade.maturity - t)
    sign = 1.0 if trade.payer else -1.0
    return sign * trade.notional * (floating - trade.fixed_rate * fixed)


def _swaption_pv(trade: EuropeanSwaption, rows: np.ndarray, ld: np.ndarray, t: float, env: PricingEnv) -> np.ndarray:
    tau = trade.expiry - t
    fwd, annuity = _forward_swap(ld, tau, trade.tenor)
    k = trade.strike
    if tau <= 0:
        payoff = np.maximum(fwd - k, 0.0) if trade.payer else np.maximum(k - fwd, 0.0)
        return trade.notional * annuity * payoff
    sabr = env.sabr
    if sabr is None:
        raise ValueError("swaption pricing needs SABR parameters in the pricing env")
    alpha = rows[:, _vol_column(trade, env.pillars)]
    vol = hagan_lognormal_vol(fwd, k, tau, alpha, sabr.beta, sabr.correlation, sabr.vol_of_vol, sabr.shift)
    undisc = black(fwd + sabr.shift, k + sabr.shift, vol, tau, trade.payer)
    return trade.notional * annuity * undisc


def pv_many(trade: Trade, rows: np.ndarray, t: float, env: PricingEnv) -> np.ndarray:
    """Present values for a batch of market vectors. Does not count calls."""
    rows = _as_rows(rows, env.pillars)
    if t > trade.end or (isinstance(trade, Swap) and t >= trade.end):
        return np.zeros(rows.shape[0])
    ld = _log_dfs(rows, env.pillars)
    if isinstance(trade, Swap):
        return _swap_pv(trade, ld, t)
    if isinstance(trade, EuropeanSwaption):
        return _swaption_pv(trade, rows, ld, t, env)
    raise TypeError(f"unsupported trade type {type(trade).__name__}")


def price_many(trade: Trade, rows, t: float, env: PricingEnv, counter: CallCounter | None = None) -> np.ndarray:
    rows = _as_rows(rows, env.pillars)
    if counter is not None:
        counter.add(rows.shape[0])
    return pv_many(trade, rows, t, env)


def price(trade: Trade, market, t: float, env: PricingEnv, counter: CallCounter | None = None) -> float:
    """PV of ``trade`` at time ``t``; zero, with a warning, once it has expired."""
    if t > trade.end or (isinstance(trade, Swap) and t >= trade.end):
        warnings.warn(f"{trade.name} expired at t={trade.end}, pricing as 0", stacklevel=2)
    return float(price_many(trade, market, t, env, counter)[0])


def fd_sensitivity_many(
    trade: Trade, rows, t: float, request: SensitivityRequest, env: PricingEnv, counter: CallCounter | None = None
) -> np.ndarray:
    """Central difference in one market factor for every row (2 calls per row)."""
    rows = _as_rows(rows, env.pillars)
    i, h = request.factor_index, request.bump_size
    if not 0 <= i < env.pillars.n_factors:
        raise IndexError(f"factor index {i} out of range")
    up = rows.copy()
    up[:, i] += h
    dn = rows.copy()
    dn[:, i] -= h
    return (price_many(trade, up, t, env, counter) - price_many(trade, dn, t, env, counter)) / (2.0 * h)


def fd_sensitivity(
    trade: Trade, market, t: float, request: SensitivityRequest, env: PricingEnv, counter: CallCounter | None = None
) -> float:
    return float(fd_sensitivity_many(trade, market, t, request, env, counter)[0])


def all_sensitivities_many(
    trade: Trade, rows, t: float, bumps: BumpConfig, env: PricingEnv, counter: CallCounter | None = None
) -> np.ndarray:
    """Sensitivities to every market factor: shape ``(rows, n_factors)``."""
    rows = _as_rows(rows, env.pillars)
    cols = [
        fd_sensitivity_many(trade, rows, t, bumps.request(i, env.pillars), env, counter)
        for i in range(env.pillars.n_factors)
    ]
    return np.stack(cols, axis=1)


def all_sensitivities(
    trade: Trade, market, t: float, bumps: BumpConfig, env: PricingEnv, counter: CallCounter | None = None
) -> np.ndarray:
    return all_sensitivities_many(trade, market, t, bumps, env, counter)[0]


def resolve_strike(label: str, forward: float, payer: bool = True, offset: float = 0.2) -> float:
    """Strike for a moneyness label: ATM at ``forward``, ITM/OTM at +-20% of it."""
    label = label.upper()
    if label == "ATM":
        return forward
    if label not in ("ITM", "OTM"):
        raise ValueError(f"unknown moneyness label {label!r}; use ATM, ITM or OTM")
    below = (label == "ITM") == payer
    return forward * (1.0 - offset) if below else forward * (1.0 + offset)
