"""Single-bucket SIMM-style margin from a sensitivity vector.

Weighted sensitivities ``WS_k = RW_k * s_k`` are aggregated as
``sqrt(WS' C WS)`` separately over the rate pillars (delta) and the vol
pillars (vega); the margin is the sum of the two. Risk weights are expressed
as absolute shocks in the units of the factor (0.0060 = 60bp).

The shipped defaults are illustrative, not ISDA-calibrated.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .rfem import PillarConfig

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = ["SimmConfig", "MarginResult", "simm_margin", "simm_margin_many", "decay_correlation"]


def decay_correlation(tenors: Sequence[float], floor: float = 0.5, decay: float = 0.2) -> np.ndarray:
    """``floor + (1 - floor) * exp(-decay * |T_k - T_l|)``; PSD for floor in [0, 1]."""
    t = np.asarray(tenors, dtype=float)
    return floor + (1.0 - floor) * np.exp(-decay * np.abs(t[:, None] - t[None, :]))


def _check_corr(name: str, m: np.ndarray, size: int) -> np.ndarray:
    m = np.array(m, dtype=float)
    if m.shape != (size, size):
        raise ValueError(f"{name} must be {size}x{size}, got shape {m.shape}")
    if not np.allclose(m, m.T, rtol=0, atol=1e-12):
        raise ValueError(f"{name} is not symmetric")
    if not np.all(np.diag(m) == 1.0):
        raise ValueError(f"{name} must have a unit diagonal")
    if np.any(np.abs(m) > 1):
        raise ValueError(f"{name} entries must lie in [-1, 1]")
    if size and np.linalg.eigvalsh(m).min() < -1e-10:
        raise ValueError(f"{name} is not positive semidefinite")
    m.flags.writeable = False
    return m


@dataclass(frozen=True)
class SimmConfig:
    delta_risk_weights: tuple[float, ...]
    vega_risk_weights: tuple[float, ...]
    correlations: np.ndarray
    vega_correlations: np.ndarray
    quantile_z: float = 2.326

    def __post_init__(self):
        drw = tuple(float(x) for x in self.delta_risk_weights)
        vrw = tuple(float(x) for x in self.vega_risk_weights)
        if any(not w > 0 for w in drw + vrw):
            raise ValueError("risk weights must be positive")
        object.__setattr__(self, "delta_risk_weights", drw)
        object.__setattr__(self, "vega_risk_weights", vrw)
        object.__setattr__(self, "correlations", _check_corr("correlations", self.correlations, len(drw)))
        object.__setattr__(
            self, "vega_correlations", _check_corr("vega_correlations", self.vega_correlations, len(vrw))
        )
        if not self.quantile_z > 0:
            raise ValueError("quantile_z must be positive")

    @property
    def n_rates(self) -> int:
        return len(self.delta_risk_weights)

    @property
    def n_vols(self) -> int:
        return len(self.vega_risk_weights)

    @classmethod
    def default(cls, pillars: PillarConfig | None = None) -> "SimmConfig":
        pillars = pillars or PillarConfig()
        return cls.from_dict({}, pillars)

    @classmethod
    def from_dict(cls, d: Mapping, pillars: PillarConfig) -> "SimmConfig":
        """Build from a config section.

        Keys: ``delta_risk_weight`` (scalar or per-pillar list),
        ``vega_risk_weight`` (scalar or list), ``correlation_floor`` and
        ``correlation_decay`` or an explicit ``correlations`` matrix (same for
        ``vega_correlations``), and ``quantile_z``.
        """
        known = {
            "delta_risk_weight", "vega_risk_weight", "correlation_floor", "correlation_decay",
            "correlations", "vega_correlations", "quantile_z",
        }
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown simm keys: {sorted(unknown)}")

        def weights(key, default, n):
            v = d.get(key, default)
            if isinstance(v, (int, float)):
                return [float(v)] * n
            if len(v) != n:
                raise ValueError(f"simm.{key} has {len(v)} entries, layout needs {n}")
            return [float(x) for x in v]

        floor = float(d.get("correlation_floor", 0.5))
        decay = float(d.get("correlation_decay", 0.2))
        corr = d.get("correlations")
        if corr is None:
            corr = decay_correlation(pillars.swap_tenors, floor, decay)
        vcorr = d.get("vega_correlations")
        if vcorr is None:
            vcorr = decay_correlation(pillars.vol_expiries, floor, decay)
        return cls(
            weights("delta_risk_weight", 0.0050, pillars.n_rates),
            weights("vega_risk_weight", 0.0100, pillars.n_vols),
            np.asarray(corr, dtype=float),
            np.asarray(vcorr, dtype=float),
            float(d.get("quantile_z", 2.326)),
        )

    @classmethod
    def from_file(cls, path, pillars: PillarConfig) -> "SimmConfig":
        with open(Path(path), "rb") as fh:
            data = tomllib.load(fh)
        return cls.from_dict(data.get("simm", data), pillars)


@dataclass(frozen=True)
class MarginResult:
    delta_margin: float
    vega_margin: float

    @property
    def total(self) -> float:
        return self.delta_margin + self.vega_margin


def _quadratic_margin(ws: np.ndarray, corr: np.ndarray) -> np.ndarray:
    # explicit loops keep the summation order fixed whatever the batch size
    n = ws.shape[1]
    q = np.zeros(ws.shape[0])
    for k in range(n):
        for l in range(n):
            q = q + corr[k, l] * ws[:, k] * ws[:, l]
    return np.sqrt(np.maximum(q, 0.0))


def simm_margin_many(sens: np.ndarray, config: SimmConfig) -> tuple[np.ndarray, np.ndarray]:
    """Delta and vega margins for a batch of sensitivity rows."""
    sens = np.atleast_2d(np.asarray(sens, dtype=float))
    n = config.n_rates + config.n_vols
    if sens.shape[1] != n:
        raise ValueError(f"got {sens.shape[1]} sensitivities, config expects {n}")
    ws_d = sens[:, : config.n_rates] * np.array(config.delta_risk_weights)
    ws_v = sens[:, config.n_rates :] * np.array(config.vega_risk_weights)
    return _quadratic_margin(ws_d, config.correlations), _quadratic_margin(ws_v, config.vega_correlations)


def simm_margin(sensitivities: Sequence[float], config: SimmConfig) -> MarginResult:
    delta, vega = simm_margin_many(np.asarray(sensitivities, dtype=float)[None, :], config)
    return MarginResult(float(delta[0]), float(vega[0]))
