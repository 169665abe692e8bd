"""Run configuration: TOML file -> validated ``RunConfig`` objects.

A config file holds one or more ``[[run]]`` tables. Top-level tables other
than ``run`` are defaults merged into every run (run values win). See
``configs/paper_desk_scale.toml`` for a complete example and README.md for
the key reference.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .pricers import BumpConfig, EuropeanSwaption, Swap, Trade, forward_swap, par_rate, resolve_strike
from .rfem import HullWhiteParams, PillarConfig, SabrParams, g_matrix
from .simm import SimmConfig

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

METHODS = (
    "brute_force",
    "cheb_model_space",
    "cheb_market_space",
    "regression_polynomial",
    "regression_nadaraya_watson",
)


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass(frozen=True)
class RunConfig:
    name: str
    paths: int
    time_points: tuple[float, ...]
    seed: int
    hw: HullWhiteParams
    sabr: SabrParams
    pillars: PillarConfig
    trades: tuple[Trade, ...]
    methods: tuple[str, ...]
    simm: SimmConfig
    bumps: BumpConfig = field(default_factory=BumpConfig)
    model_space_mesh: tuple[int, ...] = (5, 5)
    market_space_mesh: int = 10
    regression_horizon: float = 10.0 / 252.0
    regression_degree: int = 2
    compare_to_benchmark: bool = True
    workers: int = 1

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("methods: at least one method is required")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"methods: unknown {unknown}; choose from {list(METHODS)}")
        if self.compare_to_benchmark and len(self.methods) > 1 and "brute_force" not in self.methods:
            raise ConfigError("methods: brute_force is required to compute profile errors")
        if not self.trades:
            raise ConfigError("trades: at least one trade is required")
        names = [t.name for t in self.trades]
        if len(set(names)) != len(names):
            raise ConfigError(f"trades: names must be unique, got {names}")
        if self.workers < 1:
            raise ConfigError("workers: must be >= 1")

    def with_overrides(self, seed=None, paths=None, methods=None, workers=None) -> "RunConfig":
        kw = {}
        if seed is not None:
            kw["seed"] = int(seed)
        if paths is not None:
            kw["paths"] = int(paths)
        if methods is not None:
            kw["methods"] = tuple(methods)
        if workers is not None:
            kw["workers"] = int(workers)
        return replace(self, **kw)


def _merge(base: dict, over: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _section(d: Mapping, key: str, where: str) -> dict:
    v = d.get(key, {})
    if not isinstance(v, Mapping):
        raise ConfigError(f"{where}.{key}: expected a table")
    return dict(v)


def _build(cls, d: Mapping, where: str, rename: Mapping[str, str] | None = None):
    rename = rename or {}
    kwargs = {rename.get(k, k): v for k, v in d.items()}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _trade(d: Mapping, where: str, hw, sabr, pillars) -> Trade:
    d = dict(d)
    kind = d.pop("type", None)
    initial = g_matrix(np.array([[hw.initial_rate, math.log(sabr.initial_vol)]]), hw, pillars)
    if kind == "swap":
        if d.get("fixed_rate", "par") == "par":
            d["fixed_rate"] = float(par_rate(initial, int(d.get("maturity", 0)) or 1, pillars)[0])
        return _build(Swap, d, where)
    if kind == "swaption":
        label = d.get("moneyness", "")
        if "strike" not in d:
            if not label:
                raise ConfigError(f"{where}: give either strike or moneyness (ATM/ITM/OTM)")
            fwd, _ = forward_swap(initial, float(d["expiry"]), int(d["tenor"]), pillars)
            try:
                d["strike"] = resolve_strike(label, float(fwd[0]), bool(d.get("payer", True)))
            except ValueError as exc:
                raise ConfigError(f"{where}.moneyness: {exc}") from exc
        return _build(EuropeanSwaption, d, where)
    raise ConfigError(f"{where}.type: expected 'swap' or 'swaption', got {kind!r}")


def _simm(d: Mapping, base_dir: Path, pillars: PillarConfig, where: str) -> SimmConfig:
    d = dict(d)
    path = d.pop("path", None)
    try:
        if path is not None:
            p = Path(path)
            if not p.is_absolute():
                p = base_dir / p
            with open(p, "rb") as fh:
                data = tomllib.load(fh)
            merged = _merge(data.get("simm", data), d)
            return SimmConfig.from_dict(merged, pillars)
        return SimmConfig.from_dict(d, pillars)
    except OSError as exc:
        raise ConfigError(f"{where}.path: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_run(d: Mapping, base_dir: Path, where: str = "run") -> RunConfig:
    sim = _section(d, "simulation", where)
    for key in ("paths", "time_points", "seed"):
        if key not in sim:
            raise ConfigError(f"{where}.simulation.{key}: missing")
    hw = _build(HullWhiteParams, _section(d, "hull_white", where), f"{where}.hull_white")
    sabr = _build(SabrParams, _section(d, "sabr", where), f"{where}.sabr")
    pillars = _build(PillarConfig, _section(d, "pillars", where), f"{where}.pillars")
    trades = tuple(
        _trade(t, f"{where}.trades[{i}]", hw, sabr, pillars) for i, t in enumerate(d.get("trades", []))
    )
    cheb = _section(d, "chebyshev", where)
    reg = _section(d, "regression", where)
    bumps = _build(BumpConfig, _section(d, "bumps", where), f"{where}.bumps", {"rate": "rate_bump", "vol": "vol_bump"})
    mesh = cheb.get("model_space_mesh", 5)
    mesh = (int(mesh),) * 2 if isinstance(mesh, (int, float)) else tuple(int(m) for m in mesh)
    if len(mesh) != 2 or min(mesh) < 2:
        raise ConfigError(f"{where}.chebyshev.model_space_mesh: need two sizes >= 2, got {mesh}")
    market_mesh = int(cheb.get("market_space_mesh", 10))
    if market_mesh < 2:
        raise ConfigError(f"{where}.chebyshev.market_space_mesh: must be >= 2")
    try:
        time_points = tuple(float(t) for t in sim["time_points"])
        if not time_points or time_points[0] <= 0 or any(b <= a for a, b in zip(time_points, time_points[1:])):
            raise ValueError("must be strictly increasing and > 0")
        paths = int(sim["paths"])
        if paths < 1:
            raise ValueError("paths must be >= 1")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.simulation: {exc}") from exc
    return RunConfig(
        name=str(d.get("name", "run")),
        paths=paths,
        time_points=time_points,
        seed=int(sim["seed"]),
        hw=hw,
        sabr=sabr,
        pillars=pillars,
        trades=trades,
        methods=tuple(d.get("methods", METHODS)),
        simm=_simm(_section(d, "simm", where), base_dir, pillars, f"{where}.simm"),
        bumps=bumps,
        model_space_mesh=mesh,
        market_space_mesh=market_mesh,
        regression_horizon=float(reg.get("horizon_days", 10)) / 252.0,
        regression_degree=int(reg.get("degree", 2)),
        compare_to_benchmark=bool(d.get("compare_to_benchmark", True)),
        workers=int(d.get("workers", 1)),
    )


def load_config(path) -> list[RunConfig]:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    runs = data.pop("run", None)
    if runs is None:
        runs = [{}]
    if not isinstance(runs, list):
        raise ConfigError("run: expected an array of tables ([[run]])")
    configs = [parse_run(_merge(data, r), path.parent, f"run[{i}]") for i, r in enumerate(runs)]
    names = [c.name for c in configs]
    if len(set(names)) != len(names):
        raise ConfigError(f"run names must be unique, got {names}")
    return configs


def packaged_config(name: str = "paper_desk_scale") -> Path:
    """Path of a config shipped with the package."""
    return Path(__file__).parent / "configs" / f"{name}.toml"
