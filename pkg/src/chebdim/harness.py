"""Experiment orchestration: simulate once, run each DIM method, write CSVs.

Files written to the output directory of a run:

``surface_<trade>.csv``   path,time,im,method
``profile_<trade>.csv``   time,eim,q95,method
``plot_<trade>.dat``      whitespace columns: time, then eim/q95 per method
``summary.csv``           trade,method,profile_kind,eq5_error,skipped_points,pricer_calls
``timing.csv``            trade,method,wall_time_ms

Everything except ``timing.csv`` is a pure function of the config and seed.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import dim_methods as dm
from .config import RunConfig
from .rfem import simulate

log = logging.getLogger(__name__)

SUMMARY_HEADER = ["trade", "method", "profile_kind", "eq5_error", "skipped_points", "pricer_calls"]
TIMING_HEADER = ["trade", "method", "wall_time_ms"]
BENCHMARK = "brute_force"


class RunError(RuntimeError):
    """A DIM method failed; the message names the method and trade."""


@dataclass
class MethodResult:
    trade: str
    method: str
    pricer_calls: int
    wall_time_ms: float
    errors: dict[str, dm.ProfileError] = field(default_factory=dict)


@dataclass
class RunSummary:
    name: str
    results: list[MethodResult] = field(default_factory=list)

    def rows(self, trade: str | None = None) -> list[MethodResult]:
        return [r for r in self.results if trade is None or r.trade == trade]

    def trades(self) -> list[str]:
        seen = []
        for r in self.results:
            if r.trade not in seen:
                seen.append(r.trade)
        return seen

    def calls(self, trade: str, method: str) -> int:
        for r in self.results:
            if r.trade == trade and r.method == method:
                return r.pricer_calls
        raise KeyError((trade, method))

    def error(self, trade: str, method: str, kind: str) -> dm.ProfileError:
        for r in self.results:
            if r.trade == trade and r.method == method:
                return r.errors[kind]
        raise KeyError((trade, method))


def _fmt(x: float) -> str:
    return repr(float(x))


def _run_method(method: str, cube, trade, cfg: RunConfig) -> dm.DimSurface:
    if method == "brute_force":
        return dm.brute_force_dim(cube, trade, cfg.bumps, cfg.simm, cfg.workers)[1]
    if method == "cheb_model_space":
        return dm.cheb_model_space_dim(cube, trade, cfg.model_space_mesh, cfg.bumps, cfg.simm, cfg.workers)[1]
    if method == "cheb_market_space":
        return dm.cheb_market_space_dim(cube, trade, cfg.market_space_mesh, cfg.bumps, cfg.simm, cfg.workers)[1]
    variant = {"regression_polynomial": "polynomial", "regression_nadaraya_watson": "nadaraya_watson"}[method]
    return dm.regression_dim(
        cube, trade, variant, cfg.regression_horizon, cfg.simm.quantile_z, cfg.regression_degree, cfg.workers
    )


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


def _plot_data(profiles: dict[str, dm.DimProfile]) -> str:
    methods = list(profiles)
    cols = ["time"] + [f"{m}_{k}" for m in methods for k in ("eim", "q95")]
    lines = ["# " + " ".join(cols)]
    times = next(iter(profiles.values())).time_points
    for ti, t in enumerate(times):
        vals = [_fmt(t)] + [_fmt(profiles[m].kind(k)[ti]) for m in methods for k in ("eim", "q95")]
        lines.append(" ".join(vals))
    return "\n".join(lines) + "\n"


def run(cfg: RunConfig, out_dir) -> RunSummary:
    """Simulate once, run every requested method on every trade, write outputs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log.info("run %s: simulating %d paths x %d time points", cfg.name, cfg.paths, len(cfg.time_points))
    cube = simulate(cfg.hw, cfg.sabr, cfg.paths, cfg.time_points, cfg.seed, cfg.pillars)
    summary = RunSummary(cfg.name)
    # benchmark first so errors can be computed as each method finishes
    methods = sorted(cfg.methods, key=lambda m: m != BENCHMARK)

    for trade in cfg.trades:
        profiles: dict[str, dm.DimProfile] = {}
        surface_rows = []
        for method in methods:
            start = time.perf_counter()
            try:
                surface = _run_method(method, cube, trade, cfg)
            except Exception as exc:
                raise RunError(f"method {method} failed on trade {trade.name}: {exc}") from exc
            elapsed = 1000.0 * (time.perf_counter() - start)
            prof = dm.profiles(surface)
            profiles[method] = prof
            res = MethodResult(trade.name, method, surface.pricer_calls, elapsed)
            if cfg.compare_to_benchmark and method != BENCHMARK and BENCHMARK in profiles:
                try:
                    res.errors = dm.profile_error(profiles[BENCHMARK], prof)
                except dm.UndefinedMetricError as exc:
                    log.warning("%s/%s: no profile error: %s", trade.name, method, exc)
            summary.results.append(res)
            for p in range(cube.paths):
                for ti, t in enumerate(cube.time_points):
                    surface_rows.append((p, _fmt(t), _fmt(surface.im[p, ti]), method))
            log.info("%s/%s: %d pricer calls, %.0f ms", trade.name, method, surface.pricer_calls, elapsed)

        _write_csv(out / f"surface_{trade.name}.csv", ["path", "time", "im", "method"], surface_rows)
        _write_csv(
            out / f"profile_{trade.name}.csv",
            ["time", "eim", "q95", "method"],
            [
                (_fmt(t), _fmt(pr.eim[ti]), _fmt(pr.q95[ti]), m)
                for m, pr in profiles.items()
                for ti, t in enumerate(pr.time_points)
            ],
        )
        (out / f"plot_{trade.name}.dat").write_text(_plot_data(profiles), encoding="utf-8")

    write_summary(summary, out / "summary.csv")
    _write_csv(
        out / "timing.csv", TIMING_HEADER, [(r.trade, r.method, f"{r.wall_time_ms:.1f}") for r in summary.results]
    )
    return summary


def write_summary(summary: RunSummary, path) -> None:
    rows = []
    for r in summary.results:
        if not r.errors:
            rows.append((r.trade, r.method, "", "", "", r.pricer_calls))
        for kind, e in r.errors.items():
            rows.append((r.trade, r.method, kind, _fmt(e.value), e.skipped, r.pricer_calls))
    _write_csv(Path(path), SUMMARY_HEADER, rows)


def read_summary(path) -> RunSummary:
    """Rebuild a summary from ``summary.csv`` (and ``timing.csv`` beside it)."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SUMMARY_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        rows = list(reader)
    timings = {}
    tpath = path.with_name("timing.csv")
    if tpath.exists():
        with open(tpath, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                timings[(row["trade"], row["method"])] = float(row["wall_time_ms"])
    summary = RunSummary(path.parent.name)
    index: dict[tuple[str, str], MethodResult] = {}
    for row in rows:
        key = (row["trade"], row["method"])
        res = index.get(key)
        if res is None:
            res = MethodResult(key[0], key[1], int(row["pricer_calls"]), timings.get(key, float("nan")))
            index[key] = res
            summary.results.append(res)
        if row["profile_kind"]:
            res.errors[row["profile_kind"]] = dm.ProfileError(float(row["eq5_error"]), int(row["skipped_points"]))
    return summary


_LABELS = {
    "brute_force": "Benchmark",
    "cheb_model_space": "Chebyshev on Model Space",
    "cheb_market_space": "Chebyshev on Market Space",
    "regression_polynomial": "Polynomial regression",
    "regression_nadaraya_watson": "Nadaraya-Watson regression",
}


def _table(header: list[str], rows: list[list[str]]) -> list[str]:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    fmt = "  ".join("{:<%d}" % w for w in widths)
    sep = "  ".join("-" * w for w in widths)
    return [fmt.format(*header), sep] + [fmt.format(*r) for r in rows]


def compare(summary: RunSummary) -> str:
    """Error tables (relative profile error per trade) and a cost table."""
    out = [f"== {summary.name} =="]
    methods = []
    for r in summary.results:
        if r.method not in methods:
            methods.append(r.method)
    trades = summary.trades()
    error_methods = [m for m in methods if any(r.errors for r in summary.results if r.method == m)]

    if error_methods:
        header = ["DIM profile"] + [f"{t} {k.upper() if k == 'eim' else '95%'}" for t in trades for k in ("eim", "q95")]
        rows = []
        if BENCHMARK in methods:
            rows.append([_LABELS[BENCHMARK]] + ["reference"] * (2 * len(trades)))
        for m in error_methods:
            row = [_LABELS.get(m, m)]
            for t in trades:
                for k in ("eim", "q95"):
                    try:
                        e = summary.error(t, m, k)
                        row.append(f"{e.value:.2e}" + (f" ({e.skipped} skipped)" if e.skipped else ""))
                    except KeyError:
                        row.append("-")
            rows.append(row)
        out += ["", "Relative profile error (mean over time of |bm - alt| / bm)"] + _table(header, rows)

    header = ["Method", "Trade", "Pricer calls", "vs benchmark", "Wall time (ms)"]
    rows = []
    for t in trades:
        try:
            bm = summary.calls(t, BENCHMARK)
        except KeyError:
            bm = None
        for r in summary.rows(t):
            ratio = f"1/{bm / r.pricer_calls:.1f}" if bm and r.pricer_calls else "-"
            if r.method == BENCHMARK:
                ratio = "1"
            wall = "-" if r.wall_time_ms != r.wall_time_ms else f"{r.wall_time_ms:.0f}"
            rows.append([_LABELS.get(r.method, r.method), t, str(r.pricer_calls), ratio, wall])
    out += ["", "Computational burden"] + _table(header, rows)
    return "\n".join(out) + "\n"
