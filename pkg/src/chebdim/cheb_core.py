"""Chebyshev tensors with barycentric evaluation in one and many dimensions.

Grids use the Chebyshev extreme points ``cos(j*pi/n)``, ``j = 0..n``, mapped
affinely onto each interval. Points are stored in that order, so they are
*descending* in every dimension (index 0 is the upper end of the interval).

Tensor values are stored row-major over the dimensions in declared order,
i.e. ``values[i0, i1, ..., i_{d-1}]`` is the sample at
``(points[0][i0], points[1][i1], ...)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "ChebyshevError",
    "OutOfDomainError",
    "Interval",
    "HyperRectangle",
    "ChebyshevGrid",
    "ChebyshevTensor",
    "ConvergenceReport",
    "cheb_points",
    "build_tensor",
    "eval_1d",
    "eval_nd",
    "eval_many",
    "convergence_study",
    "dumps",
    "loads",
]

_FORMAT_TAG = "chebtensor 1"


class ChebyshevError(ValueError):
    """Invalid grid, tensor or sample."""


class OutOfDomainError(ChebyshevError):
    """Evaluation point lies outside the tensor's domain."""

    def __init__(self, dim: int, x: float, lo: float, hi: float):
        self.dim = dim
        super().__init__(f"coordinate {dim} = {x!r} outside [{lo!r}, {hi!r}]")


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ChebyshevError(f"interval bounds must be finite, got [{lo}, {hi}]")
        if not lo < hi:
            raise ChebyshevError(f"degenerate interval [{lo}, {hi}]: need lo < hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi


@dataclass(frozen=True)
class HyperRectangle:
    intervals: tuple[Interval, ...]

    def __post_init__(self):
        ivs = tuple(self.intervals)
        if not ivs:
            raise ChebyshevError("hyper-rectangle needs at least one interval")
        for iv in ivs:
            if not isinstance(iv, Interval):
                raise ChebyshevError(f"expected Interval, got {type(iv).__name__}")
        object.__setattr__(self, "intervals", ivs)

    @classmethod
    def from_bounds(cls, bounds: Sequence[tuple[float, float]]) -> "HyperRectangle":
        return cls(tuple(Interval(lo, hi) for lo, hi in bounds))

    @property
    def dim(self) -> int:
        return len(self.intervals)


def cheb_points(count: int, domain: Interval) -> np.ndarray:
    """Chebyshev extreme points on ``domain``, ordered ``j = 0..count-1``.

    Computed as ``sin(pi*(n - 2j)/(2n))``, which equals ``cos(j*pi/n)`` but is
    exactly antisymmetric (the centre point is exactly 0). The end points are
    pinned to the interval bounds.
    """
    if int(count) != count or count < 2:
        raise ChebyshevError(f"need at least 2 Chebyshev points, got {count}")
    count = int(count)
    n = count - 1
    unit = np.sin(np.pi * (n - 2.0 * np.arange(count)) / (2.0 * n))
    mid = 0.5 * (domain.lo + domain.hi)
    half = 0.5 * (domain.hi - domain.lo)
    pts = mid + half * unit
    pts[0] = domain.hi
    pts[-1] = domain.lo
    return pts


@dataclass(frozen=True)
class ChebyshevGrid:
    domain: HyperRectangle
    counts: tuple[int, ...]
    points: tuple[np.ndarray, ...] = field(repr=False)

    @classmethod
    def build(cls, domain: HyperRectangle, counts: Sequence[int]) -> "ChebyshevGrid":
        counts = tuple(int(c) for c in counts)
        if len(counts) != domain.dim:
            raise ChebyshevError(
                f"got {len(counts)} point counts for a {domain.dim}-dimensional domain"
            )
        points = []
        for iv, c in zip(domain.intervals, counts):
            p = cheb_points(c, iv)
            if not np.all(np.diff(p) < 0):
                raise ChebyshevError(f"interval [{iv.lo}, {iv.hi}] too narrow for {c} points")
            p.flags.writeable = False
            points.append(p)
        return cls(domain, counts, tuple(points))

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def size(self) -> int:
        return math.prod(self.counts)

    def nodes(self) -> Iterator[tuple[float, ...]]:
        """Grid nodes in row-major order."""
        for idx in itertools.product(*(range(c) for c in self.counts)):
            yield tuple(float(self.points[d][i]) for d, i in enumerate(idx))


class ChebyshevTensor:
    """Chebyshev grid plus sampled values; evaluates its interpolant.

    Immutable: ``values`` is a read-only array of shape ``grid.counts``.
    """

    __slots__ = ("_grid", "_values")

    def __init__(self, grid: ChebyshevGrid, values):
        vals = np.array(values, dtype=float).reshape(-1)
        if vals.size != grid.size:
            raise ChebyshevError(f"expected {grid.size} values, got {vals.size}")
        if not np.all(np.isfinite(vals)):
            bad = int(np.flatnonzero(~np.isfinite(vals))[0])
            raise ChebyshevError(f"non-finite value at flat index {bad}")
        vals = vals.reshape(grid.counts)
        vals.flags.writeable = False
        self._grid = grid
        self._values = vals

    @property
    def grid(self) -> ChebyshevGrid:
        return self._grid

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def dim(self) -> int:
        return self._grid.dim

    def __call__(self, *point: float) -> float:
        if self.dim == 1:
            return eval_1d(self, point[0])
        return eval_nd(self, point)

    def __repr__(self):
        return f"ChebyshevTensor(counts={self._grid.counts}, domain={self._grid.domain})"


def build_tensor(f: Callable[..., float], grid: ChebyshevGrid) -> ChebyshevTensor:
    """Sample ``f(*node)`` at every grid node, in row-major order.

    ``f`` is called exactly ``grid.size`` times.
    """
    values = np.empty(grid.size)
    for k, node in enumerate(grid.nodes()):
        v = float(f(*node))
        if not math.isfinite(v):
            raise ChebyshevError(f"f returned {v} at node {node}")
        values[k] = v
    return ChebyshevTensor(grid, values)


def _weights(count: int) -> np.ndarray:
    w = np.where(np.arange(count) % 2 == 0, 1.0, -1.0)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def _barycentric(x: float, nodes: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Evaluate the 1-D interpolant along axis 0 of ``values``.

    Every fibre ``values[:, j...]`` is one barycentric evaluation; the result
    has shape ``values.shape[1:]``.
    """
    hit = np.flatnonzero(nodes == x)
    if hit.size:
        return np.array(values[hit[0]], dtype=float)
    with np.errstate(over="ignore"):
        t = _weights(nodes.size) / (x - nodes)
    # a query a subnormal distance from a node overflows its weight
    hit = np.flatnonzero(np.isinf(t))
    if hit.size:
        return np.array(values[hit[0]], dtype=float)
    # offsetting by the first sample makes constant fibres come back exactly
    ref = values[0]
    return ref + np.tensordot(t, values - ref, axes=1) / t.sum()


def _check_point(grid: ChebyshevGrid, point: Sequence[float]) -> list[float]:
    if len(point) != grid.dim:
        raise ChebyshevError(f"point has {len(point)} coordinates, tensor has {grid.dim} dimensions")
    coords = []
    for d, (x, iv) in enumerate(zip(point, grid.domain.intervals)):
        x = float(x)
        if not iv.contains(x):
            raise OutOfDomainError(d, x, iv.lo, iv.hi)
        coords.append(x)
    return coords


def eval_1d(tensor: ChebyshevTensor, x: float) -> float:
    if tensor.dim != 1:
        raise ChebyshevError(f"eval_1d needs a 1-D tensor, got {tensor.dim}-D")
    (x,) = _check_point(tensor.grid, (x,))
    return float(_barycentric(x, tensor.grid.points[0], tensor.values))


def eval_nd(tensor: ChebyshevTensor, point: Sequence[float]) -> float:
    """Evaluate by contracting one dimension at a time, first dimension first.

    Contracting dimension ``k`` of a tensor with ``m_k x ... x m_{d-1}`` values
    performs ``m_{k+1} * ... * m_{d-1}`` one-dimensional evaluations, so a
    uniform ``m^d`` tensor costs ``m^(d-1) + ... + m + 1`` of them.
    """
    coords = _check_point(tensor.grid, point)
    vals = tensor.values
    for d, x in enumerate(coords):
        vals = _barycentric(x, tensor.grid.points[d], vals)
    return float(vals)


def _weight_matrix(xs: np.ndarray, nodes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalised barycentric weights per query, plus the node index hit by
    each query (-1 if it falls between nodes)."""
    diff = xs[:, None] - nodes[None, :]
    with np.errstate(over="ignore"):
        t = _weights(nodes.size)[None, :] / np.where(diff == 0, 1.0, diff)
    hit = (diff == 0) | np.isinf(t)
    index = np.where(hit.any(axis=1), hit.argmax(axis=1), -1)
    t = np.where(hit, 0.0, t)
    s = t.sum(axis=1, keepdims=True)
    return t / np.where(index[:, None] >= 0, 1.0, s), index


def _contract(w: np.ndarray, index: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """Contract axis 1 of per-query ``vals`` (P, m, ...) with weights (P, m)."""
    ref = vals[:, :1]
    out = ref[:, 0] + np.einsum("pi,pi...->p...", w, vals - ref)
    rows = np.flatnonzero(index >= 0)
    out[rows] = vals[rows, index[rows]]
    return out


def eval_many(tensor: ChebyshevTensor, points) -> np.ndarray:
    """Evaluate at many points at once; ``points`` has shape ``(P, d)``.

    Same contraction order as :func:`eval_nd`; node coincidence is still
    detected exactly, so grid nodes return their stored values.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, tensor.dim)
    for d, iv in enumerate(tensor.grid.domain.intervals):
        col = pts[:, d]
        bad = (col < iv.lo) | (col > iv.hi) | ~np.isfinite(col)
        if bad.any():
            raise OutOfDomainError(d, float(col[bad][0]), iv.lo, iv.hi)
    vals = np.broadcast_to(tensor.values, (pts.shape[0],) + tensor.values.shape)
    for d in range(tensor.dim):
        w, index = _weight_matrix(pts[:, d], tensor.grid.points[d])
        vals = _contract(w, index, vals)
    return vals


@dataclass(frozen=True)
class ConvergenceReport:
    counts_tried: list[int]
    max_abs_errors: list[float]
    fitted_decay_rate: float
    fit_r_squared: float = float("nan")


def _probe_points(domain: HyperRectangle, probe_count: int) -> np.ndarray:
    per_dim = max(2, math.ceil(probe_count ** (1.0 / domain.dim)))
    axes = [np.linspace(iv.lo, iv.hi, per_dim) for iv in domain.intervals]
    return np.array(list(itertools.product(*axes)))


def convergence_study(
    f: Callable[..., float],
    domain: HyperRectangle,
    counts: Sequence[int],
    probe_count: int = 1000,
) -> ConvergenceReport:
    """Sup-norm interpolation error of ``f`` against the number of points.

    The decay rate is ``exp(slope)`` of a least-squares line through
    ``log(error)`` against count; errors that are exactly zero are left out of
    the fit. A rate well below 1 indicates geometric convergence.
    """
    counts = [int(c) for c in counts]
    if any(c < 2 for c in counts) or any(b <= a for a, b in zip(counts, counts[1:])):
        raise ChebyshevError(f"counts must be strictly increasing and >= 2, got {counts}")
    if probe_count < 100:
        raise ChebyshevError(f"probe_count must be >= 100, got {probe_count}")

    probes = _probe_points(domain, probe_count)
    exact = np.array([f(*p) for p in probes], dtype=float)
    errors = []
    for c in counts:
        tensor = build_tensor(f, ChebyshevGrid.build(domain, [c] * domain.dim))
        approx = np.array([eval_nd(tensor, p) for p in probes])
        errors.append(float(np.max(np.abs(approx - exact))))

    x = np.array(counts, dtype=float)
    e = np.array(errors)
    mask = e > 0
    rate, r2 = 0.0, float("nan")
    if mask.sum() >= 2:
        slope, intercept = np.polyfit(x[mask], np.log(e[mask]), 1)
        resid = np.log(e[mask]) - (slope * x[mask] + intercept)
        ss_tot = np.sum((np.log(e[mask]) - np.log(e[mask]).mean()) ** 2)
        r2 = 1.0 - float(np.sum(resid**2) / ss_tot) if ss_tot > 0 else 1.0
        rate = float(np.exp(slope))
    return ConvergenceReport(counts, errors, rate, r2)


def dumps(tensor: ChebyshevTensor) -> str:
    """Serialise to the flat text format.

    Header: format tag, ``dims d``, then one ``interval lo hi count`` line per
    dimension; body: ``values N`` followed by one value per line, row-major.
    Floats are written with ``repr`` so the round trip is exact.
    """
    lines = [_FORMAT_TAG, f"dims {tensor.dim}"]
    for iv, c in zip(tensor.grid.domain.intervals, tensor.grid.counts):
        lines.append(f"interval {iv.lo!r} {iv.hi!r} {c}")
    flat = tensor.values.reshape(-1)
    lines.append(f"values {flat.size}")
    lines.extend(repr(float(v)) for v in flat)
    return "\n".join(lines) + "\n"


def loads(text: str) -> ChebyshevTensor:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    try:
        if lines[0] != _FORMAT_TAG:
            raise ChebyshevError(f"unknown tensor format header {lines[0]!r}")
        key, d = lines[1].split()
        if key != "dims":
            raise ChebyshevError(f"expected 'dims', got {key!r}")
        d = int(d)
        intervals, counts = [], []
        for ln in lines[2 : 2 + d]:
            key, lo, hi, c = ln.split()
            if key != "interval":
                raise ChebyshevError(f"expected 'interval', got {key!r}")
            intervals.append(Interval(float(lo), float(hi)))
            counts.append(int(c))
        key, n = lines[2 + d].split()
        if key != "values":
            raise ChebyshevError(f"expected 'values', got {key!r}")
        values = [float(v) for v in lines[3 + d :]]
    except (IndexError, ValueError) as exc:
        if isinstance(exc, ChebyshevError):
            raise
        raise ChebyshevError(f"malformed tensor text: {exc}") from exc
    if len(values) != int(n):
        raise ChebyshevError(f"header announces {n} values, found {len(values)}")
    grid = ChebyshevGrid.build(HyperRectangle(tuple(intervals)), counts)
    return ChebyshevTensor(grid, values)


def save(tensor: ChebyshevTensor, path) -> None:
    Path(path).write_text(dumps(tensor), encoding="utf-8")


def load(path) -> ChebyshevTensor:
    return loads(Path(path).read_text(encoding="utf-8"))
