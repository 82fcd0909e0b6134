"""Test-space generators and sampled estimators for regularity, porosity and homogeneity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DisconnectedResult, DisconnectedSpace, InputError, NoFeasibleP, RangeTooNarrow, SizeOverflow
from .metric_core import MetricSpace, _net_indices

__all__ = [
    "MAX_VERTICES",
    "grid_space",
    "grid_id",
    "plane_pair_space",
    "plane_pair_id",
    "RegularityFit",
    "regularity_fit",
    "PorosityReport",
    "porosity_probe",
    "AssouadEstimate",
    "assouad_estimate",
]

MAX_VERTICES = 1_000_000


def _lattice_edges(dim: int, side: int) -> np.ndarray:
    idx = np.arange(side**dim).reshape((side,) * dim)
    pairs = []
    for ax in range(dim):
        lo = np.take(idx, np.arange(side - 1), axis=ax).ravel()
        hi = np.take(idx, np.arange(1, side), axis=ax).ravel()
        pairs.append(np.stack([lo, hi], axis=1))
    return np.concatenate(pairs) if pairs else np.zeros((0, 2), dtype=np.int64)


def grid_id(side: int, point: Sequence[int]) -> int:
    """Vertex id of an integer lattice point in ``grid_space(len(point), side, h)``."""
    return int(np.ravel_multi_index(tuple(int(c) for c in point), (side,) * len(point)))


def grid_space(dim: int, side: int, h: float = 1.0) -> MetricSpace:
    if dim < 1 or side < 2 or not h > 0:
        raise InputError("grid_space needs dim >= 1, side >= 2, h > 0")
    if side**dim > MAX_VERTICES:
        raise SizeOverflow(f"{side}^{dim} vertices exceeds cap {MAX_VERTICES}")
    n = side**dim
    coords = np.array(np.unravel_index(np.arange(n), (side,) * dim)).T * h
    e = _lattice_edges(dim, side)
    edges = [(int(a), int(b), h) for a, b in e]
    return MetricSpace(range(n), edges, h, coords=coords, measure=np.full(n, h**dim))


def plane_pair_id(dim: int, side: int, sheet: int, point: Sequence[int]) -> int:
    """Vertex id for lattice ``point`` on sheet 0 or 1 of ``plane_pair_space``.

    Axis 0 runs along the shared line; the line sits at the centre index
    ``side // 2`` of every other axis, and line points always carry sheet-0 ids.
    """
    c = side // 2
    base = grid_id(side, point)
    if sheet == 0 or all(int(x) == c for x in point[1:]):
        return base
    return side**dim + base


def plane_pair_space(dim: int, side: int, h: float = 1.0, hole_radius: float = 0.0) -> MetricSpace:
    """Two ``dim``-dimensional grids glued along a line, minus an open ball at the line centre."""
    if dim < 2 or side < 3:
        raise InputError("plane_pair_space needs dim >= 2 and side >= 3")
    if 2 * side**dim > MAX_VERTICES:
        raise SizeOverflow("plane pair too large")
    c = side // 2
    n = side**dim
    lat = np.array(np.unravel_index(np.arange(n), (side,) * dim)).T
    on_line = np.all(lat[:, 1:] == c, axis=1)
    amb = 2 * dim - 1
    verts: dict[int, np.ndarray] = {}
    for sheet in (0, 1):
        for k in range(n):
            if sheet == 1 and on_line[k]:
                continue
            x = np.zeros(amb)
            x[0] = lat[k, 0] - c
            off = lat[k, 1:] - c
            if sheet == 0:
                x[1:dim] = off
            else:
                x[dim:] = off
            verts[plane_pair_id(dim, side, sheet, lat[k])] = x * h
    edges = []
    for a, b in _lattice_edges(dim, side):
        for sheet in (0, 1):
            u = plane_pair_id(dim, side, sheet, lat[a])
            v = plane_pair_id(dim, side, sheet, lat[b])
            if sheet == 1 and u < n and v < n:
                continue  # line edge already added on sheet 0
            edges.append((u, v, h))
    keep = {v for v, x in verts.items() if np.linalg.norm(x) >= hole_radius}
    ids = sorted(keep)
    if not ids:
        raise DisconnectedResult(f"hole of radius {hole_radius} removes every vertex")
    edges = [(u, v, w) for u, v, w in edges if u in keep and v in keep]
    try:
        return MetricSpace(
            ids,
            edges,
            h,
            coords=np.array([verts[v] for v in ids]),
            measure=np.full(len(ids), h**dim),
        )
    except DisconnectedSpace as exc:
        raise DisconnectedResult(f"hole of radius {hole_radius} disconnects the plane pair") from exc


# -- estimators ----------------------------------------------------------------


@dataclass(frozen=True)
class RegularityFit:
    Q_hat: float
    C1_hat: float
    r_range: tuple[float, float]
    residual: float


def regularity_fit(
    space: MetricSpace,
    sample_count: int = 32,
    r_min: float = 2.0,
    r_max: float = 4.0,
    seed: int = 0,
    radii_count: int = 5,
) -> RegularityFit:
    """Least-squares fit of log ball measure against log radius.

    Radii are the multiples of the resolution inside ``[r_min, r_max]`` when
    there are at least three of them, since ball measures only change at those
    values on lattice-like spaces; otherwise ``radii_count`` geometric steps.
    """
    if r_max < 2 * r_min or r_min <= 0:
        raise RangeTooNarrow(f"need r_max >= 2 r_min, got [{r_min}, {r_max}]")
    rng = np.random.default_rng(seed)
    centers = rng.choice(space.n, size=min(sample_count, space.n), replace=False)
    h = space.resolution
    steps = np.arange(math.ceil(r_min / h - 1e-9), math.floor(r_max / h + 1e-9) + 1) * h
    radii = steps if len(steps) >= 3 else np.geomspace(r_min, r_max, radii_count)
    xs, ys = [], []
    for i in sorted(int(c) for c in centers):
        row = space.dist_row(i)
        for r in radii:
            xs.append(math.log(r))
            ys.append(math.log(space.measure[row < r].sum()))
    xs, ys = np.array(xs), np.array(ys)
    Q, b = np.polyfit(xs, ys, 1)
    residual = float(np.max(np.abs(ys - (Q * xs + b))))
    dev = ys - Q * xs  # log(mu / r^Q)
    C1 = float(math.exp(max(dev.max(), -dev.min(), 0.0)))
    return RegularityFit(float(Q), C1, (float(r_min), float(r_max)), residual)


@dataclass(frozen=True)
class PorosityReport:
    p0_hat: float
    witnesses: list[tuple[int, float, int]] = field(default_factory=list)


def _dyadic_radii(space: MetricSpace) -> list[float]:
    h = space.resolution
    top = space.diameter() / 2
    out = []
    r = 2 * h
    while r <= top + 1e-12:
        out.append(r)
        r *= 2
    return out or [2 * h]


def _porous_witness(space: MetricSpace, yi: int, r: float, p: float, dY: np.ndarray) -> int | None:
    row_y = space.dist_row(yi)
    inside = np.flatnonzero((row_y < r) & (dY >= r / p))
    # best clearance first, ties by index
    for xi in inside[np.lexsort((inside, -dY[inside]))]:
        rx = space.dist_row(int(xi))
        if np.all(row_y[rx < r / p] < r):
            return int(xi)
    return None


def porosity_probe(
    space: MetricSpace,
    Y: Iterable[int],
    p_candidates: Sequence[float] = (2, 3, 4, 6, 8, 16),
    sample_count: int = 16,
    seed: int = 0,
    radii: Sequence[float] | None = None,
) -> PorosityReport:
    yidx = space.indices(Y)
    if yidx.size == 0:
        raise InputError("porosity probe needs a nonempty Y")
    cands = sorted(float(p) for p in p_candidates)
    if not cands or cands[0] < 1:
        raise InputError("porosity candidates must be >= 1")
    dY = space.dist_to_set(yidx)
    radii = list(radii) if radii is not None else _dyadic_radii(space)
    rng = np.random.default_rng(seed)
    samples = [
        (int(yidx[rng.integers(len(yidx))]), float(radii[rng.integers(len(radii))]))
        for _ in range(sample_count)
    ]
    samples = sorted(set(samples))
    need = cands[0]
    for yi, r in samples:
        ok = next((p for p in cands if p >= need and _porous_witness(space, yi, r, p, dY) is not None), None)
        if ok is None:
            raise NoFeasibleP(
                f"no candidate p works at y={space.vid(yi)}, r={r}",
                clause="porosity: B(x,r/p) inside B(y,r) minus Y",
            )
        need = ok
    wit = []
    for yi, r in samples:
        xi = _porous_witness(space, yi, r, need, dY)
        assert xi is not None  # feasibility is monotone in p
        wit.append((space.vid(yi), r, space.vid(xi)))
    return PorosityReport(need, wit)


def check_porosity_witness(space: MetricSpace, Y: Iterable[int], y: int, r: float, x: int, p: float) -> bool:
    """Exact check of B(x, r/p) inside B(y, r) with no point of Y."""
    ys = set(space.indices(Y).tolist())
    rx = space.dist_row(space.idx(x))
    ry = space.dist_row(space.idx(y))
    small = np.flatnonzero(rx < r / p)
    return bool(np.all(ry[small] < r)) and not (set(small.tolist()) & ys)


@dataclass(frozen=True)
class AssouadEstimate:
    alpha_hat: float
    C2_hat: float
    scales: list[tuple[float, float]]
    counts: list[int] = field(default_factory=list)


def assouad_estimate(
    space: MetricSpace,
    Y: Iterable[int],
    sample_count: int = 8,
    seed: int = 0,
    ratios: Sequence[int] = (2, 4, 8),
    big_radii: Sequence[float] | None = None,
) -> AssouadEstimate:
    """Fit covering growth N(R, r) ~ C2 (R/r)^alpha by greedy covers of B(x,R) within Y."""
    yidx = space.indices(Y)
    if yidx.size == 0:
        raise InputError("assouad estimate needs a nonempty Y")
    h = space.resolution
    if big_radii is None:
        top = space.diameter()
        big_radii = [R for R in (8 * h * 2**k for k in range(12)) if R <= top] or [8 * h]
    rng = np.random.default_rng(seed)
    centers = sorted({int(yidx[rng.integers(len(yidx))]) for _ in range(sample_count)})
    scales, counts, xs, ys = [], [], [], []
    for ci in centers:
        row = space.dist_row(ci)
        for R in big_radii:
            part = yidx[row[yidx] < R]
            for k in ratios:
                r = R / k
                if r < h:
                    continue
                net = _net_indices(space, part, r, np.zeros(0, dtype=np.int64))
                scales.append((float(R), float(r)))
                counts.append(len(net))
                xs.append(math.log(k))
                ys.append(math.log(len(net)))
    if len(set(xs)) < 2:
        raise RangeTooNarrow("need at least two scale ratios above resolution")
    alpha, _ = np.polyfit(xs, ys, 1)
    alpha = max(float(alpha), 0.0)
    C2 = float(max(math.exp(y - alpha * x) for x, y in zip(xs, ys)))
    return AssouadEstimate(alpha, C2, scales, counts)
