"""Curves that keep away from an obstacle set.

``clearance_path`` finds a short path whose distance to the obstacles is as
large as possible; ``uniform_connect`` chains such paths through porosity holes
at dyadic scales around both endpoints, giving curves that satisfy the two
uniform-domain inequalities; ``uniformity_report`` measures the constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import InputError, NoClearancePath, PorosityWitnessNotFound
from .metric_core import Curve, MetricSpace, geodesic_indices, restricted_geodesic

__all__ = [
    "ClearanceParams",
    "ClearanceResult",
    "clearance_search",
    "clearance_path",
    "uniform_connect",
    "UniformityRecord",
    "UniformityCertificate",
    "uniformity_report",
]


@dataclass(frozen=True)
class ClearanceParams:
    """Search knobs.  ``None`` for ``length_factor``/``clearance_factor`` selects
    the exponent-shaped defaults computed from ``Q``, ``p`` and ``alpha``."""

    lam: float = 1.0
    length_factor: float | None = None
    clearance_factor: float | None = None
    relax_factor: float = 2.0
    max_relax: int = 6
    Q: float = 3.0
    p: float = 1.5
    alpha: float = 1.0
    endpoint_slack: float = 2.0  # clearance waived within this many h of x and y

    def __post_init__(self) -> None:
        if self.lam < 1 or self.relax_factor <= 1 or self.max_relax < 0:
            raise InputError("need lam >= 1, relax_factor > 1, max_relax >= 0")
        for v in (self.length_factor, self.clearance_factor):
            if v is not None and not v > 0:
                raise InputError("length and clearance factors must be positive")

    def defaults(self, D: float, end_clearance: float) -> tuple[float, float]:
        ratio = D / end_clearance if end_clearance > 0 else math.inf
        ell = self.length_factor
        if ell is None:
            ell = max(1.0, ratio**self.Q) if math.isfinite(ratio) else 1.0
        delta = self.clearance_factor
        if delta is None:
            gap = self.Q - self.p - self.alpha
            expo = (self.Q * self.p + gap) / gap if gap > 0 else 1.0
            delta = min(1.0, (1.0 / ratio) ** expo) if ratio > 0 else 1.0
        return ell, delta


@dataclass
class ClearanceResult:
    curve: Curve
    clearance: float  # enforced threshold on dist to Y
    length_factor: float
    relaxations: int


def clearance_search(
    space: MetricSpace,
    x: int,
    y: int,
    Y: Iterable[int],
    params: ClearanceParams = ClearanceParams(),
    within: np.ndarray | None = None,
) -> ClearanceResult:
    """Largest clearance path from x to y of length at most ``ell * d(x, y)``.

    Vertices must lie in ``B(x, 2 lam d(x, y))`` (and in ``within`` when given)
    and have distance at least the threshold to ``Y``; the threshold is waived
    within ``endpoint_slack * h`` of x or y, but ``B(Y, h/2)`` is always excluded.
    """
    xi, yi = space.idx(x), space.idx(y)
    yidx = space.indices(Y)
    h = space.resolution
    rx = space.dist_row(xi)
    D = float(rx[yi])
    if D == 0:
        return ClearanceResult(Curve.from_indices(space, [xi]), math.inf, 1.0, 0)
    if yidx.size == 0:
        dY = np.full(space.n, math.inf)
    else:
        dY = space.dist_to_set(yidx)
    if dY[xi] < h / 2 or dY[yi] < h / 2:
        raise InputError("endpoints lie on the obstacle set")
    region = rx < 2 * params.lam * D
    if within is not None:
        region &= within
    region &= dY >= h / 2
    near_ends = (rx < params.endpoint_slack * h) | (space.dist_row(yi) < params.endpoint_slack * h)
    ell0, delta0 = params.defaults(D, float(min(dY[xi], dY[yi])))
    ell, delta = ell0, delta0
    for attempt in range(params.max_relax + 1):
        cap = delta * D
        # h/2 is always a candidate: it only repeats the B(Y, h/2) exclusion
        levels = np.union1d(dY[region & (dY <= cap)], [h / 2])
        if yidx.size == 0:
            levels = np.array([math.inf])
        best = None
        lo, hi = 0, len(levels) - 1
        # feasibility is monotone: raising the threshold only removes vertices
        while lo <= hi:
            mid = (lo + hi) // 2
            thr = levels[mid]
            allowed = region & ((dY >= thr) | near_ends)
            path = restricted_geodesic(space, xi, yi, allowed)
            if path is not None and _length(space, path) <= ell * D * (1 + 1e-12):
                best = (path, float(thr))
                lo = mid + 1
            else:
                hi = mid - 1
        if best is not None:
            return ClearanceResult(Curve.from_indices(space, best[0]), best[1], ell, attempt)
        ell *= params.relax_factor
        delta /= params.relax_factor
    raise NoClearancePath(
        f"no path from {x} to {y} avoiding the obstacles within length {ell / params.relax_factor:.3g}*d",
        clause="clearance path: pruned graph has no short x-y path",
    )


def _length(space: MetricSpace, path: list[int]) -> float:
    return float(sum(space.edge_length(a, b) for a, b in zip(path, path[1:])))


def clearance_path(
    space: MetricSpace, x: int, y: int, Y: Iterable[int], params: ClearanceParams = ClearanceParams()
) -> Curve:
    return clearance_search(space, x, y, Y, params).curve


# -- uniform domains -------------------------------------------------------------


def _annulus_witness(
    space: MetricSpace, center: int, outer: float, inner: float, radius: float, dY: np.ndarray, other: int | None
) -> int | None:
    """Vertex z with B(z, radius) inside the annulus (minus B(other, inner)) and clear of Y.

    Prefers the largest clearance, then the smallest index.
    """
    rc = space.dist_row(center)
    ro = space.dist_row(other) if other is not None else None
    inside = (rc < outer) & (rc >= inner)
    if ro is not None:
        inside &= ro >= inner
    cand = np.flatnonzero(inside & (dY >= radius))
    for z in cand[np.lexsort((cand, -dY[cand]))]:
        rz = space.dist_row(int(z))
        ball = rz < radius
        if np.all(inside[ball]):
            return int(z)
    return None


def _shrinking_witness(
    space: MetricSpace, center: int, outer: float, inner: float, radius: float, dY: np.ndarray, other: int | None, h: float
) -> int | None:
    # a bounded grid is less porous near its boundary than the unbounded space,
    # so the hole radius halves until it would drop below one edge
    while True:
        z = _annulus_witness(space, center, outer, inner, radius, dY, other)
        if z is not None or radius <= h / 2:
            return z
        radius /= 2


def uniform_connect(
    space: MetricSpace,
    Y: Iterable[int],
    x: int,
    y: int,
    p0: float,
    depth_cap: int = 12,
    params: ClearanceParams = ClearanceParams(),
) -> Curve:
    """Curve from x to y avoiding Y through dyadic porosity holes around both ends."""
    yidx = space.indices(Y)
    xi, yi = space.idx(x), space.idx(y)
    if yidx.size == 0:
        return Curve.from_indices(space, geodesic_indices(space, xi, yi))
    ys = set(yidx.tolist())
    if xi in ys or yi in ys:
        raise InputError("endpoints must avoid Y")
    h = space.resolution
    r = float(space.dist_row(xi)[yi])
    dY = space.dist_to_set(yidx)
    # the finest annulus B(., 2^-N r) minus B(., 2^-N-1 r) must still contain a vertex
    depth = max(0, min(depth_cap, int(math.floor(math.log2(r / h))) - 1))
    if r < 4 * h:
        # below four edges the annuli hold no room for a hole; connect directly
        return clearance_search(space, x, y, space.ids[yidx].tolist(), params).curve
    z0 = _shrinking_witness(space, xi, r, r / 2, r / (2 * p0), dY, yi, h)
    if z0 is None:
        raise PorosityWitnessNotFound(f"no hole of size r/(2 p0) between {x} and {y}", clause="middle hole z_0")
    left, right = [], []
    for n in range(1, depth + 1):
        outer, inner = r * 2.0**-n, r * 2.0 ** (-n - 1)
        for center, out, tag in ((xi, left, x), (yi, right, y)):
            z = _shrinking_witness(space, center, outer, inner, inner / p0, dY, None, h)
            if z is None:
                raise PorosityWitnessNotFound(
                    f"no porosity hole near {tag} at scale {outer:g}", clause=f"hole z_{n} near {tag}"
                )
            out.append(z)
    chain = [xi, *reversed(left), z0, *right, yi]
    # drop immediate repeats, which happen when annuli share their witness
    chain = [v for k, v in enumerate(chain) if k == 0 or v != chain[k - 1]]
    ids = [space.vid(v) for v in chain]
    pieces: list[int] = [chain[0]]
    for a, b in zip(ids, ids[1:]):
        seg = clearance_search(space, a, b, space.ids[yidx].tolist(), params).curve
        pieces.extend(seg.indices(space)[1:])
    return Curve.from_indices(space, pieces)


@dataclass(frozen=True)
class UniformityRecord:
    x: int
    y: int
    d: float
    length: float
    cigar: float  # min over interior curve points of dist(z, Y) / dist(z, {x, y})


@dataclass
class UniformityCertificate:
    c_hat: float
    records: list[UniformityRecord] = field(default_factory=list)
    p0: float = 1.0

    def to_json(self) -> dict:
        return {
            "c_hat": self.c_hat,
            "p0": self.p0,
            "records": [r.__dict__ for r in self.records],
        }


CIGAR_CAP = 1e6


def uniformity_report(
    space: MetricSpace,
    U: Iterable[int],
    pair_count: int = 20,
    seed: int = 0,
    p0: float | None = None,
    depth_cap: int = 12,
    params: ClearanceParams = ClearanceParams(),
) -> UniformityCertificate:
    """Worst uniform-domain constant of ``U`` over seeded vertex pairs."""
    uidx = space.indices(U)
    if uidx.size < 2:
        raise InputError("U needs at least two vertices")
    mask = np.zeros(space.n, dtype=bool)
    mask[uidx] = True
    yidx = np.flatnonzero(~mask)
    if p0 is None:
        if yidx.size:
            from .space_gallery import porosity_probe

            p0 = porosity_probe(space, space.ids[yidx].tolist(), seed=seed).p0_hat
        else:
            p0 = 1.0
    dY = space.dist_to_set(yidx) if yidx.size else np.full(space.n, math.inf)
    rng = np.random.default_rng(seed)
    records = []
    Y = space.ids[yidx].tolist()
    for _ in range(pair_count):
        a, b = rng.choice(uidx, size=2, replace=False)
        a, b = int(min(a, b)), int(max(a, b))
        x, y = space.vid(a), space.vid(b)
        curve = uniform_connect(space, Y, x, y, p0, depth_cap, params)
        idx = np.array(curve.indices(space))
        if np.any(~mask[idx]):
            raise AssertionError("uniform_connect returned a curve meeting Y")
        ends = np.minimum(space.dist_row(a)[idx], space.dist_row(b)[idx])
        interior = ends > 0
        if interior.any():
            cig = float(np.min(dY[idx][interior] / ends[interior]))
        else:
            cig = math.inf
        records.append(UniformityRecord(x, y, float(space.dist_row(a)[b]), curve.length, min(cig, CIGAR_CAP)))
    c_hat = max(
        1.0,
        max(r.length / r.d for r in records),
        max(1.0 / r.cigar for r in records),
    )
    return UniformityCertificate(float(c_hat), records, float(p0))
