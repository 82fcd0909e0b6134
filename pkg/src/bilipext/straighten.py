"""Turn an arbitrary curve into a bi-Lipschitz arc with the same endpoints.

The arc is grown by repeatedly walking to the next point of a chain through a
net of the input curve, each time cutting the current arc at its point closest
to the target and continuing along a geodesic.  Every cut at most doubles the
bi-Lipschitz constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ChainNotFound, DegenerateCurve, InputError
from .metric_core import (
    Curve,
    MetricSpace,
    _net_indices,
    diameter_indices,
    geodesic_indices,
)

__all__ = ["StraightenConfig", "StraightenTrace", "concat_to_point", "straighten", "straighten_trace"]


@dataclass(frozen=True)
class StraightenConfig:
    eps: float = 0.2
    net_factor: float = 0.25
    chain_gap_factor: float = 0.5

    def __post_init__(self) -> None:
        if not 0 < self.eps < 1:
            raise InputError("eps must lie in (0, 1)")
        if not (0 < self.net_factor < 1 and 0 < self.chain_gap_factor < 1):
            raise InputError("net and chain factors must lie in (0, 1)")


@dataclass
class StraightenTrace:
    curve: Curve
    shortcut: bool
    diameter: float
    chain: list[int] = field(default_factory=list)  # vertex ids x_0..x_n
    steps: list[Curve] = field(default_factory=list)  # partial arcs after each fold

    @property
    def chain_length(self) -> int:
        """Number of chain links n (chain has n + 1 points)."""
        return max(len(self.chain) - 1, 0)


def _concat_indices(space: MetricSpace, path: list[int], target: int) -> list[int]:
    row = space.dist_row(target)
    d = row[np.asarray(path)]
    b = int(np.argmin(d))  # first minimiser
    return path[: b + 1] + geodesic_indices(space, path[b], target)[1:]


def concat_to_point(space: MetricSpace, f: Curve, p: int) -> Curve:
    """Cut ``f`` at its first point nearest ``p`` and append a geodesic to ``p``."""
    if len(f) == 0:
        raise DegenerateCurve("empty curve")
    return Curve.from_indices(space, _concat_indices(space, f.indices(space), space.idx(p)))


def _loop_erased_chain(space: MetricSpace, idx, net: list[int], gap: float) -> list[int]:
    """Net points in the order sigma visits them, with loops erased as they close."""
    rows = np.vstack([space.dist_row(v)[np.asarray(idx)] for v in net])
    cover = [net[k] for k in np.argmin(rows, axis=0)]  # first nearest net point per vertex
    chain: list[int] = []
    where: dict[int, int] = {}
    for v in cover:
        if v in where:
            for u in chain[where[v] + 1 :]:
                del where[u]
            del chain[where[v] + 1 :]
            continue
        if chain and space.dist_row(chain[-1])[v] >= gap:
            raise ChainNotFound(
                "consecutive curve points are too far apart to chain",
                clause="chain x_0..x_n with consecutive gaps below eps/2",
            )
        where[v] = len(chain)
        chain.append(v)
    return chain


def straighten_trace(space: MetricSpace, sigma: Curve, config: StraightenConfig = StraightenConfig()) -> StraightenTrace:
    """Straighten ``sigma`` and keep the chain and every intermediate arc."""
    idx = sigma.indices(space)
    if len(idx) < 2:
        raise DegenerateCurve("need at least two points")
    # sigma's points in order of first visit
    seen = dict.fromkeys(idx)
    pts = np.fromiter(seen, dtype=np.int64)
    diam = diameter_indices(space, pts)
    if diam == 0:
        raise DegenerateCurve("curve has zero diameter")
    a, b = idx[0], idx[-1]
    eps = config.eps
    if a == b:
        raise DegenerateCurve("closed curve: endpoints coincide")
    if space.dist_row(a)[b] < 2 * eps * diam:
        geo = Curve.from_indices(space, geodesic_indices(space, a, b))
        return StraightenTrace(geo, True, diam, [space.vid(a), space.vid(b)], [geo])
    h = space.resolution
    must = np.array([a, b])
    net = _net_indices(space, pts, eps * config.net_factor * diam, must)
    # one extra edge of slack: neighbouring curve vertices may be covered by
    # net points a full cover radius apart on either side
    gap = eps * config.chain_gap_factor * diam + h * (1 + 1e-9)
    chain = _loop_erased_chain(space, idx, net, gap)
    path = geodesic_indices(space, chain[0], chain[1])
    steps = [Curve.from_indices(space, path)]
    for target in chain[2:]:
        path = _concat_indices(space, path, target)
        steps.append(Curve.from_indices(space, path))
    return StraightenTrace(steps[-1], False, diam, [space.vid(v) for v in chain], steps)


def straighten(space: MetricSpace, sigma: Curve, config: StraightenConfig = StraightenConfig()) -> Curve:
    return straighten_trace(space, sigma, config).curve
