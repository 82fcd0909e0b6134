"""Tracing a connected set by a curve that passes near every point of it.

The route is: a separated net of the set, a proximity graph on the net, its
minimum spanning tree, a tour of the tree that uses each edge at most twice,
and finally the extension pipeline run on the tour's vertex sequence.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .errors import DisconnectedK, EndpointsTooClose, EqualEndpoints, InputError, NotATree

if TYPE_CHECKING:
    from .extension import ExtensionConfig, ExtensionResult
    from .metric_core import Curve, MetricSpace

__all__ = [
    "TourPlan",
    "TraceResult",
    "euler_tour_2to1",
    "minimum_spanning_tree",
    "edge_multiplicity",
    "continuum_trace",
    "trace_with_report",
]


def _tree_adjacency(edges: Iterable[tuple[int, int]]) -> dict[int, list[int]]:
    adj: dict[int, list[int]] = defaultdict(list)
    edges = [(int(u), int(v)) for u, v in edges]
    for u, v in edges:
        if u == v:
            raise NotATree(f"self loop at {u}")
        adj[u].append(v)
        adj[v].append(u)
    nodes = list(adj)
    if not nodes:
        return {}
    if len(edges) != len(nodes) - 1 or len({frozenset(e) for e in edges}) != len(edges):
        raise NotATree(f"{len(edges)} edges on {len(nodes)} vertices")
    seen = {nodes[0]}
    stack = [nodes[0]]
    while stack:
        for w in adj[stack.pop()]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    if len(seen) != len(nodes):
        raise NotATree("edges do not form a connected graph")
    return {u: sorted(ws) for u, ws in adj.items()}


def _tree_path(adj: dict[int, list[int]], src: int, dst: int) -> list[int]:
    parent = {src: src}
    stack = [src]
    while stack:
        u = stack.pop()
        for w in adj[u]:
            if w not in parent:
                parent[w] = u
                stack.append(w)
    path = [dst]
    while path[-1] != src:
        path.append(parent[path[-1]])
    return path[::-1]


def euler_tour_2to1(tree: Sequence[tuple[int, int]], v: int, v_prime: int) -> list[int]:
    """Walk from ``v`` to ``v_prime`` through every vertex of a tree.

    Edges of the connecting path are crossed once; every subtree hanging off
    that path is toured depth-first and re-entered at its path vertex, so its
    edges are crossed twice.  Neighbours are visited in increasing order.
    """
    if v == v_prime:
        raise EqualEndpoints("tour endpoints must differ")
    adj = _tree_adjacency(tree)
    if v not in adj or v_prime not in adj:
        raise NotATree("tour endpoints must be tree vertices")
    spine = _tree_path(adj, v, v_prime)
    on_spine = set(spine)
    tour: list[int] = []

    def hang(root: int, parent: int) -> None:
        # iterative depth-first walk that returns to root
        stack = [(root, parent, iter(adj[root]))]
        while stack:
            u, p, it = stack[-1]
            w = next((w for w in it if w != p), None)
            if w is None:
                stack.pop()
                if stack:
                    tour.append(stack[-1][0])
                continue
            tour.append(w)
            stack.append((w, u, iter(adj[w])))

    for k, s in enumerate(spine):
        tour.append(s)
        for w in adj[s]:
            if w in on_spine:
                continue
            tour.append(w)
            hang(w, s)
            tour.append(s)
    return tour


def edge_multiplicity(tour: Sequence[int]) -> dict[frozenset, int]:
    out: dict[frozenset, int] = defaultdict(int)
    for a, b in zip(tour, tour[1:]):
        out[frozenset((a, b))] += 1
    return dict(out)


def minimum_spanning_tree(n: int, weighted: Iterable[tuple[int, int, float]]) -> list[tuple[int, int]]:
    """Kruskal with ties broken by (weight, smaller index, larger index)."""
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    out = []
    for w, a, b in sorted((w, min(u, v), max(u, v)) for u, v, w in weighted):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
            out.append((a, b))
    return out


@dataclass
class TourPlan:
    net: list[int]
    tree_edges: list[tuple[int, int]]
    tour: list[int]
    multiplicity: dict[frozenset, int]
    perturbed: dict[int, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "schema": 1,
            "net": self.net,
            "tree_edges": [list(e) for e in self.tree_edges],
            "tour": self.tour,
            "multiplicity": [[*sorted(e), m] for e, m in sorted(self.multiplicity.items(), key=lambda t: sorted(t[0]))],
            "perturbed": [self.perturbed[k] for k in sorted(self.perturbed)],
        }


@dataclass
class TraceResult:
    curve: "Curve"
    plan: TourPlan
    extension: "ExtensionResult"
    hausdorff: float
    diameter: float
    f_distortion: float  # measured bi-Lipschitz constant of i*eps*diam -> v~_i
    separation: float  # min distance between distinct perturbed points, over eps*diam

    def to_json(self) -> dict:
        return {
            "curve": list(self.curve.points),
            "plan": self.plan.to_json(),
            "hausdorff": self.hausdorff,
            "diameter": self.diameter,
            "f_distortion": self.f_distortion,
            "separation": self.separation,
        }


def _induced_connected(space: "MetricSpace", kidx: np.ndarray) -> bool:
    inside = np.zeros(space.n, dtype=bool)
    inside[kidx] = True
    seen = {int(kidx[0])}
    queue = deque(seen)
    while queue:
        u = queue.popleft()
        for v, _ in space.adj[u]:
            if inside[v] and v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == len(kidx)


def _lane_spots(space: "MetricSpace", net: list[int], tour: list[int], end: int, radius: float) -> list[int]:
    """Vertex for every tour position.

    The first visit of a net point (the last one for the end point) keeps the
    point itself.  Other visits take a free vertex within ``radius`` of it,
    preferring clearance from spots already taken and then nearness to the
    previous spot, so out-and-back legs of the tour run side by side.
    """
    n = len(tour)
    own: dict[int, int] = {}
    for k, z in enumerate(tour):
        if z == end:
            own[z] = n - 1
        elif z not in own:
            own[z] = k
    taken = set(net)
    seq: list[int] = []
    for k, z in enumerate(tour):
        c = net[z]
        if own[z] == k:
            seq.append(c)
            continue
        row = space.dist_row(c)
        ball = np.array([v for v in np.flatnonzero(row <= radius) if v not in taken], dtype=np.int64)
        if ball.size == 0:
            raise InputError(f"no free vertex within {radius:g} of {space.vid(c)} for a repeat visit")
        clear = np.minimum(space.dist_to_set(sorted(taken))[ball], radius)
        prev = space.dist_row(seq[-1])[ball]
        v = int(ball[np.lexsort((ball, prev, -clear))[0]])
        taken.add(v)
        seq.append(v)
    return seq


def trace_with_report(
    space: "MetricSpace",
    K: Iterable[int],
    eps: float,
    x: int,
    y: int,
    config: "ExtensionConfig | None" = None,
    spread: float = 2.0,
) -> TraceResult:
    """Curve from x to y that comes within ``eps * diam K`` of every point of K.

    Repeat visits of a net point are moved to distinct vertices within
    ``max(eps diam K / 16, spread * h)`` of it.
    """
    from .extension import ExtensionConfig, ExtensionProblem, extend
    from .metric_core import Curve, _net_indices, diameter_indices, hausdorff_indices

    if not 0 < eps < 1:
        raise InputError("eps must lie in (0, 1)")
    kidx = space.indices(K)
    xi, yi = space.idx(x), space.idx(y)
    if kidx.size == 0 or xi not in set(kidx.tolist()) or yi not in set(kidx.tolist()):
        raise InputError("x and y must lie in K")
    if not _induced_connected(space, kidx):
        raise DisconnectedK("K is not connected as an induced subgraph", clause="K connected")
    diam = diameter_indices(space, kidx)
    if space.dist_row(xi)[yi] < eps * diam:
        raise EndpointsTooClose(f"d(x, y) < eps diam K = {eps * diam:g}")
    h = space.resolution
    net = _net_indices(space, kidx, eps * diam / 4, np.array([xi, yi]))
    rows = np.vstack([space.dist_row(v)[net] for v in net])
    # net points at distance below eps/2 are adjacent; one edge of slack covers
    # the discrete gap between neighbouring cover balls
    gap = eps * diam / 2 + h * (1 + 1e-9)
    n = len(net)
    weighted = [(a, b, float(rows[a, b])) for a in range(n) for b in range(a + 1, n) if rows[a, b] < gap]
    tree = minimum_spanning_tree(n, weighted)
    if len(tree) != n - 1:
        raise DisconnectedK("net proximity graph is disconnected", clause="proximity graph of the net")
    sx, sy = net.index(xi), net.index(yi)
    tour = euler_tour_2to1(tree, sx, sy)
    radius = max(eps * diam / 16, spread * h)
    seq = _lane_spots(space, net, tour, sy, radius)
    perturbed = {k: space.vid(v) for k, v in enumerate(seq)}
    mult = edge_multiplicity(tour)
    plan = TourPlan([space.vid(v) for v in net], [(int(a), int(b)) for a, b in tree], list(tour), mult, perturbed)
    step = eps * diam
    A = [k * step for k in range(len(seq))]
    f = {a: space.vid(v) for a, v in zip(A, seq)}
    # r_min just above the spacing of A leaves no Whitney interval inside a
    # gap, so consecutive tour points are joined by certified bridges
    cfg = config or ExtensionConfig(r_min=1.01 * step)
    result = extend(ExtensionProblem(space, tuple(A), f, cfg))
    curve = _curve_of(space, result.F.vertices)
    haus = hausdorff_indices(space, kidx, space.indices(curve.points))
    sv = np.array(seq)
    srows = np.vstack([space.dist_row(v)[sv] for v in sv])
    off = srows[~np.eye(len(sv), dtype=bool)]
    sep = float(off.min()) / step if off.size else math.inf
    return TraceResult(curve, plan, result, float(haus), float(diam), result.L_f, sep)


def _curve_of(space: "MetricSpace", vertices: Sequence[int]) -> "Curve":
    from .metric_core import Curve

    idx = [space.idx(v) for v in vertices]
    return Curve.from_indices(space, idx)


def continuum_trace(
    space: "MetricSpace",
    K: Iterable[int],
    eps: float,
    x: int,
    y: int,
    config: "ExtensionConfig | None" = None,
    spread: float = 2.0,
) -> tuple["Curve", TourPlan]:
    res = trace_with_report(space, K, eps, x, y, config, spread)
    return res.curve, res.plan
