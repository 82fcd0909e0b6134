"""Finite geodesic metric measure spaces realized as weighted graphs.

Vertices are stored internally in ascending id order, so comparing internal
indices is the same as comparing vertex ids. That makes the lexicographic
tie-break for geodesics a plain ``min`` over indices.

Notes
-----
Distances come from single-source Dijkstra runs.  Rows are cached when the
space has at most ``cache_threshold`` vertices; the cache is guarded by a lock
so concurrent callers observe the same values as a sequential caller.
"""

from __future__ import annotations

import csv
import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from .errors import (
    DegenerateCurve,
    DisconnectedSpace,
    EmptySet,
    InputError,
    SeparationConflict,
    UnknownVertex,
)

__all__ = [
    "MetricSpace",
    "Curve",
    "BiLipschitzReport",
    "distance",
    "geodesic",
    "ball",
    "separated_net",
    "hausdorff_distance",
    "bilip_report",
    "set_diameter",
    "restricted_geodesic",
    "load_space",
    "save_space",
    "read_curve_csv",
    "write_curve_csv",
]

SCHEMA = 1
# relative slack used when deciding whether two path lengths tie
TIE_TOL = 1e-9


class MetricSpace:
    """Connected weighted graph with shortest-path metric and vertex measure."""

    def __init__(
        self,
        vertex_ids: Sequence[int],
        edges: Iterable[tuple[int, int, float]],
        resolution: float,
        coords: Sequence[Sequence[float]] | np.ndarray | None = None,
        measure: Sequence[float] | np.ndarray | None = None,
        cache_threshold: int = 5000,
    ) -> None:
        ids = [int(v) for v in vertex_ids]
        if not ids:
            raise InputError("space needs at least one vertex")
        if len(set(ids)) != len(ids):
            raise InputError("duplicate vertex ids")
        if not resolution > 0:
            raise InputError("resolution must be positive")
        order = np.argsort(ids, kind="stable")
        self.ids = np.asarray(ids, dtype=np.int64)[order]
        self.resolution = float(resolution)
        self._index = {int(v): i for i, v in enumerate(self.ids)}
        n = len(self.ids)

        if coords is not None:
            c = np.asarray(coords, dtype=float)
            if c.ndim == 1:
                c = c[:, None]
            if len(c) != n:
                raise InputError("coords length mismatch")
            self.coords: np.ndarray | None = c[order]
        else:
            self.coords = None
        if measure is None:
            self.measure = np.ones(n)
        else:
            m = np.asarray(measure, dtype=float)
            if len(m) != n or np.any(m <= 0):
                raise InputError("measure must be positive for every vertex")
            self.measure = m[order]

        best: dict[tuple[int, int], float] = {}
        for u, v, w in edges:
            w = float(w)
            iu, iv = self.idx(u), self.idx(v)
            if iu == iv:
                raise InputError(f"self loop at {u}")
            if not (0 < w <= self.resolution * (1 + 1e-12)):
                raise InputError(f"edge ({u},{v}) length {w} outside (0, h]")
            key = (min(iu, iv), max(iu, iv))
            best[key] = min(w, best.get(key, math.inf))
        self.edge_list: list[tuple[int, int, float]] = sorted(
            (a, b, w) for (a, b), w in best.items()
        )
        adj: list[list[tuple[int, float]]] = [[] for _ in range(n)]
        for a, b, w in self.edge_list:
            adj[a].append((b, w))
            adj[b].append((a, w))
        for row in adj:
            row.sort()
        self.adj = adj
        self._edge_len = {(a, b): w for a, b, w in self.edge_list}

        if self.edge_list:
            a, b, w = (np.array(x) for x in zip(*self.edge_list))
            rows = np.concatenate([a, b]).astype(np.int64)
            cols = np.concatenate([b, a]).astype(np.int64)
            data = np.concatenate([w, w]).astype(float)
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
            data = np.zeros(0)
        self.csr = csr_matrix((data, (rows, cols)), shape=(n, n))
        ncomp, _ = connected_components(self.csr, directed=False)
        if ncomp != 1:
            raise DisconnectedSpace(f"space has {ncomp} components")

        self.cache_threshold = cache_threshold
        self._rows: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()

    # -- basic accessors -------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.ids)

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, v: object) -> bool:
        return v in self._index

    def idx(self, v: int) -> int:
        try:
            return self._index[int(v)]
        except (KeyError, TypeError, ValueError):
            raise UnknownVertex(v) from None

    def vid(self, i: int) -> int:
        return int(self.ids[i])

    def indices(self, vs: Iterable[int]) -> np.ndarray:
        """Sorted internal indices of a vertex set (duplicates and order dropped)."""
        return np.array(sorted({self.idx(v) for v in vs}), dtype=np.int64)

    def index_array(self, vs: Iterable[int]) -> np.ndarray:
        """Internal indices of a vertex sequence, order and repeats kept."""
        return np.array([self.idx(v) for v in vs], dtype=np.int64)

    def ids_of(self, idxs: Iterable[int]) -> set[int]:
        return {int(self.ids[i]) for i in idxs}

    def edge_length(self, i: int, j: int) -> float:
        """Length of the edge between internal indices ``i`` and ``j``."""
        key = (i, j) if i < j else (j, i)
        try:
            return self._edge_len[key]
        except KeyError:
            raise InputError(f"vertices {self.vid(i)} and {self.vid(j)} are not adjacent") from None

    def has_edge(self, i: int, j: int) -> bool:
        return ((i, j) if i < j else (j, i)) in self._edge_len

    def coord(self, v: int) -> np.ndarray | None:
        return None if self.coords is None else self.coords[self.idx(v)]

    # -- distances --------------------------------------------------------
    def dist_row(self, i: int) -> np.ndarray:
        """Distances from internal index ``i`` to every vertex (read-only)."""
        row = self._rows.get(i)
        if row is not None:
            return row
        row = dijkstra(self.csr, directed=False, indices=i)
        row.setflags(write=False)
        if self.n <= self.cache_threshold:
            with self._lock:
                row = self._rows.setdefault(i, row)
        return row

    def dist_to_set(self, idxs: Iterable[int]) -> np.ndarray:
        """Distance from every vertex to the nearest index in ``idxs``."""
        idxs = np.fromiter((int(i) for i in idxs), dtype=np.int64)
        if idxs.size == 0:
            return np.full(self.n, np.inf)
        if idxs.size == 1:
            return np.array(self.dist_row(int(idxs[0])))
        return dijkstra(self.csr, directed=False, indices=idxs, min_only=True)

    def all_pairs(self) -> np.ndarray:
        return np.vstack([self.dist_row(i) for i in range(self.n)])

    def diameter(self) -> float:
        # exact for small spaces; double sweep lower bound refined by full scan
        if self.n <= self.cache_threshold:
            return float(max(self.dist_row(i).max() for i in range(self.n)))
        far = int(np.argmax(self.dist_row(0)))
        return float(self.dist_row(far).max())

    # -- serialization ---------------------------------------------------
    def to_json(self) -> dict:
        verts = []
        for i, v in enumerate(self.ids):
            rec: dict = {"id": int(v)}
            if self.coords is not None:
                rec["coords"] = [float(x) for x in self.coords[i]]
            rec["measure"] = float(self.measure[i])
            verts.append(rec)
        edges = [
            {"u": self.vid(a), "v": self.vid(b), "len": float(w)} for a, b, w in self.edge_list
        ]
        return {"schema": SCHEMA, "resolution": self.resolution, "vertices": verts, "edges": edges}

    @classmethod
    def from_json(cls, data: dict) -> "MetricSpace":
        try:
            verts = data["vertices"]
            ids = [int(r["id"]) for r in verts]
            coords = None
            if verts and all("coords" in r for r in verts):
                coords = [r["coords"] for r in verts]
            measure = [float(r.get("measure", 1.0)) for r in verts]
            edges = [(int(e["u"]), int(e["v"]), float(e["len"])) for e in data["edges"]]
            h = float(data["resolution"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed space JSON: {exc}") from exc
        return cls(ids, edges, h, coords=coords, measure=measure)


def load_space(path: str | Path) -> MetricSpace:
    with open(path) as fh:
        return MetricSpace.from_json(json.load(fh))


def save_space(space: MetricSpace, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(space.to_json(), fh, sort_keys=True)


@dataclass(frozen=True)
class Curve:
    """Vertex sequence with cumulative arc length.

    ``points`` holds vertex ids.  Use :meth:`from_ids` or :meth:`from_indices`
    to build one; both check adjacency and fill in ``cum_length``.
    """

    points: tuple[int, ...]
    cum_length: np.ndarray = field(repr=False, compare=False)

    @classmethod
    def from_indices(cls, space: MetricSpace, idxs: Sequence[int]) -> "Curve":
        idxs = [int(i) for i in idxs]
        if not idxs:
            raise DegenerateCurve("empty curve")
        # drop stalls so consecutive points are distinct neighbours
        clean = [idxs[0]]
        for i in idxs[1:]:
            if i != clean[-1]:
                clean.append(i)
        cum = np.zeros(len(clean))
        for k in range(1, len(clean)):
            cum[k] = cum[k - 1] + space.edge_length(clean[k - 1], clean[k])
        cum.setflags(write=False)
        return cls(tuple(space.vid(i) for i in clean), cum)

    @classmethod
    def from_ids(cls, space: MetricSpace, ids: Sequence[int]) -> "Curve":
        return cls.from_indices(space, [space.idx(v) for v in ids])

    @property
    def length(self) -> float:
        return float(self.cum_length[-1])

    @property
    def start(self) -> int:
        return self.points[0]

    @property
    def end(self) -> int:
        return self.points[-1]

    def __len__(self) -> int:
        return len(self.points)

    def params(self) -> np.ndarray:
        total = self.length
        if total == 0:
            return np.zeros(len(self.points))
        return self.cum_length / total

    def indices(self, space: MetricSpace) -> list[int]:
        return [space.idx(v) for v in self.points]

    def point_at(self, t: float) -> int:
        """Curve vertex whose parameter is nearest to ``t`` (earliest on ties)."""
        ts = self.params()
        return self.points[int(np.argmin(np.abs(ts - t)))]

    def reversed(self, space: MetricSpace) -> "Curve":
        return Curve.from_ids(space, self.points[::-1])

    def then(self, space: MetricSpace, other: "Curve") -> "Curve":
        """Concatenate; ``other`` must start where ``self`` ends."""
        if other.points[0] != self.points[-1]:
            raise InputError("curves do not share an endpoint")
        return Curve.from_ids(space, list(self.points) + list(other.points[1:]))

    def vertex_set(self) -> set[int]:
        return set(self.points)


@dataclass(frozen=True)
class BiLipschitzReport:
    lower: float
    upper: float
    L_measured: float
    scale: float
    pair_count: int = 0

    def to_json(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "L_measured": self.L_measured,
            "scale": self.scale,
            "pair_count": self.pair_count,
        }


# -- operations --------------------------------------------------------------


def distance(space: MetricSpace, u: int, v: int) -> float:
    return float(space.dist_row(space.idx(u))[space.idx(v)])


def _backtrack(space: MetricSpace, row: np.ndarray, target: int, allowed=None) -> list[int]:
    # walk back from target choosing the smallest-index tight predecessor
    path = [target]
    cur = target
    while row[cur] > 0:
        dcur = row[cur]
        tol = TIE_TOL * max(1.0, dcur)
        nxt = None
        for j, w in space.adj[cur]:
            if allowed is not None and not allowed[j]:
                continue
            if abs(row[j] + w - dcur) <= tol and row[j] < dcur:
                nxt = j
                break  # adjacency rows are sorted by index
        if nxt is None:
            raise InputError("shortest path backtrack failed")
        path.append(nxt)
        cur = nxt
    path.reverse()
    return path


def geodesic_indices(space: MetricSpace, i: int, j: int) -> list[int]:
    """Deterministic shortest path between internal indices."""
    return _backtrack(space, space.dist_row(i), j)


def geodesic(space: MetricSpace, u: int, v: int) -> Curve:
    return Curve.from_indices(space, geodesic_indices(space, space.idx(u), space.idx(v)))


def restricted_geodesic(
    space: MetricSpace, i: int, j: int, allowed: np.ndarray
) -> list[int] | None:
    """Shortest path from index ``i`` to ``j`` through vertices with ``allowed`` true.

    Returns ``None`` when no such path exists.
    """
    if not (allowed[i] and allowed[j]):
        return None
    keep = np.flatnonzero(allowed)
    pos = np.full(space.n, -1, dtype=np.int64)
    pos[keep] = np.arange(len(keep))
    sub = space.csr[keep][:, keep]
    sub_row = dijkstra(sub, directed=False, indices=int(pos[i]))
    if not np.isfinite(sub_row[pos[j]]):
        return None
    row = np.full(space.n, np.inf)
    row[keep] = sub_row
    return _backtrack(space, row, j, allowed)


def ball_indices(space: MetricSpace, i: int, r: float) -> np.ndarray:
    return np.flatnonzero(space.dist_row(i) < r)


def ball(space: MetricSpace, center: int, r: float) -> set[int]:
    if r < 0:
        raise InputError("radius must be nonnegative")
    return space.ids_of(ball_indices(space, space.idx(center), r))


def separated_net(
    space: MetricSpace,
    subset: Iterable[int],
    eps: float,
    must_include: Iterable[int] = (),
) -> set[int]:
    sub = space.indices(subset)
    must = space.indices(must_include)
    if not set(must.tolist()) <= set(sub.tolist()):
        raise InputError("must_include is not contained in subset")
    return space.ids_of(_net_indices(space, sub, eps, must))


def _net_indices(space: MetricSpace, sub: np.ndarray, eps: float, must: np.ndarray) -> list[int]:
    net: list[int] = []
    near = np.full(space.n, np.inf)
    for i in must:
        if near[i] < eps:
            raise SeparationConflict(
                f"must_include points closer than {eps}: {space.vid(int(i))}"
            )
        net.append(int(i))
        near = np.minimum(near, space.dist_row(int(i)))
    for i in sub:
        if near[i] >= eps:
            net.append(int(i))
            near = np.minimum(near, space.dist_row(int(i)))
    return sorted(net)


def hausdorff_distance(space: MetricSpace, s1: Iterable[int], s2: Iterable[int]) -> float:
    a = space.indices(s1)
    b = space.indices(s2)
    if a.size == 0 or b.size == 0:
        raise EmptySet("hausdorff distance needs two nonempty sets")
    return hausdorff_indices(space, a, b)


def hausdorff_indices(space: MetricSpace, a: np.ndarray, b: np.ndarray) -> float:
    da = space.dist_to_set(a)
    db = space.dist_to_set(b)
    return float(max(db[a].max(), da[b].max()))


def set_diameter(space: MetricSpace, s: Iterable[int]) -> float:
    idx = space.indices(s)
    return diameter_indices(space, idx)


def diameter_indices(space: MetricSpace, idx: np.ndarray) -> float:
    if idx.size == 0:
        raise EmptySet("diameter of empty set")
    return float(max(space.dist_row(int(i))[idx].max() for i in idx))


def bilip_report(
    space: MetricSpace,
    curve: Curve,
    scale: float,
    sample_budget: int = 250_000,
    seed: int = 0,
) -> BiLipschitzReport:
    if scale <= 0:
        raise InputError("scale must be positive")
    if len(set(curve.points)) < 2:
        raise DegenerateCurve("curve has fewer than two distinct points")
    idx = np.array(curve.indices(space))
    cum = curve.cum_length
    m = len(idx)
    uniq, inv = np.unique(idx, return_inverse=True)
    rows = np.vstack([space.dist_row(int(i))[uniq] for i in uniq])
    if m * m <= sample_budget:
        a, b = np.triu_indices(m, k=1)
    else:
        rng = np.random.default_rng(seed)
        a = rng.integers(0, m, size=sample_budget)
        b = rng.integers(0, m, size=sample_budget)
        # consecutive pairs always included so local stretch is never missed
        a = np.concatenate([a, np.arange(m - 1)])
        b = np.concatenate([b, np.arange(1, m)])
        keep = a != b
        a, b = a[keep], b[keep]
    d = rows[inv[a], inv[b]]
    # |s - t| * scale, written so that scale == length gives exact arc lengths
    dt = np.abs(cum[a] - cum[b])
    ratio = d / dt if scale == curve.length else d / (dt / curve.length * scale)
    lower = float(ratio.min())
    upper = float(ratio.max())
    L = max(upper, 1.0 / lower) if lower > 0 else math.inf
    return BiLipschitzReport(lower, upper, L, float(scale), int(len(a)))


# -- curve CSV ------------------------------------------------------------------


def write_curve_csv(space: MetricSpace, curve: Curve, path: str | Path) -> None:
    dim = 0 if space.coords is None else space.coords.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "vertex_id"] + [f"x{k}" for k in range(dim)])
        for t, v in zip(curve.params(), curve.points):
            c = [] if dim == 0 else [repr(float(x)) for x in space.coords[space.idx(v)]]
            w.writerow([repr(float(t)), v] + c)


def read_curve_csv(space: MetricSpace, path: str | Path) -> Curve:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise InputError(f"curve file {path} is empty")
    try:
        ids = [int(r["vertex_id"]) for r in rows]
    except (KeyError, ValueError) as exc:
        raise InputError(f"malformed curve CSV: {exc}") from exc
    return Curve.from_ids(space, ids)
