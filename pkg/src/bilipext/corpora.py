"""Seeded problem corpora shared by the acceptance run and ``bilipext verify``."""

from __future__ import annotations

import math

import numpy as np

from .metric_core import Curve, MetricSpace
from .space_gallery import grid_id, grid_space

__all__ = ["extension_corpus", "wiggly_curves", "random_walks", "random_finite_sets", "plane_pair_problem"]


def random_finite_sets(count: int = 200, seed: int = 0, top: float = 100.0, max_size: int = 50) -> list[list[float]]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        k = int(rng.integers(2, max_size + 1))
        out.append(sorted(set(np.round(rng.uniform(0, top, size=k), 6).tolist())))
    return [a for a in out if len(a) >= 2]


def wiggly_curves(side: int = 8, count: int = 50, seed: int = 0, detour: float = 0.4, min_sep: int = 6):
    """Lattice walks from a to b: monotone steps toward b, and with probability
    ``detour`` before each one a single step sideways or back that is undone at once."""
    space = grid_space(3, side)
    rng = np.random.default_rng(seed)
    curves: list[Curve] = []
    for _ in range(count):
        a = rng.integers(0, side, size=3)
        b = rng.integers(0, side, size=3)
        while np.abs(a - b).sum() < min_sep:
            b = rng.integers(0, side, size=3)
        cur = a.copy()
        pts = [grid_id(side, cur)]
        while (cur != b).any():
            if rng.random() < detour:
                ax = int(rng.integers(3))
                nxt = cur.copy()
                nxt[ax] += int(rng.choice([-1, 1]))
                if 0 <= nxt[ax] < side:
                    pts += [grid_id(side, nxt), grid_id(side, cur)]
            ax = int(rng.choice(np.flatnonzero(cur != b)))
            cur[ax] += 1 if b[ax] > cur[ax] else -1
            pts.append(grid_id(side, cur))
        curves.append(Curve.from_ids(space, pts))
    return space, curves


def random_walks(side: int = 8, count: int = 20, seed: int = 0, steps: int = 60):
    """Unbiased lattice walks, whose excursions can be arbitrarily long."""
    space = grid_space(3, side)
    rng = np.random.default_rng(seed)
    curves: list[Curve] = []
    while len(curves) < count:
        cur = rng.integers(0, side, size=3)
        pts = [grid_id(side, cur)]
        for _ in range(steps):
            ax = int(rng.integers(3))
            nxt = cur.copy()
            nxt[ax] += int(rng.choice([-1, 1]))
            if 0 <= nxt[ax] < side:
                cur = nxt
                pts.append(grid_id(side, cur))
        if pts[0] != pts[-1]:
            curves.append(Curve.from_ids(space, pts))
    return space, curves


def _row(side: int, start: tuple[int, int, int], axis: int, n: int) -> list[int]:
    out = []
    for k in range(n):
        p = list(start)
        p[axis] += k
        out.append(grid_id(side, p))
    return out


def _ell_path(side: int, corner: tuple[int, int, int], ax1: int, ax2: int, n1: int, n2: int) -> list[int]:
    out = []
    for k in range(n1, 0, -1):
        p = list(corner)
        p[ax1] -= k
        out.append(grid_id(side, p))
    for k in range(n2 + 1):
        p = list(corner)
        p[ax2] += k
        out.append(grid_id(side, p))
    return out


def extension_corpus(count: int = 20, seed: int = 0, side: int = 9) -> tuple[MetricSpace, list[tuple[str, list[float], dict[float, int]]]]:
    """Problems on a ``side``-cube: straight rows, L-shaped anchors, geometric A.

    Each entry is ``(kind, A, f)`` with ``f`` mapping points of A to vertex ids;
    every A has between 3 and 8 points.
    """
    space = grid_space(3, side)
    rng = np.random.default_rng(seed)
    probs = []
    kinds = ["row", "ell", "geometric"]
    for k in range(count):
        kind = kinds[k % 3]
        m = int(rng.integers(3, 9))
        if kind == "row":
            axis = int(rng.integers(3))
            c = rng.integers(2, side - 2, size=3)
            start = [int(v) for v in c]
            start[axis] = 0
            line = _row(side, tuple(start), axis, side)
            pos = np.sort(rng.choice(side, size=m, replace=False))
            A = [float(p) for p in pos]
            f = {a: line[int(a)] for a in A}
        elif kind == "ell":
            ax1, ax2 = (int(v) for v in rng.choice(3, size=2, replace=False))
            corner = [int(v) for v in rng.integers(2, side - 2, size=3)]
            corner[ax1] = side - 2
            corner[ax2] = 1
            n1, n2 = side - 3, side - 3
            path = _ell_path(side, tuple(corner), ax1, ax2, n1, n2)
            pos = np.sort(rng.choice(len(path), size=min(m, len(path)), replace=False))
            A = [float(p) for p in pos]
            f = {a: path[int(a)] for a in A}
        else:
            # monotone three-leg staircase, a geodesic of length 3 (side - 1)
            order = [int(v) for v in rng.permutation(3)]
            cur = [0, 0, 0]
            path = [grid_id(side, cur)]
            for ax in order:
                for _ in range(side - 1):
                    cur[ax] += 1
                    path.append(grid_id(side, cur))
            ratio = float(rng.choice([1.5, 2.0]))
            gaps = [max(1, round(ratio**k)) for k in range(m - 1)]
            while sum(gaps) > len(path) - 1:
                gaps.pop()
            start = int(rng.integers(0, len(path) - sum(gaps)))
            pos = np.cumsum([start] + gaps)
            if rng.random() < 0.5:
                pos = len(path) - 1 - pos[::-1]
            A = [float(p) for p in pos]
            f = {a: path[int(a)] for a in A}
        probs.append((kind, A, f))
    return space, probs


def plane_pair_problem(side: int = 11, hole_radius: float = 2.0, dim: int = 2):
    """Two sheets glued along a line with a hole at its centre.

    ``f`` sends every line point outside the hole to itself (by its axis
    coordinate) and the two points ``-1/2`` and ``1/2`` to opposite sheets.
    Off the line the sheets share nothing, so any extension must pass through
    ``f(A)`` to get from one sheet to the other.
    """
    from .space_gallery import plane_pair_id, plane_pair_space

    space = plane_pair_space(dim, side, 1.0, hole_radius)
    c = side // 2
    f: dict[float, int] = {}
    for k in range(side):
        t = k - c
        if abs(t) >= hole_radius:
            f[float(t)] = plane_pair_id(dim, side, 0, [k] + [c] * (dim - 1))
    up = int(math.ceil(hole_radius))
    f[-0.5] = plane_pair_id(dim, side, 0, [c, c + up] + [c] * (dim - 2))
    f[0.5] = plane_pair_id(dim, side, 1, [c, c + up] + [c] * (dim - 2))
    A = sorted(f)
    return space, A, {a: f[a] for a in A}
