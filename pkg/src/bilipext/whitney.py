"""Dyadic Whitney decomposition of the gaps of a finite set of reals, plus the two
greedy filtrations used to schedule the extension.

The decomposition is computed in exact integer arithmetic: every input value is
a binary float, so scaling by a large enough power of two turns the points of
``A`` and every dyadic endpoint into integers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateA, InputError

__all__ = [
    "WhitneyDecomposition",
    "Filtration",
    "whitney_decompose",
    "filter_endpoints",
    "ds_filtration",
    "endpoint_violations",
    "interval_violations",
]


@dataclass(frozen=True)
class WhitneyDecomposition:
    A: tuple[float, ...]
    r_min: float
    intervals: tuple[tuple[float, float], ...]
    terminal_gaps: tuple[tuple[float, float], ...]
    endpoints: tuple[float, ...]
    anchors: dict[float, float] = field(repr=False)
    # endpoint -> index of the interval ending there / starting there
    left_of: dict[float, int] = field(repr=False)
    right_of: dict[float, int] = field(repr=False)

    @property
    def I(self) -> tuple[float, float]:
        return (self.A[0], self.A[-1])

    def diam(self, i: int) -> float:
        lo, hi = self.intervals[i]
        return hi - lo

    def middle_third(self, i: int) -> tuple[float, float]:
        lo, hi = self.intervals[i]
        s = (hi - lo) / 3
        return (lo + s, hi - s)

    def taus(self, x: float) -> tuple[float | None, float | None, float | None, float | None]:
        """Middle-third ends of the intervals left and right of endpoint ``x``."""
        t1 = t2 = t3 = t4 = None
        if x in self.left_of:
            t1, t2 = self.middle_third(self.left_of[x])
        if x in self.right_of:
            t3, t4 = self.middle_third(self.right_of[x])
        return (t1, t2, t3, t4)

    def anchor_distance(self, x: float) -> float:
        return abs(x - self.anchors[x])

    def gap_of(self, t: float) -> tuple[float, float]:
        """Component ``(a, b)`` of ``I`` minus ``A`` containing ``t`` (``t`` not in ``A``)."""
        k = int(np.searchsorted(self.A, t))
        if k == 0 or k == len(self.A):
            raise InputError(f"{t} lies outside the hull of A")
        return (self.A[k - 1], self.A[k])

    def to_json(self, filtrations: Sequence["Filtration"] = ()) -> dict:
        out = {
            "schema": 1,
            "A": list(self.A),
            "r_min": self.r_min,
            "intervals": [list(q) for q in self.intervals],
            "terminal_gaps": [list(g) for g in self.terminal_gaps],
            "endpoints": [
                {"x": x, "anchor": self.anchors[x], "taus": list(self.taus(x))} for x in self.endpoints
            ],
        }
        for filt in filtrations:
            out[f"{filt.kind}_colors"] = list(filt.colors)
        return out


def _to_scaled(values: Sequence[float], r_min: float) -> tuple[list[int], int]:
    fr = [Fraction(v) for v in values]
    bits = max(d.denominator.bit_length() - 1 for d in fr)
    need = max(0, math.ceil(-math.log2(r_min)) + 6)
    K = max(bits, need)
    D = 1 << K
    ints = [int(f * D) for f in fr]
    assert all(Fraction(i, D) == f for i, f in zip(ints, fr))
    return ints, K


def whitney_decompose(A: Iterable[float], r_min: float) -> WhitneyDecomposition:
    """Maximal dyadic intervals Q in the gaps of A with diam Q <= dist(Q, A).

    Intervals are kept only while some point of them is at least ``r_min / 2``
    from A.  The uncovered terminal gaps then have width below ``r_min``, also
    when a whole gap of A is that short.
    """
    pts = sorted({float(a) for a in A})
    if len(pts) < 2:
        raise DegenerateA("need at least two points in A")
    if not r_min > 0:
        raise InputError("r_min must be positive")
    ints, K = _to_scaled(pts, r_min)
    D = 1 << K
    # m2 is twice the far distance; prune when it is below r_min (scaled)
    thr = math.ceil(Fraction(r_min) * D)

    def to_f(v: int) -> float:
        # dyadic endpoints and points of A have at most 53 significant bits
        return math.ldexp(float(v), -K)

    intervals: list[tuple[int, int]] = []
    gaps: list[tuple[int, int]] = []
    for a, b in zip(ints[:-1], ints[1:]):
        found: list[tuple[int, int]] = []
        size = 1 << max(0, (b - a - 1).bit_length())
        stack = [(lo, size) for lo in range((a // size) * size, b, size)][::-1]
        while stack:
            lo, s = stack.pop()
            hi = lo + s
            clo, chi = max(lo, a), min(hi, b)
            if chi <= clo:
                continue
            # largest distance to {a, b} over the clipped piece
            if 2 * clo <= a + b <= 2 * chi:
                m2 = b - a
            elif 2 * chi < a + b:
                m2 = 2 * (chi - a)
            else:
                m2 = 2 * (b - clo)
            if m2 < thr:
                continue
            if lo >= a and hi <= b and s <= min(lo - a, b - hi):
                found.append((lo, hi))
                continue
            if s == 1:
                raise InputError("dyadic refinement exhausted; r_min too small")
            half = s // 2
            stack.append((lo + half, half))
            stack.append((lo, half))
        found.sort()
        cur = a
        for lo, hi in found:
            if lo > cur:
                gaps.append((cur, lo))
            cur = hi
        if cur < b:
            gaps.append((cur, b))
        intervals.extend(found)

    fl_int = tuple((to_f(lo), to_f(hi)) for lo, hi in intervals)
    left_of = {hi: i for i, (lo, hi) in enumerate(fl_int)}
    right_of = {lo: i for i, (lo, hi) in enumerate(fl_int)}
    ends = sorted(set(left_of) | set(right_of))
    arr = np.array(pts)
    xs = np.array(ends)
    k = np.clip(np.searchsorted(arr, xs), 1, len(arr) - 1)
    lo, hi = arr[k - 1], arr[k]
    anchors = dict(zip(ends, np.where(xs - lo <= hi - xs, lo, hi).tolist()))
    return WhitneyDecomposition(
        A=tuple(pts),
        r_min=float(r_min),
        intervals=fl_int,
        terminal_gaps=tuple((to_f(lo), to_f(hi)) for lo, hi in gaps),
        endpoints=tuple(ends),
        anchors=anchors,
        left_of=left_of,
        right_of=right_of,
    )


# -- filtrations --------------------------------------------------------------


@dataclass(frozen=True)
class Filtration:
    kind: str
    colors: tuple[int, ...]
    class_count: int
    packing_bound: float
    max_conflicts: int

    def classes(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.class_count)]
        for i, c in enumerate(self.colors):
            out[c - 1].append(i)
        return out


_KERNELS: dict = {}


def _compiled(name, fn):
    """The colouring loops, compiled on first use."""
    if name not in _KERNELS:
        import numba

        _KERNELS[name] = numba.njit(cache=True)(fn)
    return _KERNELS[name]


def _greedy_loop(n, starts, partners, first_fit):
    colors = np.zeros(n, dtype=np.int64)
    seen = np.zeros(n + 2, dtype=np.int64)  # seen[c] == i + 1 marks colour c as taken for i
    for i in range(n):
        top = 0
        for k in range(starts[i], starts[i + 1]):
            c = colors[partners[k]]
            seen[c] = i + 1
            top = max(top, c)
        if first_fit:
            c = 1
            while seen[c] == i + 1:
                c += 1
        else:  # every earlier conflicting colour is exceeded
            c = top + 1
        colors[i] = c
    return colors


def _greedy_colors(n: int, starts, partners, rule: str) -> tuple[int, ...]:
    """Colour 0..n-1 in order; earlier conflicts of i are partners[starts[i]:starts[i+1]]."""
    loop = _compiled("greedy", _greedy_loop)
    out = loop(n, np.asarray(starts, dtype=np.int64), np.asarray(partners, dtype=np.int64), rule == "first_fit")
    return tuple(out.tolist())


def _window_pairs(pos: np.ndarray, reach: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pairs (i, j), i > j, with |pos_i - pos_j| <= max(reach_i, reach_j); pos sorted.

    Sorted by i then j.
    """
    n = len(pos)
    lo = np.searchsorted(pos, pos - reach, side="left")
    hi = np.searchsorted(pos, pos + reach, side="right")
    counts = hi - lo
    own = np.repeat(np.arange(n), counts)
    other = np.repeat(lo, counts) + np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    keep = own != other
    a = np.maximum(own, other)[keep]
    b = np.minimum(own, other)[keep]
    key = np.unique(a.astype(np.int64) * n + b)
    return key // n, key % n


def _color_by_conflicts(pos, reach, conflict_fn, rule: str) -> tuple[tuple[int, ...], int]:
    """Greedy colouring given sorted positions and a symmetric conflict test.

    Conflicting elements i, k must satisfy |pos_i - pos_k| <= max(reach_i, reach_k).
    """
    n = len(pos)
    if rule not in ("first_fit", "max_plus_one"):
        raise InputError(f"unknown colouring rule {rule!r}")
    i, j = _window_pairs(pos, reach)
    hit = conflict_fn(i, j)
    i, j = i[hit], j[hit]
    starts = np.searchsorted(i, np.arange(n + 1))
    deg = np.bincount(np.concatenate([i, j]), minlength=n)
    return _greedy_colors(n, starts, j, rule), int(deg.max(initial=0))


def endpoint_conflict(x1, x2, d1, d2, L: float, p0: float, sep: float = 12.0, band: float = 8.0):
    """True where two endpoints satisfy neither separation condition."""
    big = np.maximum(d1, d2)
    small = np.minimum(d1, d2)
    return (np.abs(x1 - x2) <= sep * L * big) & (big <= band * p0 * small)


def _endpoint_loop(x, d, near_factor, scale_factor, first_fit):
    # same test as endpoint_conflict, against every earlier endpoint
    n = len(x)
    colors = np.zeros(n, dtype=np.int64)
    deg = np.zeros(n, dtype=np.int64)
    seen = np.zeros(n + 2, dtype=np.int64)
    for i in range(n):
        top = 0
        for j in range(i):
            big = max(d[i], d[j])
            small = min(d[i], d[j])
            if abs(x[i] - x[j]) <= near_factor * big and big <= scale_factor * small:
                deg[i] += 1
                deg[j] += 1
                seen[colors[j]] = i + 1
                top = max(top, colors[j])
        if first_fit:
            c = 1
            while seen[c] == i + 1:
                c += 1
        else:
            c = top + 1
        colors[i] = c
    return colors, deg


def filter_endpoints(
    dec: WhitneyDecomposition,
    L: float,
    p0: float,
    sep: float = 12.0,
    band: float = 8.0,
    rule: str = "first_fit",
) -> Filtration:
    """Partition endpoints so same-class pairs are far apart or of very different scale.

    ``rule="first_fit"`` gives each endpoint the smallest colour unused by its
    earlier conflicts, so the class count is at most one more than the largest
    conflict set.  ``rule="max_plus_one"`` gives it one more than the largest such
    colour; classes stay valid but their number can grow with chain length.
    """
    if L < 1 or p0 < 1:
        raise InputError("filter_endpoints needs L >= 1 and p0 >= 1")
    if rule not in ("first_fit", "max_plus_one"):
        raise InputError(f"unknown colouring rule {rule!r}")
    x = np.array(dec.endpoints, dtype=float)
    d = np.abs(x - np.array([dec.anchors[v] for v in dec.endpoints], dtype=float))
    loop = _compiled("endpoint", _endpoint_loop)
    out, deg = loop(x, d, float(sep * L), float(band * p0), rule == "first_fit")
    colors, most = tuple(out.tolist()), int(deg.max(initial=0))
    bound = 192 * L * (band * p0) ** 2
    return Filtration("endpoint", colors, max(colors, default=0), bound, most)


def interval_gap(lo1, hi1, lo2, hi2):
    return np.maximum(0.0, np.maximum(lo1, lo2) - np.minimum(hi1, hi2))


def interval_conflict(lo1, hi1, lo2, hi2, L, lam, delta0, dist_factor=800.0, ratio_factor=800.0):
    """True where two intervals are neither far apart nor of very different size."""
    s1, s2 = hi1 - lo1, hi2 - lo2
    big, small = np.maximum(s1, s2), np.minimum(s1, s2)
    near = interval_gap(lo1, hi1, lo2, hi2) <= dist_factor * L**2 * lam * big
    alike = big <= ratio_factor * lam * L / delta0 * small
    return near & alike


def _first_fit_loop(lo, hi, lev, scale, reach_factor, D, first_fit):
    n = len(lo)
    nlev = len(scale)
    last = np.full((n + 1, nlev), -np.inf)  # right end of the last member per (colour, level)
    colors = np.zeros(n, dtype=np.int64)
    used = 0
    for i in range(n):
        k = lev[i]
        a = max(0, k - D)
        b = min(nlev, k + D + 1)
        pick = used
        if first_fit:
            for c in range(used):
                hit = False
                for kk in range(a, b):
                    if lo[i] - last[c, kk] <= reach_factor * max(scale[kk], scale[k]):
                        hit = True
                        break
                if not hit:
                    pick = c
                    break
        else:
            pick = 0
            for c in range(used - 1, -1, -1):
                hit = False
                for kk in range(a, b):
                    if lo[i] - last[c, kk] <= reach_factor * max(scale[kk], scale[k]):
                        hit = True
                        break
                if hit:
                    pick = c + 1
                    break
        if pick == used:
            used += 1
        last[pick, k] = hi[i]
        colors[i] = pick + 1
    return colors


def _dyadic_colors(lo, hi, level, reach_factor: float, K: float, rule: str) -> tuple[tuple[int, ...], int]:
    """Greedy colouring of sorted disjoint intervals whose sizes are powers of two.

    Sizes 2^k and 2^k' are alike iff |k - k'| <= D with 2^D <= K < 2^(D+1), so an
    earlier interval j conflicts with i iff its level is within D and
    lo_i - hi_j <= reach_factor * 2^max(k, k').  Per colour and level only the
    right-most member matters, which replaces the pair scan by a small table.
    """
    if rule not in ("first_fit", "max_plus_one"):
        raise InputError(f"unknown colouring rule {rule!r}")
    n = len(lo)
    if n == 0:
        return (), 0
    D = math.frexp(K)[1] - 1  # 2^D <= K < 2^(D+1)
    base = int(level.min())
    lev = level - base
    nlev = int(lev.max()) + 1
    scale = np.ldexp(1.0, np.arange(nlev) + base)
    colors = _compiled("dyadic", _first_fit_loop)(lo, hi, lev, scale, float(reach_factor), D, rule == "first_fit")
    # degrees: per level pair, neighbours within reach on either side
    deg = np.zeros(n, dtype=np.int64)
    for k2 in range(nlev):
        members = np.flatnonzero(lev == k2)
        if members.size == 0:
            continue
        near = np.abs(lev - k2) <= D
        big = np.maximum(scale[lev], scale[k2])
        right = np.searchsorted(lo[members], hi + reach_factor * big, side="right")
        left = np.searchsorted(hi[members], lo - reach_factor * big, side="left")
        cnt = right - left - (lev == k2)
        deg += np.where(near, cnt, 0)
    return tuple(colors.tolist()), int(deg.max(initial=0))


def ds_filtration(
    dec: WhitneyDecomposition,
    L: float,
    lam: float,
    delta0: float,
    dist_factor: float = 800.0,
    ratio_factor: float = 800.0,
    rule: str = "first_fit",
) -> Filtration:
    if L < 1 or lam < 1 or not (0 < delta0 < 1):
        raise InputError("ds_filtration needs L, lambda >= 1 and delta0 in (0, 1)")
    q = np.array(dec.intervals, dtype=float).reshape(-1, 2)
    lo, hi = q[:, 0], q[:, 1]
    K = ratio_factor * lam * L / delta0
    reach_factor = dist_factor * L**2 * lam
    size = hi - lo
    level = np.rint(np.log2(size)).astype(np.int64) if len(size) else np.zeros(0, dtype=np.int64)
    if np.all(np.ldexp(1.0, level) == size):
        colors, most = _dyadic_colors(lo, hi, level, reach_factor, K, rule)
    else:
        mid = (lo + hi) / 2
        # gap <= c*s with s the larger size puts midpoints within (c + 1)*s
        reach = (reach_factor + 1) * size * (1 + 1e-9)
        colors, most = _color_by_conflicts(
            mid,
            reach,
            lambda i, j: interval_conflict(lo[i], hi[i], lo[j], hi[j], L, lam, delta0, dist_factor, ratio_factor),
            rule,
        )
    # intervals conflicting with one of diameter s have diameter >= s/K and lie
    # in a window of length about 2*dist_factor*L^2*lam*K*s around it
    bound = K * (2 * dist_factor * L**2 * lam * K + 2 * K + 1) + 1
    return Filtration("interval", colors, max(colors, default=0), bound, most)


def filtration_violations(dec: WhitneyDecomposition, filt: Filtration, conflict) -> list[tuple[int, int]]:
    """Exhaustive scan of same-class pairs; returns those that still conflict.

    ``conflict(i, j)`` takes index arrays and returns a boolean array.
    """
    bad: list[tuple[int, int]] = []
    for members in filt.classes():
        m = np.asarray(members)
        if m.size < 2:
            continue
        i, j = np.triu_indices(m.size, k=1)
        hit = conflict(m[i], m[j])
        bad.extend(zip(m[i][hit].tolist(), m[j][hit].tolist()))
    return bad


def endpoint_violations(dec, filt, L, p0, sep=12.0, band=8.0):
    x = np.array(dec.endpoints)
    d = np.array([dec.anchor_distance(v) for v in dec.endpoints])
    return filtration_violations(dec, filt, lambda i, j: endpoint_conflict(x[i], x[j], d[i], d[j], L, p0, sep, band))


def interval_violations(dec, filt, L, lam, delta0, dist_factor=800.0, ratio_factor=800.0):
    q = np.array(dec.intervals, dtype=float).reshape(-1, 2)
    lo, hi = q[:, 0], q[:, 1]
    return filtration_violations(
        dec,
        filt,
        lambda i, j: interval_conflict(lo[i], hi[i], lo[j], hi[j], L, lam, delta0, dist_factor, ratio_factor),
    )
