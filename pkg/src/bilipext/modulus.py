"""Discrete p-modulus of curve families on a weighted graph.

Densities live on edges: a curve's rho-length is the sum of rho(e) * len(e)
over the edges it crosses (with multiplicity) and the p-mass of rho is the sum
of rho(e)**p * len(e).

The solver is a cutting-plane loop.  An exact shortest-path oracle finds the
family curve of least rho-length; violated curves join an active set, and the
convex program restricted to that set is solved through its dual, which is a
smooth concave maximisation over one multiplier per active curve with
nonnegativity bounds.  The dual value is a lower bound for the modulus and
rescaling rho by the oracle's minimum gives an admissible density, so every
result carries a two-sided bracket.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.optimize import minimize
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import InputError, NonConvergence, ShapeMismatch
from .metric_core import Curve, MetricSpace

__all__ = [
    "CurveFamilySpec",
    "ModulusResult",
    "solve_modulus",
    "analytic_bounds",
    "rho_length",
    "p_mass",
    "theta_space",
    "family_between",
]

# tie-breaking weight so zero-density edges still prefer short curves
_ETA = 1e-9


@dataclass(frozen=True)
class CurveFamilySpec:
    """Curves inside ``domain`` from ``connect_from`` to ``connect_to``.

    ``None`` for an endpoint set means any domain vertex.  ``touch`` asks every
    curve to meet ``B(Y, delta)``; ``avoid`` removes ``B(Y, delta)`` from the
    domain.  Lengths are ambient arc lengths and curves may revisit vertices.
    """

    domain: frozenset[int]
    connect_from: frozenset[int] | None = None
    connect_to: frozenset[int] | None = None
    min_length: float | None = None
    max_length: float | None = None
    touch: tuple[frozenset[int], float] | None = None
    avoid: tuple[frozenset[int], float] | None = None

    @classmethod
    def build(cls, domain, connect_from=None, connect_to=None, **kw) -> "CurveFamilySpec":
        fz = lambda s: None if s is None else frozenset(int(v) for v in s)  # noqa: E731
        for key in ("touch", "avoid"):
            if kw.get(key) is not None:
                Y, delta = kw[key]
                kw[key] = (fz(Y), float(delta))
        return cls(fz(domain), fz(connect_from), fz(connect_to), **kw)

    def to_json(self) -> dict:
        out: dict = {"domain": sorted(self.domain)}
        for key in ("connect_from", "connect_to"):
            val = getattr(self, key)
            out[key] = None if val is None else sorted(val)
        out["min_length"] = self.min_length
        out["max_length"] = self.max_length
        for key in ("touch", "avoid"):
            val = getattr(self, key)
            out[key] = None if val is None else {"Y": sorted(val[0]), "delta": val[1]}
        return out

    @classmethod
    def from_json(cls, data: dict) -> "CurveFamilySpec":
        kw = {}
        for key in ("touch", "avoid"):
            if data.get(key):
                kw[key] = (data[key]["Y"], data[key]["delta"])
        return cls.build(
            data["domain"],
            data.get("connect_from"),
            data.get("connect_to"),
            min_length=data.get("min_length"),
            max_length=data.get("max_length"),
            **kw,
        )


@dataclass
class ModulusResult:
    value: float
    rho: np.ndarray  # per edge of space.edge_list
    p: float
    active_paths: list[Curve]
    certificate_gap: float
    lower_bound: float
    upper_bound: float
    iterations: int
    empty_family: bool = False
    infeasible: bool = False
    history: list[float] = field(default_factory=list)

    def to_json(self, space: MetricSpace) -> dict:
        nz = np.flatnonzero(self.rho > 0)
        return {
            "value": self.value,
            "p": self.p,
            "lower_bound": self.lower_bound,
            "upper_bound": self.upper_bound,
            "certificate_gap": self.certificate_gap,
            "iterations": self.iterations,
            "empty_family": self.empty_family,
            "infeasible": self.infeasible,
            "rho": [
                {"u": space.vid(space.edge_list[k][0]), "v": space.vid(space.edge_list[k][1]), "rho": float(self.rho[k])}
                for k in nz
            ],
            "active_paths": [list(c.points) for c in self.active_paths],
        }


def _edge_arrays(space: MetricSpace) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not space.edge_list:
        z = np.zeros(0, dtype=np.int64)
        return z, z, np.zeros(0)
    a, b, w = zip(*space.edge_list)
    return np.array(a, dtype=np.int64), np.array(b, dtype=np.int64), np.array(w, dtype=float)


def p_mass(space: MetricSpace, rho: np.ndarray, p: float) -> float:
    _, _, w = _edge_arrays(space)
    return float(np.sum(w * rho**p))


def rho_length(space: MetricSpace, rho: np.ndarray, curve: Curve) -> float:
    key = {(a, b): k for k, (a, b, _) in enumerate(space.edge_list)}
    idx = curve.indices(space)
    total = 0.0
    for u, v in zip(idx, idx[1:]):
        k = key[(min(u, v), max(u, v))]
        total += rho[k] * space.edge_list[k][2]
    return total


class _Oracle:
    """Least rho-length family curve via Dijkstra on a layered product graph.

    A state is (vertex, quantised length so far, touched flag).  Lengths are
    counted in units of the resolution, which is exact when every edge length
    is a multiple of it.
    """

    def __init__(self, space: MetricSpace, fam: CurveFamilySpec) -> None:
        self.space = space
        h = space.resolution
        dom = space.indices(fam.domain)
        if fam.avoid is not None:
            Y, delta = fam.avoid
            near = space.dist_to_set(space.indices(Y)) < delta
            dom = dom[~near[dom]]
        local = np.full(space.n, -1, dtype=np.int64)
        local[dom] = np.arange(len(dom))
        self.dom = dom
        ea, eb, ew = _edge_arrays(space)
        inside = (local[ea] >= 0) & (local[eb] >= 0)
        eidx = np.flatnonzero(inside)
        lq = np.maximum(1, np.rint(ew[eidx] / h)).astype(np.int64)

        qmin = 0 if fam.min_length is None else math.ceil(fam.min_length / h - 1e-9)
        if fam.max_length is not None:
            top = math.floor(fam.max_length / h + 1e-9)
            saturate = False
        else:
            top = qmin
            saturate = True
        self.qmin, self.top = qmin, top
        T = 2 if fam.touch is not None else 1
        touched = np.zeros(space.n, dtype=bool)
        if fam.touch is not None:
            Y, delta = fam.touch
            touched = space.dist_to_set(space.indices(Y)) < delta
        nl = len(dom)
        S = top + 1
        self.S, self.T = S, T

        def state(v, q, t):
            return (v * S + q) * T + t

        rows, cols, emap = [], [], []
        for direction in (0, 1):
            u = local[ea[eidx]] if direction == 0 else local[eb[eidx]]
            v = local[eb[eidx]] if direction == 0 else local[ea[eidx]]
            vg = dom[v]
            for q in range(S):
                q2 = q + lq
                if saturate:
                    q2 = np.minimum(q2, top)
                ok = q2 <= top
                for t in range(T):
                    t2 = np.where(touched[vg], 1, t) if T == 2 else np.zeros(len(v), dtype=np.int64)
                    rows.append(state(u[ok], q, t))
                    cols.append(state(v[ok], q2[ok], t2[ok]))
                    emap.append(eidx[ok])
        self.rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        self.cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
        self.emap = np.concatenate(emap) if emap else np.zeros(0, dtype=np.int64)
        self.nstates = nl * S * T

        src = dom if fam.connect_from is None else np.intersect1d(space.indices(fam.connect_from), dom)
        dst = dom if fam.connect_to is None else np.intersect1d(space.indices(fam.connect_to), dom)
        t0 = touched[src].astype(np.int64) if T == 2 else np.zeros(len(src), dtype=np.int64)
        self.sources = np.unique(state(local[src], 0, t0))
        qs = np.arange(qmin, top + 1)
        tt = T - 1
        self.targets = np.sort(
            np.array([state(local[d], q, tt) for d in dst for q in qs], dtype=np.int64).reshape(-1)
        )
        self.edge_len = ew
        self.key = {(a, b): k for k, (a, b, _) in enumerate(space.edge_list)}
        self.empty = len(self.sources) == 0 or len(self.targets) == 0
        self.local = local

    def __call__(self, rho: np.ndarray, limit: int = 1) -> list[tuple[float, list[int], list[int]]]:
        """Least rho-length curves, at most one per end vertex, shortest first.

        Each entry is (rho-length, vertex indices, edge indices with repeats).
        An empty list means the family is empty.
        """
        if self.empty:
            return []
        w = (rho[self.emap] + _ETA) * self.edge_len[self.emap]
        g = csr_matrix(coo_matrix((w, (self.rows, self.cols)), shape=(self.nstates, self.nstates)))
        dist, pred, _ = dijkstra(g, directed=True, indices=self.sources, min_only=True, return_predecessors=True)
        dt = dist[self.targets]
        order = [int(k) for k in np.lexsort((self.targets, dt)) if np.isfinite(dt[k])]
        out = []
        ends = set()
        for k in order:
            end = int(self.targets[k]) // (self.S * self.T)
            if end in ends:
                continue
            ends.add(end)
            states = [int(self.targets[k])]
            while pred[states[-1]] >= 0:
                states.append(int(pred[states[-1]]))
            states.reverse()
            verts = [int(self.dom[st // (self.S * self.T)]) for st in states]
            edges = [self.key[(min(u, v), max(u, v))] for u, v in zip(verts, verts[1:])]
            length = float(sum(rho[e] * self.edge_len[e] for e in edges))
            out.append((length, verts, edges))
            if len(out) >= limit:
                break
        return out


def _solve_restricted(
    coef: csr_matrix, w: np.ndarray, p: float, lam0: np.ndarray, tol: float
) -> tuple[np.ndarray, np.ndarray, float]:
    """Maximise the dual of  min sum w rho^p  s.t. coef @ rho >= 1, rho >= 0.

    Returns (rho, multipliers, dual value).
    """
    expo = 1.0 / (p - 1.0)
    coefT = coef.T.tocsr()

    def rho_of(lam):
        c = coefT @ lam
        return np.power(np.maximum(c, 0.0) / (p * w), expo), c

    def neg_dual(lam):
        rho, c = rho_of(lam)
        g = lam.sum() - (1.0 - 1.0 / p) * float(c @ rho)
        grad = 1.0 - coef @ rho
        return -g, -grad

    res = minimize(
        neg_dual,
        lam0,
        jac=True,
        method="L-BFGS-B",
        bounds=[(0.0, None)] * len(lam0),
        options={"maxiter": 2000, "ftol": tol * 1e-3, "gtol": 1e-10},
    )
    lam = res.x
    rho, _ = rho_of(lam)
    dual = -float(res.fun)
    return rho, lam, dual


def solve_modulus(
    space: MetricSpace,
    family: CurveFamilySpec,
    p: float,
    tol: float = 1e-4,
    max_iter: int | None = None,
    batch: int = 16,
) -> ModulusResult:
    """Cutting-plane p-modulus of ``family``.

    Each round adds up to ``batch`` violated curves (the cheapest one per end
    vertex) before re-solving.  Stops once the cheapest family curve has
    rho-length at least ``1 - tol``.
    """
    if not p > 1:
        raise InputError("modulus needs p > 1")
    if family.connect_from is not None and family.connect_to is not None:
        if not family.connect_from or not family.connect_to:
            raise InputError("endpoint sets must be nonempty")
        if family.connect_from & family.connect_to and not family.min_length:
            raise InputError("endpoint sets overlap, so the family has constant curves")
    elif not family.min_length:
        raise InputError("unconstrained endpoints need a positive min_length")
    if not family.domain:
        raise InputError("empty domain")
    m = len(space.edge_list)
    _, _, w = _edge_arrays(space)
    oracle = _Oracle(space, family)
    cap = max_iter if max_iter is not None else 10 * max(m, 1)
    rho = np.zeros(m)
    seen: set[tuple[int, ...]] = set()
    curves: list[Curve] = []
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    lam = np.zeros(0)
    dual = 0.0
    history = []
    inner_tol = tol * 0.1
    tightenings = 0
    coef = None
    for it in range(1, cap + 1):
        found = oracle(rho, limit=batch)
        if not found:
            if it == 1:
                return ModulusResult(
                    0.0, rho, p, [], 0.0, 0.0, 0.0, 0, empty_family=True,
                    infeasible=_ends_disconnected(space, family, oracle),
                )
            raise NonConvergence("oracle lost every curve mid-run")
        length = found[0][0]
        if length >= 1 - tol:
            mass = float(np.sum(w * rho**p))
            return ModulusResult(
                value=mass,
                rho=rho,
                p=p,
                active_paths=curves,
                certificate_gap=max(0.0, 1 - length),
                lower_bound=dual,
                upper_bound=mass / length**p,
                iterations=it,
                history=history,
            )
        added = 0
        for ell, verts, edges in found:
            sig = tuple(sorted(edges))
            if ell >= 1 - tol or sig in seen:
                continue
            seen.add(sig)
            cnt = np.bincount(edges, minlength=m)
            nz = np.flatnonzero(cnt)
            rows.extend([len(curves)] * len(nz))
            cols.extend(nz.tolist())
            vals.extend((cnt[nz] * w[nz]).tolist())
            curves.append(Curve.from_indices(space, verts))
            added += 1
        if not added:
            # a known curve is still short: the restricted solve was too loose
            tightenings += 1
            if tightenings > 6:
                raise NonConvergence("oracle returned only active curves; tolerance too tight")
            inner_tol *= 0.01
            rho, lam, dual = _solve_restricted(coef, w, p, lam, inner_tol)
            history.append(dual)
            continue
        coef = csr_matrix((vals, (rows, cols)), shape=(len(curves), m))
        fill = 1.0 if len(lam) == 0 else float(lam.mean())
        lam0 = np.concatenate([lam, np.full(added, fill)])
        rho, lam, dual = _solve_restricted(coef, w, p, lam0, inner_tol)
        history.append(dual)
    raise NonConvergence(f"no certificate after {cap} cutting-plane rounds")


def _ends_disconnected(space: MetricSpace, fam: CurveFamilySpec, oracle: _Oracle) -> bool:
    from scipy.sparse.csgraph import connected_components

    dom = oracle.dom
    sub = space.csr[dom][:, dom]
    _, lab = connected_components(sub, directed=False)
    loc = oracle.local
    src = dom if fam.connect_from is None else space.indices(fam.connect_from)
    dst = dom if fam.connect_to is None else space.indices(fam.connect_to)
    a = {int(lab[loc[i]]) for i in src if loc[i] >= 0}
    b = {int(lab[loc[i]]) for i in dst if loc[i] >= 0}
    return not (a & b)


# -- explicit densities ---------------------------------------------------------


def _domain_edges(space: MetricSpace, members: np.ndarray) -> np.ndarray:
    ea, eb, _ = _edge_arrays(space)
    mask = np.zeros(space.n, dtype=bool)
    mask[members] = True
    return mask[ea] & mask[eb]


def analytic_bounds(
    space: MetricSpace, family: CurveFamilySpec, p: float, params: dict
) -> tuple[float | None, float | None]:
    """Closed-form bounds for three standard family shapes.

    ``params["shape"]`` selects one of

    * ``"joining_balls"``: curves in a ball joining two small balls; returns the
      trend formula ``constant * D**(Q-p) * (D/r)**(-Q*p)`` as the lower value.
    * ``"long_curves"``: curves in ``B(x, R)`` of length at least ``ell*R``; the
      density ``1/(ell*R)`` on the ball is admissible and its mass is the upper value.
    * ``"near_set"``: curves in ``B(x, R)`` meeting ``B(Y, delta*R)`` with length at
      least ``2*delta*R``; the density ``1/(delta*R)`` on ``B(Y, 2*delta*R + h)``
      inside the ball is admissible.  The extra ``h`` covers the last edge
      crossed on the way out.
    """
    shape = params.get("shape")
    w = _edge_arrays(space)[2]
    if shape == "joining_balls":
        D, r = float(params["D"]), float(params["r"])
        Q = float(params["Q"])
        if not (0 < r < D / 3 + 1e-12):
            raise ShapeMismatch("joining_balls needs 0 < r < D/3")
        const = float(params.get("constant", 1.0))
        return const * D ** (Q - p) * (D / r) ** (-Q * p), None
    if shape == "long_curves":
        R, ell = float(params["R"]), float(params["ell"])
        if family.min_length is None or family.min_length < ell * R - 1e-9:
            raise ShapeMismatch("long_curves needs min_length >= ell*R")
        inside = _domain_edges(space, space.indices(family.domain))
        mass = float(np.sum(w[inside])) * (ell * R) ** (-p)
        return None, mass
    if shape == "near_set":
        R, delta = float(params["R"]), float(params["delta"])
        if family.touch is None or family.min_length is None:
            raise ShapeMismatch("near_set needs a touch constraint and a min_length")
        Y, reach = family.touch
        if reach > delta * R + 1e-9 or family.min_length < 2 * delta * R - 1e-9:
            raise ShapeMismatch("near_set family does not match delta*R")
        dY = space.dist_to_set(space.indices(Y))
        dom = space.indices(family.domain)
        U = dom[dY[dom] < 2 * delta * R + space.resolution]
        inside = _domain_edges(space, U)
        mass = float(np.sum(w[inside])) * (delta * R) ** (-p)
        return None, mass
    raise ShapeMismatch(f"unknown shape {shape!r}")


def theta_space(k: int, s: int, h: float = 1.0) -> tuple[MetricSpace, int, int]:
    """``k`` internally disjoint paths of ``s`` edges between two poles (ids 0 and 1)."""
    edges = []
    nxt = 2
    for _ in range(k):
        prev = 0
        for step in range(s - 1):
            edges.append((prev, nxt, h))
            prev = nxt
            nxt += 1
        edges.append((prev, 1, h))
    return MetricSpace(range(nxt), edges, h), 0, 1


def family_between(space: MetricSpace, a: Iterable[int], b: Iterable[int], **kw) -> CurveFamilySpec:
    return CurveFamilySpec.build(space.ids.tolist(), a, b, **kw)
