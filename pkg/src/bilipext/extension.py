"""Extend a bi-Lipschitz map from a finite set of reals to the interval it spans.

The pipeline has four stages, each of which checks its own inequalities and
raises instead of returning something it cannot vouch for:

1. reference points: one off-set vertex per Whitney endpoint, placed near the
   image of its anchor but clear of ``f(A)`` and of one another;
2. middle thirds: each Whitney interval's middle third is sent to a
   clearance path between the reference points of its two ends;
3. local modifications: around every endpoint a connector ``gamma_x`` joins
   the two neighbouring middle-third images and the glue parameters
   ``t1 <= t2 <= t3 <= t4`` are found by exact threshold scans;
4. assembly: the pieces are laid end to end into one vertex sequence ``F``.

``F`` maps a parameter ``s`` to the vertex whose breakpoint is nearest to it.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import (
    CertificationFailed,
    DegenerateA,
    InputError,
    NoClearancePath,
    PlacementFailed,
    ThresholdNotCrossed,
)
from .metric_core import Curve, MetricSpace, geodesic_indices, restricted_geodesic, BiLipschitzReport
from .pathfinder import ClearanceParams, clearance_search
from .straighten import StraightenConfig, straighten
from .whitney import WhitneyDecomposition, ds_filtration, filter_endpoints, whitney_decompose

__all__ = [
    "ExtensionConfig",
    "ExtensionProblem",
    "LocalModification",
    "ExtensionMap",
    "ExtensionResult",
    "CertificateLog",
    "reference_points",
    "middle_third_embedding",
    "local_modifications",
    "extend",
    "map_distortion",
]


@dataclass(frozen=True)
class ExtensionConfig:
    """Tunable constants.  ``None`` picks the default described per field."""

    r_min: float = 1.0
    xi: float | None = None  # default 1/(4 p0)
    delta0: float = 0.25  # clearance of middle-third curves, relative to diam Q
    ell0: float | None = None  # length budget relative to diam Q; default 2 d(ends)
    eps_glue: float | None = None  # default xi / 100
    lam: float = 1.0
    constants_75: float | None = None  # default 75 * lam
    p0: float | None = None  # porosity of f(A); probed when None
    p: float = 1.5
    straighten_eps: float = 0.2
    endpoint_sep: float = 12.0
    endpoint_band: float = 8.0
    ds_dist_factor: float = 800.0
    ds_ratio_factor: float = 800.0
    glue_halvings: int = 6
    modulus_check: bool = False
    sample_budget: int = 400_000
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.r_min > 0:
            raise InputError("r_min must be positive")
        if self.xi is not None and not 0 < self.xi < 1 / 3:
            raise InputError("xi must lie in (0, 1/3)")
        if self.eps_glue is not None:
            if not self.eps_glue > 0:
                raise InputError("eps_glue must be positive")
            if self.xi is not None and self.eps_glue >= self.xi:
                raise InputError("eps_glue must be below xi")
        if self.lam < 1 or not 0 < self.delta0 < 1:
            raise InputError("need lam >= 1 and delta0 in (0, 1)")
        if self.p0 is not None and self.p0 < 1:
            raise InputError("p0 must be >= 1")

    @classmethod
    def from_json(cls, data: dict) -> "ExtensionConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise InputError(f"unknown config keys: {sorted(extra)}")
        return cls(**data)

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _map_distortion_points(space: MetricSpace, xs: np.ndarray, vs: np.ndarray) -> float:
    if len(xs) < 2:
        return 1.0
    rows = np.vstack([space.dist_row(int(v))[vs] for v in vs])
    i, j = np.triu_indices(len(xs), k=1)
    d = rows[i, j]
    dt = np.abs(xs[i] - xs[j])
    if np.any(d == 0):
        return math.inf
    return float(max(np.max(d / dt), np.max(dt / d)))


@dataclass
class ExtensionProblem:
    space: MetricSpace
    A: tuple[float, ...]
    f: dict[float, int]
    config: ExtensionConfig = field(default_factory=ExtensionConfig)
    L_measured: float = field(init=False)

    def __post_init__(self) -> None:
        A = tuple(sorted(float(a) for a in self.A))
        if len(set(A)) != len(A):
            raise InputError("A has repeated points")
        if len(A) < 2:
            raise DegenerateA("need at least two points in A")
        f = {float(k): int(v) for k, v in self.f.items()}
        if set(f) != set(A):
            raise InputError("f must be defined exactly on A")
        for v in f.values():
            self.space.idx(v)
        if len(set(f.values())) != len(f):
            raise InputError("f is not injective")
        self.A, self.f = A, f
        self.L_measured = _map_distortion_points(
            self.space, np.array(A), self.space.index_array([f[a] for a in A])
        )

    def fidx(self, a: float) -> int:
        return self.space.idx(self.f[a])

    @classmethod
    def from_json(cls, space: MetricSpace, data: dict, config: ExtensionConfig | None = None) -> "ExtensionProblem":
        A = [float(a) for a in data["A"]]
        fmap = data["f"]
        f = {float(k): int(v) for k, v in fmap.items()} if isinstance(fmap, dict) else dict(zip(A, fmap))
        cfg = config or ExtensionConfig.from_json(data.get("config", {}))
        return cls(space, tuple(A), f, cfg)

    def to_json(self) -> dict:
        return {
            "A": list(self.A),
            "f": {repr(a): self.f[a] for a in self.A},
            "config": self.config.to_json(),
        }


# -- certificates ----------------------------------------------------------------


@dataclass
class CertificateLog:
    """Every inequality checked by the pipeline, with its measured value."""

    entries: list[dict] = field(default_factory=list)

    def check(self, stage: str, clause: str, value: float, bound: float, sense: str = "<=", where=None) -> None:
        ok = value <= bound * (1 + 1e-12) + 1e-12 if sense == "<=" else value >= bound * (1 - 1e-12) - 1e-12
        self.entries.append(
            {"stage": stage, "clause": clause, "value": float(value), "bound": float(bound),
             "sense": sense, "ok": bool(ok), "where": where}
        )
        if not ok:
            raise CertificationFailed(
                f"{stage}: {clause} fails at {where}: {value:.6g} {sense} {bound:.6g} is false", clause=clause
            )

    def note(self, stage: str, clause: str, value: float, where=None, **extra) -> None:
        """Record a measured quantity that is reported but not enforced."""
        self.entries.append({"stage": stage, "clause": clause, "value": float(value), "ok": None, "where": where, **extra})

    def failures(self) -> list[dict]:
        return [e for e in self.entries if e["ok"] is False]

    def summary(self) -> dict[str, int]:
        c = Counter((e["stage"], e["clause"]) for e in self.entries if e["ok"] is not None)
        return {f"{s}: {k}": n for (s, k), n in sorted(c.items())}


@dataclass
class _Context:
    problem: ExtensionProblem
    dec: WhitneyDecomposition
    p0: float
    xi: float
    eps_glue: float
    log: CertificateLog

    @property
    def space(self) -> MetricSpace:
        return self.problem.space

    @property
    def L(self) -> float:
        return max(1.0, self.problem.L_measured)


def _context(problem: ExtensionProblem, dec: WhitneyDecomposition | None = None, log: CertificateLog | None = None) -> _Context:
    cfg = problem.config
    dec = dec or whitney_decompose(problem.A, cfg.r_min)
    p0 = cfg.p0
    if p0 is None:
        from .space_gallery import porosity_probe

        p0 = porosity_probe(problem.space, list(problem.f.values()), seed=cfg.seed).p0_hat
    xi = cfg.xi if cfg.xi is not None else 1 / (4 * p0)
    eps = cfg.eps_glue if cfg.eps_glue is not None else xi / 100
    if eps >= xi:
        raise InputError("eps_glue must be below xi")
    return _Context(problem, dec, float(p0), float(xi), float(eps), log or CertificateLog())


# -- stage 1: reference points ------------------------------------------------------


def _gap_partner(dec: WhitneyDecomposition, x: float) -> float:
    lo, hi = dec.gap_of(x)
    return hi if dec.anchors[x] == lo else lo


def _place_reference_points(ctx: _Context) -> dict[float, int]:
    space, dec, prob = ctx.space, ctx.dec, ctx.problem
    cfg = prob.config
    h = space.resolution
    fA = space.indices(prob.f.values())
    dfA = space.dist_to_set(fA)
    filt = filter_endpoints(dec, ctx.L, ctx.p0, cfg.endpoint_sep, cfg.endpoint_band)
    ctx.log.note("reference", "endpoint classes", filt.class_count, bound=filt.packing_bound)
    pi: dict[float, int] = {}
    snapped: set[float] = set()
    for members in filt.classes():
        for k in members:
            x = dec.endpoints[k]
            a = dec.anchors[x]
            d = abs(x - a)
            ca = prob.fidx(a)
            if 4 * d < h:
                # below resolution every admissible vertex is f(a) itself
                pi[x] = ca
                snapped.add(x)
                continue
            # sphere point: the vertex at distance d from f(a) along the way to
            # the image of the other end of this gap of A
            toward = geodesic_indices(space, ca, prob.fidx(_gap_partner(dec, x)))
            along = space.dist_row(ca)[toward]
            xp = toward[int(np.argmin(np.abs(along - d)))]
            ra = space.dist_row(ca)
            ok = (ra >= d / 4) & (ra <= 4 * d) & (dfA >= ctx.xi * d)
            for y, iy in pi.items():
                if y not in snapped:
                    ok &= space.dist_row(iy) >= ctx.xi * (d + abs(y - dec.anchors[y]))
            cand = np.flatnonzero(ok)
            if cand.size == 0:
                raise PlacementFailed(
                    f"no reference point for endpoint {x}: conclusions (1)-(3) leave no vertex",
                    clause="reference point (1)-(3)",
                )
            rxp = space.dist_row(xp)
            # a clear hole first (clearance counts up to d), then nearness to x'
            room = np.minimum(dfA[cand], d)
            pick = cand[np.lexsort((cand, rxp[cand], -room))[0]]
            pi[x] = int(pick)
    _certify_reference_points(ctx, pi, snapped, dfA)
    return pi


def _certify_reference_points(ctx: _Context, pi: dict[float, int], snapped: set[float], dfA: np.ndarray) -> None:
    space, dec, prob, log = ctx.space, ctx.dec, ctx.problem, ctx.log
    xs = [x for x in dec.endpoints if x not in snapped]
    for x in snapped:
        log.note("reference", "snapped to f(a_x) below resolution", abs(x - dec.anchors[x]), where=x)
    for x in xs:
        d = abs(x - dec.anchors[x])
        r = space.dist_row(pi[x])[prob.fidx(dec.anchors[x])]
        log.check("reference", "(1) d(pi(x), f(a_x)) >= |x - a_x|/4", r, d / 4, ">=", x)
        log.check("reference", "(1) d(pi(x), f(a_x)) <= 4|x - a_x|", r, 4 * d, "<=", x)
        log.check("reference", "(2) dist(pi(x), f(A)) >= xi|x - a_x|", dfA[pi[x]], ctx.xi * d, ">=", x)
    for i, x in enumerate(xs):
        row = space.dist_row(pi[x])
        for y in xs[i + 1 :]:
            dd = abs(x - dec.anchors[x]) + abs(y - dec.anchors[y])
            log.check("reference", "(3) d(pi(x), pi(y)) >= xi(|x-a_x| + |y-a_y|)", row[pi[y]], ctx.xi * dd, ">=", (x, y))
    L = ctx.L
    for k, (x, y) in enumerate(dec.intervals):
        if x in snapped or y in snapped:
            continue
        diam = y - x
        dpp = space.dist_row(pi[x])[pi[y]]
        dff = space.dist_row(prob.fidx(dec.anchors[x]))[prob.fidx(dec.anchors[y])]
        log.check("reference", "d(pi(x),pi(y)) <= d(f(a_x),f(a_y)) + 40 diam Q", dpp, dff + 40 * diam, "<=", k)
        log.check("reference", "d(pi(x),pi(y)) <= 51 L diam Q", dpp, 51 * L * diam, "<=", k)
        log.note("reference", "stated +36 diam Q form holds", float(dpp <= dff + 36 * diam), where=k)
        log.note("reference", "stated 46 L diam Q form holds", float(dpp <= 46 * L * diam), where=k)
    if len(xs) > 1:
        ex = np.array(xs)
        Lt = _map_distortion_points(space, ex, np.array([pi[x] for x in xs]))
        log.note("reference", "bi-Lipschitz constant of pi", Lt)


def reference_points(problem: ExtensionProblem, dec: WhitneyDecomposition | None = None) -> dict[float, int]:
    """Certified reference vertex (as a vertex id) for every Whitney endpoint."""
    ctx = _context(problem, dec)
    pi = _place_reference_points(ctx)
    return {x: ctx.space.vid(i) for x, i in pi.items()}


# -- stage 2: middle thirds -------------------------------------------------------------


@dataclass
class Segment:
    """Image of one middle third: vertex indices with their parameters."""

    interval: int
    verts: np.ndarray
    params: np.ndarray
    R: float
    clearance: float


def _pick_end(space: MetricSpace, center: int, rho: float, blocked: np.ndarray, domain: np.ndarray) -> int | None:
    row = space.dist_row(center)
    cand = np.flatnonzero((row <= rho) & ~blocked & domain)
    if cand.size == 0:
        return None
    return int(cand[np.lexsort((cand, row[cand]))[0]])


def _straightened_clear(space: MetricSpace, path: list[int], blocked: np.ndarray, domain: np.ndarray, eps: float) -> list[int]:
    """Straighten ``path``; keep the result only if it still avoids ``blocked``."""
    if len(path) < 3 or eps <= 0:
        return path
    try:
        new = straighten(space, Curve.from_indices(space, path), StraightenConfig(eps=eps)).indices(space)
    except Exception:  # noqa: BLE001 - straightening is an optional improvement
        return path
    arr = np.asarray(new)
    if blocked[arr].any() or not domain[arr].all() or len(set(new)) != len(new):
        return path
    return new


def _segment_params(space: MetricSpace, path: list[int], lo: float, hi: float) -> np.ndarray:
    if len(path) == 1:
        return np.array([lo])
    cum = Curve.from_indices(space, path).cum_length
    return lo + (hi - lo) * cum / cum[-1]


def _build_middle_thirds(ctx: _Context, pi: dict[float, int]) -> dict[int, Segment]:
    space, dec, prob, log = ctx.space, ctx.dec, ctx.problem, ctx.log
    cfg = prob.config
    h = space.resolution
    lam = cfg.lam
    filt = ds_filtration(dec, ctx.L, lam, cfg.delta0, cfg.ds_dist_factor, cfg.ds_ratio_factor)
    log.note("middle", "interval classes", filt.class_count, bound=filt.packing_bound)
    occupied = np.zeros(space.n, dtype=bool)
    occupied[space.indices(prob.f.values())] = True
    reserved = np.zeros(space.n, dtype=bool)
    reserved[list(pi.values())] = True
    Lt = max(1.0, next((e["value"] for e in log.entries if e["clause"] == "bi-Lipschitz constant of pi"), 1.0))
    segs: dict[int, Segment] = {}
    for members in filt.classes():
        for i in members:
            w, z = dec.intervals[i]
            wh, zh = dec.middle_third(i)
            pw, pz = pi[w], pi[z]
            diam = z - w
            R = float(space.dist_row(pw)[pz])
            rho_theory = ctx.xi * diam / (2**8 * Lt * lam)
            rho = max(rho_theory, h)
            if R == 0:
                segs[i] = Segment(i, np.array([pw, pw]), np.array([wh, zh]), 0.0, 0.0)
                log.note("middle", "collapsed below resolution", diam, where=i)
                continue
            domain = (space.dist_row(pw) < 4 * lam * R) & (space.dist_row(pz) < 4 * lam * R)
            blocked = occupied | (reserved & ~np.isin(np.arange(space.n), [pw, pz]))
            s = _pick_end(space, pw, rho, blocked, domain)
            if s is None:
                raise PlacementFailed(f"interval {i}: no free vertex near pi({w})", clause="middle-third start near pi(w)")
            blocked_s = blocked.copy()
            blocked_s[s] = True
            e = _pick_end(space, pz, rho, blocked_s, domain)
            if e is None:
                raise PlacementFailed(f"interval {i}: no free vertex near pi({z})", clause="middle-third end near pi(z)")
            D = float(space.dist_row(s)[e])
            ell = max(1.0, cfg.ell0 * diam / D) if cfg.ell0 is not None else 2.0
            params = ClearanceParams(
                lam=lam, length_factor=ell, clearance_factor=min(1.0, cfg.delta0 * diam / D)
            )
            Y = space.ids[np.flatnonzero(blocked)].tolist()
            try:
                res = clearance_search(space, space.vid(s), space.vid(e), Y, params, within=domain)
            except Exception as exc:
                exc.args = (f"interval {i} [{w}, {z}]: {exc.args[0] if exc.args else exc}",)
                raise
            path = _straightened_clear(space, res.curve.indices(space), blocked, domain, cfg.straighten_eps)
            arr = np.asarray(path)
            dY = space.dist_to_set(np.flatnonzero(blocked)) if blocked.any() else np.full(space.n, np.inf)
            clear = float(dY[arr].min())
            seg = Segment(i, arr, _segment_params(space, path, wh, zh), R, clear)
            _certify_segment(ctx, seg, pw, pz, rho, rho_theory, domain, diam)
            if cfg.modulus_check:
                _modulus_note(ctx, i, s, e, domain, blocked, D * ell, diam)
            segs[i] = seg
            occupied[arr] = True
    return segs


def _certify_segment(ctx: _Context, seg: Segment, pw: int, pz: int, rho: float, rho_theory: float, domain, diam: float) -> None:
    space, log, lam = ctx.space, ctx.log, ctx.problem.config.lam
    i = seg.interval
    log.check("middle", "(1) d(g(w^), pi(w)) <= max(xi diam Q / (2^8 L~ lam), h)", space.dist_row(pw)[seg.verts[0]], rho, "<=", i)
    log.check("middle", "(2) d(g(z^), pi(z)) <= max(xi diam Q / (2^8 L~ lam), h)", space.dist_row(pz)[seg.verts[-1]], rho, "<=", i)
    log.note("middle", "endpoint closeness at the unscaled bound", rho_theory, where=i)
    inside = float(domain[seg.verts].all())
    log.check("middle", "(3) g(Q^) inside B(pi(w), 4 lam R) and B(pi(z), 4 lam R)", inside, 1.0, ">=", i)
    rows = np.vstack([space.dist_row(int(v))[seg.verts] for v in seg.verts])
    dg = float(rows.max())
    log.check("middle", "diam g(Q^) <= (8 lam + 1) R", dg, (8 * lam + 1) * seg.R, "<=", i)
    log.check("middle", "diam g(Q^) <= 414 L lam diam Q", dg, 414 * ctx.L * lam * diam, "<=", i)
    log.check("middle", "g(Q^) avoids f(A) and earlier images", seg.clearance, space.resolution / 2, ">=", i)
    log.note("middle", "relative clearance delta", seg.clearance / diam, where=i)


def _modulus_note(ctx: _Context, i: int, s: int, e: int, domain, blocked, max_len: float, diam: float) -> None:
    from .modulus import CurveFamilySpec, solve_modulus

    space = ctx.space
    dom = np.flatnonzero(domain & ~blocked)
    fam = CurveFamilySpec.build(
        space.ids[dom].tolist(), [space.vid(s)], [space.vid(e)], max_length=max_len
    )
    try:
        val = solve_modulus(space, fam, ctx.problem.config.p).value
    except Exception as exc:  # noqa: BLE001 - reporting only
        ctx.log.note("middle", "modulus of curve family", math.nan, where=i, error=str(exc))
        return
    ctx.log.note("middle", "modulus of curve family", val, where=i, relative=val / diam ** (3 - ctx.problem.config.p))


def middle_third_embedding(
    problem: ExtensionProblem, dec: WhitneyDecomposition, pi_map: dict[float, int]
) -> dict[int, list[int]]:
    """Vertex ids of the image of each middle third, keyed by interval index."""
    ctx = _context(problem, dec)
    pi = {x: problem.space.idx(v) for x, v in pi_map.items()}
    segs = _build_middle_thirds(ctx, pi)
    return {i: problem.space.ids[s.verts].tolist() for i, s in segs.items()}


# -- stage 3: local modifications ---------------------------------------------------------


@dataclass
class LocalModification:
    x: float
    gamma_x: Curve
    t1: float
    t2: float
    t3: float
    t4: float
    group: str  # "E'" or "E''"
    eps_used: float
    gamma_params: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))

    def ordered(self, taus: tuple[float, float, float, float]) -> bool:
        t1_, t2_, t3_, t4_ = taus
        return t1_ <= self.t1 <= t2_ <= self.t2 <= self.t3 <= t3_ <= self.t4 <= t4_

    def to_json(self) -> dict:
        return {
            "x": self.x,
            "gamma_x": list(self.gamma_x.points),
            "t": [self.t1, self.t2, self.t3, self.t4],
            "group": self.group,
            "eps_used": self.eps_used,
        }


def _interior_endpoints(dec: WhitneyDecomposition) -> list[float]:
    return [x for x in dec.endpoints if x in dec.left_of and x in dec.right_of]


def _split_alternating(dec: WhitneyDecomposition) -> tuple[list[float], list[float]]:
    """Alternate along each run of consecutive interior endpoints."""
    first, second = [], []
    parity = 0
    prev = None
    for x in _interior_endpoints(dec):
        # consecutive interior endpoints share the interval between them
        if prev is None or dec.right_of[prev] != dec.left_of[x]:
            parity = 0
        (first if parity == 0 else second).append(x)
        parity ^= 1
        prev = x
    return first, second


def _glue_scan(
    space: MetricSpace,
    gL: Segment,
    gR: Segment,
    gam: np.ndarray,
    gpar: np.ndarray,
    lo1: float,
    hi4: float,
    thr: float,
) -> tuple[float, float, float, float, int, int, int, int]:
    """Exact threshold scans; returns t-values and the positions they sit at."""
    to_gam = space.dist_to_set(gam)
    # t1: first left-third parameter whose image comes within thr of gamma
    kL = np.flatnonzero((gL.params >= lo1 - 1e-15) & (to_gam[gL.verts] <= thr))
    if kL.size == 0:
        raise ThresholdNotCrossed("t1 scan found no crossing", clause="t_x^1")
    k1 = int(kL[0])
    v1 = int(gL.verts[k1])
    near1 = np.flatnonzero(space.dist_row(v1)[gam] <= thr)
    if near1.size == 0:
        raise ThresholdNotCrossed("t2 scan found no crossing", clause="t_x^2")
    k2 = int(near1[-1])
    kR = np.flatnonzero((gR.params <= hi4 + 1e-15) & (to_gam[gR.verts] <= thr))
    if kR.size == 0:
        raise ThresholdNotCrossed("t4 scan found no crossing", clause="t_x^4")
    k4 = int(kR[-1])
    v4 = int(gR.verts[k4])
    near4 = np.flatnonzero((space.dist_row(v4)[gam] <= thr) & (np.arange(len(gam)) >= k2))
    if near4.size == 0:
        raise ThresholdNotCrossed("t3 scan found no crossing after t2", clause="t_x^3")
    k3 = int(near4[0])
    return float(gL.params[k1]), float(gpar[k2]), float(gpar[k3]), float(gR.params[k4]), k1, k2, k3, k4


def _segment_distortion(space: MetricSpace, segs: dict[int, Segment], prob: ExtensionProblem) -> float:
    xs = [np.array(prob.A)] + [s.params for s in segs.values()]
    vs = [space.index_array([prob.f[a] for a in prob.A])] + [s.verts for s in segs.values()]
    return _map_distortion_points(space, np.concatenate(xs), np.concatenate(vs))


def _build_modifications(ctx: _Context, segs: dict[int, Segment]) -> dict[float, LocalModification]:
    space, dec, prob, log = ctx.space, ctx.dec, ctx.problem, ctx.log
    cfg = prob.config
    h = space.resolution
    first, second = _split_alternating(dec)
    L_hat = _segment_distortion(space, segs, prob)
    log.note("local", "bi-Lipschitz constant of g", L_hat)
    base = np.zeros(space.n, dtype=bool)
    base[space.indices(prob.f.values())] = True
    seg_mask = {i: np.isin(np.arange(space.n), s.verts) for i, s in segs.items()}
    all_segs = np.zeros(space.n, dtype=bool)
    for m in seg_mask.values():
        all_segs |= m
    mods: dict[float, LocalModification] = {}
    built = np.zeros(space.n, dtype=bool)  # connectors already placed
    for group, xs in (("E'", first), ("E''", second)):
        for x in xs:
            iL, iR = dec.left_of[x], dec.right_of[x]
            gL, gR = segs[iL], segs[iR]
            tau1, tau2 = dec.middle_third(iL)
            tau3, tau4 = dec.middle_third(iR)
            dL, dR = dec.diam(iL), dec.diam(iR)
            start, end = int(gL.verts[-1]), int(gR.verts[0])
            blocked = base | all_segs | built
            blocked[[start, end]] = False
            Y = space.ids[np.flatnonzero(blocked)].tolist()
            D = float(space.dist_row(start)[end])
            params = ClearanceParams(lam=cfg.lam, length_factor=2.0, clearance_factor=min(1.0, cfg.delta0 * min(dL, dR) / max(D, h)))
            try:
                sigma = clearance_search(space, space.vid(start), space.vid(end), Y, params)
            except Exception as exc:
                exc.args = (f"connector at endpoint {x}: {exc.args[0] if exc.args else exc}",)
                raise
            path = _straightened_clear(space, sigma.curve.indices(space), blocked, np.ones(space.n, dtype=bool), cfg.straighten_eps)
            gam = np.asarray(path)
            gpar = _segment_params(space, path, tau2, tau3)
            xl, xr = _left_neighbor(dec, x), _right_neighbor(dec, x)
            lo1 = mods[xl].t4 if xl in mods else tau1
            hi4 = mods[xr].t1 if xr in mods else tau4
            eps = ctx.eps_glue
            for attempt in range(cfg.glue_halvings + 1):
                thr = eps * (dL + dR)
                try:
                    t1, t2, t3, t4, k1, k2, k3, k4 = _glue_scan(space, gL, gR, gam, gpar, lo1, hi4, thr)
                    break
                except ThresholdNotCrossed:
                    if attempt == cfg.glue_halvings:
                        raise
                    eps /= 2
            mod = LocalModification(x, Curve.from_indices(space, path), t1, t2, t3, t4, group, eps, gpar)
            _certify_modification(ctx, mod, (tau1, tau2, tau3, tau4), gam, gpar, L_hat, dL, dR, blocked)
            mods[x] = mod
            # the parts of gamma_x in use, plus the bridges, become obstacles
            used = list(gam[k2 : k3 + 1])
            used += geodesic_indices(space, int(gL.verts[k1]), int(gam[k2]))
            used += geodesic_indices(space, int(gam[k3]), int(gR.verts[k4]))
            built[used] = True
    for x, y in zip(_interior_endpoints(dec), _interior_endpoints(dec)[1:]):
        if dec.right_of[x] != dec.left_of[y]:
            continue
        mx, my = mods[x], mods[y]
        vx = _g_at(segs[dec.right_of[x]], mx.t4)
        vy = _g_at(segs[dec.left_of[y]], my.t1)
        dLy = dec.diam(dec.left_of[y])
        log.check("local", "d(g(t4_x), g(t1_y)) >= xi diam L_y / 2", space.dist_row(vx)[vy], ctx.xi * dLy / 2, ">=", (x, y))
    return mods


def _left_neighbor(dec: WhitneyDecomposition, x: float) -> float | None:
    i = dec.left_of.get(x)
    return None if i is None else dec.intervals[i][0]


def _right_neighbor(dec: WhitneyDecomposition, x: float) -> float | None:
    i = dec.right_of.get(x)
    return None if i is None else dec.intervals[i][1]


def _g_at(seg: Segment, t: float) -> int:
    return int(seg.verts[int(np.argmin(np.abs(seg.params - t)))])


def _certify_modification(ctx: _Context, mod: LocalModification, taus, gam, gpar, L_hat, dL, dR, blocked) -> None:
    space, log = ctx.space, ctx.log
    x = mod.x
    log.check("local", "tau1 <= t1 <= tau2 <= t2 <= t3 <= tau3 <= t4 <= tau4", float(mod.ordered(taus)), 1.0, ">=", x)
    if len(gam) > 1:
        L_star = _map_distortion_points(space, gpar, gam)
    else:
        L_star = 1.0
    log.note("local", "bi-Lipschitz constant of gamma_x", L_star, where=x)
    floor = (dL + dR) / (4 * L_hat * L_star) if math.isfinite(L_hat * L_star) else 0.0
    log.check("local", "t3 - t2 >= (diam L + diam R) / (4 L^ L*)", mod.t3 - mod.t2, floor, ">=", x)
    log.check("local", "t3 - t2 > 0", mod.t3 - mod.t2, 0.0, ">=", x)
    inner = gam[1:-1]
    if inner.size:
        dY = space.dist_to_set(np.flatnonzero(blocked))
        log.check("local", "gamma_x avoids the rest of g", float(dY[inner].min()), space.resolution / 2, ">=", x)
        log.note("local", "relative clearance of gamma_x", float(dY[inner].min()) / max(dL, dR), where=x)


def local_modifications(problem: ExtensionProblem, dec: WhitneyDecomposition, pi_map: dict[float, int], g=None) -> list[LocalModification]:
    """Connectors and glue parameters around every endpoint with intervals on both sides.

    ``g`` is ignored when given as vertex-id lists; the middle thirds are rebuilt
    deterministically from ``pi_map``.
    """
    ctx = _context(problem, dec)
    pi = {x: problem.space.idx(v) for x, v in pi_map.items()}
    segs = _build_middle_thirds(ctx, pi)
    mods = _build_modifications(ctx, segs)
    return [mods[x] for x in sorted(mods)]


# -- stage 4: assembly --------------------------------------------------------------------


@dataclass
class ExtensionMap:
    """``F`` as breakpoints: vertex ``vertices[k]`` sits at parameter ``params[k]``."""

    params: np.ndarray
    vertices: tuple[int, ...]
    pieces: list[tuple[float, float, str]]
    excluded: list[tuple[float, float]]  # terminal gaps, left out of distortion reports

    def __call__(self, s: float) -> int:
        k = int(np.searchsorted(self.params, s))
        if k == 0:
            return self.vertices[0]
        if k == len(self.params):
            return self.vertices[-1]
        lo, hi = self.params[k - 1], self.params[k]
        return self.vertices[k - 1] if s - lo <= hi - s else self.vertices[k]

    def included(self) -> np.ndarray:
        keep = np.ones(len(self.params), dtype=bool)
        for lo, hi in self.excluded:
            keep &= ~((self.params > lo) & (self.params < hi))
        return keep

    def to_json(self) -> dict:
        return {
            "breakpoints": [[float(s), int(v)] for s, v in zip(self.params, self.vertices)],
            "pieces": [{"from": a, "to": b, "kind": k} for a, b, k in self.pieces],
            "excluded": [list(g) for g in self.excluded],
        }


class _Builder:
    def __init__(self, space: MetricSpace):
        self.space = space
        self.s: list[float] = []
        self.v: list[int] = []
        self.pieces: list[tuple[float, float, str]] = []

    def add(self, params: np.ndarray, verts: Iterable[int], kind: str) -> None:
        params = [float(p) for p in params]
        verts = [int(v) for v in verts]
        if self.v and self.v[-1] == verts[0] and abs(self.s[-1] - params[0]) <= 1e-12:
            params, verts = params[1:], verts[1:]
        elif self.s and params and params[0] <= self.s[-1]:
            raise CertificationFailed("assembly produced non-increasing parameters", clause="assembly order")
        self.s.extend(params)
        self.v.extend(verts)

    def piece(self, lo: float, hi: float, path: list[int], kind: str) -> None:
        if hi < lo:
            raise CertificationFailed(f"piece {kind} runs backwards", clause="assembly order")
        if hi == lo:
            # zero-length piece: the two ends must coincide
            if path[0] != path[-1]:
                raise CertificationFailed(f"zero-length {kind} piece joins distinct vertices", clause="assembly continuity")
            self.add([lo], [path[0]], kind)
            return
        self.add(_segment_params(self.space, path, lo, hi) if len(path) > 1 else np.array([lo, hi]),
                 path if len(path) > 1 else [path[0], path[0]], kind)
        self.pieces.append((float(lo), float(hi), kind))


def _sub(seg: Segment, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    keep = (seg.params >= lo - 1e-15) & (seg.params <= hi + 1e-15)
    return seg.params[keep], seg.verts[keep]


def _assemble(ctx: _Context, segs: dict[int, Segment], mods: dict[float, LocalModification]) -> ExtensionMap:
    space, dec, prob = ctx.space, ctx.dec, ctx.problem
    b = _Builder(space)
    A = prob.A
    by_gap: dict[tuple[float, float], list[int]] = {}
    for i, (lo, hi) in enumerate(dec.intervals):
        by_gap.setdefault(dec.gap_of((lo + hi) / 2), []).append(i)
    others = np.zeros(space.n, dtype=bool)
    others[space.indices(prob.f.values())] = True
    for s in segs.values():
        others[s.verts] = True
    for m in mods.values():
        others[m.gamma_x.indices(space)] = True
    excluded = list(dec.terminal_gaps)
    for a, c in zip(A[:-1], A[1:]):
        fa, fc = prob.fidx(a), prob.fidx(c)
        ids = by_gap.get((a, c), [])
        if not ids:
            b.piece(a, c, _bridge(space, fa, fc, others), "gap")
            continue
        ids.sort()
        first, last = segs[ids[0]], segs[ids[-1]]
        b.piece(a, float(first.params[0]), _bridge(space, fa, int(first.verts[0]), others), "terminal")
        for j, i in enumerate(ids):
            seg = segs[i]
            lo_x, hi_x = dec.intervals[i]
            m_lo = mods.get(lo_x)
            m_hi = mods.get(hi_x)
            s_lo = m_lo.t4 if m_lo else float(seg.params[0])
            s_hi = m_hi.t1 if m_hi else float(seg.params[-1])
            ps, vs = _sub(seg, s_lo, s_hi)
            b.add(ps, vs, "g")
            b.pieces.append((s_lo, s_hi, "g"))
            if m_hi is not None:
                m = m_hi
                gam = np.asarray(m.gamma_x.indices(space))
                k2 = int(np.argmin(np.abs(m.gamma_params - m.t2)))
                k3 = int(np.argmin(np.abs(m.gamma_params - m.t3)))
                v1 = _g_at(seg, m.t1)
                v4 = _g_at(segs[dec.right_of[hi_x]], m.t4)
                b.piece(m.t1, m.t2, geodesic_indices(space, v1, int(gam[k2])), "bridge")
                b.add(m.gamma_params[k2 : k3 + 1], gam[k2 : k3 + 1], "gamma")
                b.pieces.append((m.t2, m.t3, "gamma"))
                b.piece(m.t3, m.t4, geodesic_indices(space, int(gam[k3]), v4), "bridge")
            elif j + 1 < len(ids):
                raise CertificationFailed(f"endpoint {hi_x} has no local modification", clause="assembly coverage")
        b.piece(float(last.params[-1]), c, _bridge(space, int(last.verts[-1]), fc, others), "terminal")
    F = ExtensionMap(np.array(b.s), tuple(space.ids[np.array(b.v)].tolist()), b.pieces, excluded)
    return F


def _bridge(space: MetricSpace, u: int, v: int, others: np.ndarray) -> list[int]:
    """Shortest u-v path off ``others``; the path is then added to ``others``.

    Paths that also keep one edge away from ``others`` (except next to u and v)
    are preferred, so later bridges are not sealed off.
    """
    h = space.resolution
    ends = np.minimum(space.dist_row(u), space.dist_row(v)) <= h * (1 + 1e-9)
    wide = (space.dist_to_set(np.flatnonzero(others)) > h * (1 + 1e-9)) | ends
    path = None
    for extra in (wide, None):
        allowed = ~others if extra is None else ~others & extra
        allowed[[u, v]] = True
        path = restricted_geodesic(space, u, v, allowed)
        if path is not None:
            break
    if path is None:
        raise NoClearancePath(
            f"no path from {space.vid(u)} to {space.vid(v)} off the rest of F",
            clause="bridge between consecutive pieces of F",
        )
    others[path] = True
    return path


# -- distortion report --------------------------------------------------------------------


CASES = ("g", "1.1", "1.2", "1.3", "1.4", "2", "3.1.1", "3.1.2", "3.1.3", "3.2", "terminal")


def _regions(s: np.ndarray, mods: dict[float, LocalModification], dec: WhitneyDecomposition) -> tuple[np.ndarray, np.ndarray]:
    """Per parameter: owning endpoint index (or -1) and part 0/1/2 of its window.

    Parameters outside every window get the index of the nearest endpoint to
    their left among modified ones (for the 3.1 / 3.2 split) encoded as
    ``-(k + 2)``.
    """
    xs = sorted(mods)
    owner = np.full(len(s), -1)
    part = np.full(len(s), -1)
    for k, x in enumerate(xs):
        m = mods[x]
        for p, (lo, hi) in enumerate(((m.t1, m.t2), (m.t2, m.t3), (m.t3, m.t4))):
            hit = (s >= lo) & (s <= hi) & (owner == -1)
            owner[hit] = k
            part[hit] = p
    return owner, part


def _classify(i, j, owner, part, xs, mods, dec, s, terminal) -> str:
    if terminal[i] or terminal[j]:
        return "terminal"
    oi, oj = owner[i], owner[j]
    if oi == -1 and oj == -1:
        return "g"
    if oi >= 0 and oj >= 0:
        if oi != oj:
            return "2"
        pi_, pj = sorted((part[i], part[j]))
        if pi_ == pj:
            return "1.2" if pi_ == 1 else "1.1"
        if (pi_, pj) == (0, 2):
            return "1.4"
        return "1.3"
    # one parameter in a window, the other in g's part
    k, p, t = (oi, part[i], s[j]) if oi >= 0 else (oj, part[j], s[i])
    x = xs[k]
    m = mods[x]
    left = _left_neighbor(dec, x)
    right = _right_neighbor(dec, x)
    lo = mods[left].t4 if left in mods else dec.middle_third(dec.left_of[x])[0]
    hi = mods[right].t1 if right in mods else dec.middle_third(dec.right_of[x])[1]
    if lo <= t <= m.t1:
        return ("3.1.1", "3.1.2", "3.1.3")[p]
    if m.t4 <= t <= hi:
        return ("3.1.3", "3.1.2", "3.1.1")[p]
    return "3.2"


def map_distortion(
    space: MetricSpace,
    F: ExtensionMap,
    min_gap: float,
    budget: int = 400_000,
    seed: int = 0,
) -> tuple[BiLipschitzReport, np.ndarray, np.ndarray]:
    """Distortion of ``F`` over breakpoint pairs at least ``min_gap`` apart.

    Breakpoints inside terminal gaps are skipped.  Returns the report and the
    index pairs that were used.
    """
    keep = np.flatnonzero(F.included())
    s = F.params[keep]
    vidx = space.index_array(F.vertices)[keep]
    n = len(s)
    i, j = np.triu_indices(n, k=1)
    far = (s[j] - s[i]) >= min_gap * (1 - 1e-12)
    i, j = i[far], j[far]
    if len(i) > budget:
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(len(i), size=budget, replace=False))
        i, j = i[pick], j[pick]
    if len(i) == 0:
        return BiLipschitzReport(1.0, 1.0, 1.0, min_gap, 0), keep[i], keep[j]
    uniq, inv = np.unique(vidx, return_inverse=True)
    rows = np.vstack([space.dist_row(int(u))[uniq] for u in uniq])
    d = rows[inv[i], inv[j]]
    ratio = d / (s[j] - s[i])
    lower, upper = float(ratio.min()), float(ratio.max())
    L = max(upper, 1 / lower) if lower > 0 else math.inf
    return BiLipschitzReport(lower, upper, L, float(min_gap), int(len(i))), keep[i], keep[j]


# -- driver ---------------------------------------------------------------------------------


@dataclass
class ExtensionResult:
    F: ExtensionMap
    report: BiLipschitzReport
    component_certificates: list[dict]
    certificates: CertificateLog
    pi_map: dict[float, int]
    segments: dict[int, list[int]]
    modifications: list[LocalModification]
    case_counts: dict[str, int]
    decomposition: WhitneyDecomposition
    p0: float
    xi: float
    eps_glue: float
    L_f: float

    @property
    def L_prime(self) -> float:
        return self.report.L_measured

    def to_json(self) -> dict:
        return {
            "F": self.F.to_json(),
            "report": self.report.to_json(),
            "component_certificates": self.component_certificates,
            "certificates": self.certificates.entries,
            "pi": {repr(x): v for x, v in self.pi_map.items()},
            "segments": {str(i): v for i, v in self.segments.items()},
            "modifications": [m.to_json() for m in self.modifications],
            "case_counts": self.case_counts,
            "p0": self.p0,
            "xi": self.xi,
            "eps_glue": self.eps_glue,
            "L_f": self.L_f,
            "L_prime": self.L_prime,
        }


def _stage(name: str, fn, *args):
    try:
        return fn(*args)
    except Exception as exc:
        if exc.args and isinstance(exc.args[0], str) and not exc.args[0].startswith("["):
            exc.args = (f"[{name}] {exc.args[0]}",) + exc.args[1:]
        raise


def extend(problem: ExtensionProblem) -> ExtensionResult:
    """Run every stage and return ``F`` with its certificates."""
    cfg = problem.config
    space = problem.space
    ctx = _stage("whitney", _context, problem)
    dec = ctx.dec
    pi = _stage("reference", _place_reference_points, ctx)
    segs = _stage("middle", _build_middle_thirds, ctx, pi)
    mods = _stage("local", _build_modifications, ctx, segs)
    F = _stage("assembly", _assemble, ctx, segs, mods)
    log = ctx.log
    for a in problem.A:
        log.check("assembly", "F(a) = f(a)", float(F(a) == problem.f[a]), 1.0, ">=", a)
    verts = np.asarray(F.vertices)
    # a simple vertex sequence is the discrete form of injectivity
    collapsed = verts[np.r_[True, verts[1:] != verts[:-1]]]
    log.check("assembly", "F visits each vertex once", float(len(set(collapsed.tolist())) == len(collapsed)), 1.0, ">=")
    comps = []
    c75 = cfg.constants_75 if cfg.constants_75 is not None else 75 * cfg.lam
    for a, c in zip(problem.A[:-1], problem.A[1:]):
        inside = space.indices(np.asarray(F.vertices)[(F.params >= a) & (F.params <= c)].tolist())
        uniq = np.unique(inside)
        diam = max(float(space.dist_row(int(u))[uniq].max()) for u in uniq)
        dff = float(space.dist_row(problem.fidx(a))[problem.fidx(c)])
        bound = c75 * max(c - a, dff)
        comps.append({"x": a, "y": c, "diam": diam, "bound": bound, "ok": bool(diam <= bound)})
        log.check("assembly", "diam F([x,y]) <= 75 lam max(|x-y|, d(f(x),f(y)))", diam, bound, "<=", (a, c))
    report, pi_, pj = map_distortion(space, F, cfg.r_min, cfg.sample_budget, cfg.seed)
    log.check("assembly", "L' finite at scales >= r_min", float(math.isfinite(report.L_measured)), 1.0, ">=")
    xs = sorted(mods)
    owner, part = _regions(F.params, mods, dec)
    terminal = np.zeros(len(F.params), dtype=bool)
    for lo, hi, kind in F.pieces:
        if kind in ("terminal", "gap"):
            terminal |= (F.params > lo) & (F.params < hi)
    cases = Counter(_classify(i, j, owner, part, xs, mods, dec, F.params, terminal) for i, j in zip(pi_.tolist(), pj.tolist()))
    return ExtensionResult(
        F=F,
        report=report,
        component_certificates=comps,
        certificates=log,
        pi_map={x: space.vid(i) for x, i in pi.items()},
        segments={i: space.ids[s.verts].tolist() for i, s in segs.items()},
        modifications=[mods[x] for x in xs],
        case_counts={c: cases.get(c, 0) for c in CASES},
        decomposition=dec,
        p0=ctx.p0,
        xi=ctx.xi,
        eps_glue=ctx.eps_glue,
        L_f=problem.L_measured,
    )
