"""Command-line entry point: ``bilipext <command> ...``.

Exit codes: 0 when every certificate passes, 2 when a construction ends in a
certified failure, 1 for usage and I/O errors.  Every run writes a manifest
next to its first output.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .errors import BilipError, CertifiedFailure, InputError

SCHEMA = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage errors exit 1 with the flag schema
        self.print_help(sys.stderr)
        sys.stderr.write(f"\nerror: {message}\n")
        raise SystemExit(1)


# -- io helpers -----------------------------------------------------------------------


def _read_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def _write_json(path: str | Path, data) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (set, frozenset, tuple)):
        return sorted(obj) if isinstance(obj, (set, frozenset)) else list(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _id_list(data, key: str) -> list[int]:
    if isinstance(data, dict):
        data = data.get(key, data.get("vertices"))
    if not isinstance(data, list):
        raise InputError(f"expected a list of vertex ids under '{key}'")
    return [int(v) for v in data]


def _threads() -> int | None:
    raw = os.environ.get("BILIP_THREADS")
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError as exc:
        raise InputError(f"BILIP_THREADS must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise InputError("BILIP_THREADS must be a positive integer")
    # the constructions are single-threaded; this only caps numeric backends
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    return n


class _Run:
    """Collects what goes into the manifest."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.stages: dict[str, float] = {}
        self.certificates: dict[str, int] | dict[str, bool] = {}
        self.start = time.perf_counter()

    def input(self, path: str) -> str:
        self.inputs[path] = _sha256(path)
        return path

    def output(self, path: str | None) -> str | None:
        if path:
            self.outputs.append(path)
        return path

    @contextmanager
    def stage(self, name: str):
        t = time.perf_counter()
        try:
            yield
        finally:
            self.stages[name] = round(time.perf_counter() - t, 6)

    def manifest(self, status: str, exit_code: int, error: str | None = None) -> dict:
        cfg = {k: v for k, v in vars(self.args).items() if k != "func"}
        return {
            "schema": SCHEMA,
            "version": __version__,
            "command": self.args.command,
            "argv": sys.argv[1:],
            "inputs": self.inputs,
            "seed": getattr(self.args, "seed", None),
            "config": cfg,
            "outputs": self.outputs,
            "wall_clock": round(time.perf_counter() - self.start, 6),
            "stage_timings": self.stages,
            "certificates": self.certificates,
            "threads": os.environ.get("BILIP_THREADS"),
            "status": status,
            "exit_code": exit_code,
            "error": error,
        }

    def manifest_path(self) -> Path:
        explicit = getattr(self.args, "manifest", None)
        if explicit:
            return Path(explicit)
        first = getattr(self.args, "out", None) or (self.outputs[0] if self.outputs else ".")
        p = Path(first)
        return (p.parent if p.suffix else p) / f"{self.args.command}.manifest.json"


# -- plot data ------------------------------------------------------------------------

_PLOT_SCRIPT = '''"""Plot the CSV files written next to this script."""
import csv
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(__file__).parent
curve = here / "curve_plot.csv"
ratios = here / "ratios_hist.csv"
if curve.exists():
    rows = list(csv.DictReader(open(curve)))
    cols = [c for c in rows[0] if c.startswith("x")]
    fig = plt.figure()
    if len(cols) >= 3:
        ax = fig.add_subplot(projection="3d")
        ax.plot(*[[float(r[c]) for r in rows] for c in cols[:3]])
    elif len(cols) == 2:
        plt.plot(*[[float(r[c]) for r in rows] for c in cols])
    else:
        plt.plot([float(r["t"]) for r in rows], [int(r["vertex_id"]) for r in rows])
    fig.savefig(here / "curve.png")
if ratios.exists():
    rows = list(csv.DictReader(open(ratios)))
    plt.figure()
    plt.bar([float(r["lo"]) for r in rows], [int(r["count"]) for r in rows],
            width=[float(r["hi"]) - float(r["lo"]) for r in rows], align="edge")
    plt.xlabel("d(F(s), F(t)) / |s - t|")
    plt.savefig(here / "ratios.png")
'''


def emit_plot_data(outdir: str | Path, space=None, points=None, params=None, ratios=None, bins: int = 30) -> list[str]:
    """CSV files for a curve and/or a histogram of distance ratios, plus a plot script.

    ``points`` are vertex ids at parameters ``params``.  Without vertex
    coordinates the curve CSV carries only parameters and ids.
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if points is not None:
        pts = list(points)
        t = list(params)
        coords = getattr(space, "coords", None)
        dim = 0 if coords is None else coords.shape[1]
        path = out / "curve_plot.csv"
        with open(path, "w") as fh:
            fh.write(",".join(["t", "vertex_id"] + [f"x{k}" for k in range(dim)]) + "\n")
            for s, v in zip(t, pts):
                row = [repr(float(s)), str(int(v))]
                if dim:
                    row += [repr(float(c)) for c in coords[space.idx(v)]]
                fh.write(",".join(row) + "\n")
        written.append(str(path))
    if ratios is not None and len(ratios):
        r = np.asarray(ratios, dtype=float)
        counts, edges = np.histogram(r, bins=bins)
        path = out / "ratios_hist.csv"
        with open(path, "w") as fh:
            fh.write("lo,hi,count\n")
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                fh.write(f"{lo!r},{hi!r},{int(c)}\n")
        written.append(str(path))
    script = out / "plot.py"
    script.write_text(_PLOT_SCRIPT)
    written.append(str(script))
    return written


# -- commands -------------------------------------------------------------------------


def _load_space(run: _Run, path: str):
    from .metric_core import load_space

    return load_space(run.input(path))


def cmd_gen_space(args, run: _Run) -> int:
    from .metric_core import save_space
    from .space_gallery import grid_space, plane_pair_space, regularity_fit

    with run.stage("generate"):
        if args.kind == "grid":
            space = grid_space(args.dim, args.side, args.h)
        else:
            space = plane_pair_space(args.dim, args.side, args.h, args.hole_radius)
    save_space(space, run.output(args.out))
    if args.report:
        with run.stage("estimate"):
            rep: dict = {"schema": SCHEMA, "vertices": space.n, "resolution": space.resolution}
            try:
                fit = regularity_fit(space, r_min=2 * args.h, r_max=max(4 * args.h, space.diameter() / 4), seed=args.seed)
                rep["regularity"] = {"Q_hat": fit.Q_hat, "C1_hat": fit.C1_hat, "residual": fit.residual}
            except BilipError as exc:
                rep["regularity"] = {"error": str(exc)}
        _write_json(run.output(args.report), rep)
    return 0


def cmd_whitney(args, run: _Run) -> int:
    from .whitney import ds_filtration, endpoint_violations, filter_endpoints, interval_violations, whitney_decompose

    data = _read_json(run.input(args.A))
    A = data["A"] if isinstance(data, dict) else data
    with run.stage("decompose"):
        dec = whitney_decompose([float(a) for a in A], args.rmin)
    with run.stage("filtrations"):
        ef = filter_endpoints(dec, args.L, args.p0)
        df = ds_filtration(dec, args.L, args.lam, args.delta0)
        bad = len(endpoint_violations(dec, ef, args.L, args.p0)) + len(
            interval_violations(dec, df, args.L, args.lam, args.delta0)
        )
    run.certificates = {"filtration violations": bad}
    _write_json(run.output(args.out), dec.to_json([ef, df]))
    return 0 if bad == 0 else 2


def cmd_modulus(args, run: _Run) -> int:
    from .modulus import CurveFamilySpec, solve_modulus

    space = _load_space(run, args.space)
    fam = CurveFamilySpec.from_json(_read_json(run.input(args.family)))
    with run.stage("solve"):
        res = solve_modulus(space, fam, args.p, tol=args.tol)
    out = {"schema": SCHEMA, **res.to_json(space)}
    run.certificates = {"duality gap within tolerance": bool(res.certificate_gap <= max(args.tol, 1e-12) * 10 or res.empty_family or res.infeasible)}
    _write_json(run.output(args.out), out)
    return 0


def cmd_connect(args, run: _Run) -> int:
    from .metric_core import write_curve_csv
    from .pathfinder import clearance_path, uniform_connect

    space = _load_space(run, args.space)
    Y = _id_list(_read_json(run.input(args.obstacles)), "Y") if args.obstacles else []
    with run.stage("connect"):
        if args.uniform:
            from .space_gallery import porosity_probe

            p0 = porosity_probe(space, Y, seed=args.seed).p0_hat if Y else 1.0
            curve = uniform_connect(space, Y, args.x, args.y, p0)
        else:
            curve = clearance_path(space, args.x, args.y, Y)
    ys = set(Y)
    run.certificates = {"curve avoids obstacles": not (set(curve.points) & ys)}
    write_curve_csv(space, curve, run.output(args.out))
    return 0


def cmd_straighten(args, run: _Run) -> int:
    from .metric_core import bilip_report, read_curve_csv, write_curve_csv
    from .straighten import StraightenConfig, straighten_trace

    space = _load_space(run, args.space)
    sigma = read_curve_csv(space, run.input(args.curve))
    with run.stage("straighten"):
        tr = straighten_trace(space, sigma, StraightenConfig(eps=args.eps))
    rep = bilip_report(space, tr.curve, scale=tr.curve.length, seed=args.seed)
    n = tr.chain_length
    bound = 2.0 ** max(n - 1, 0)
    ok_ends = tr.curve.points[0] == sigma.points[0] and tr.curve.points[-1] == sigma.points[-1]
    run.certificates = {"endpoints preserved": ok_ends, "L <= 2^(n-1)": bool(tr.shortcut or rep.L_measured <= bound * (1 + 1e-6))}
    write_curve_csv(space, tr.curve, run.output(args.out))
    if args.report:
        _write_json(
            run.output(args.report),
            {"schema": SCHEMA, "report": rep.to_json(), "shortcut": tr.shortcut, "chain": tr.chain,
             "chain_length": n, "diameter": tr.diameter, "certificates": run.certificates},
        )
    if args.plot_dir:
        run.outputs += emit_plot_data(args.plot_dir, space, tr.curve.points, tr.curve.cum_length)
    return 0 if all(run.certificates.values()) else 2


def _extension_report(res) -> dict:
    return {
        "schema": SCHEMA,
        "report": res.report.to_json(),
        "L_f": res.L_f,
        "L_prime": res.L_prime,
        "p0": res.p0,
        "xi": res.xi,
        "eps_glue": res.eps_glue,
        "case_counts": res.case_counts,
        "component_certificates": res.component_certificates,
        "certificates": res.certificates.entries,
        "summary": res.certificates.summary(),
    }


def cmd_extend(args, run: _Run) -> int:
    from .extension import ExtensionConfig, ExtensionProblem, extend, map_distortion

    space = _load_space(run, args.space)
    data = _read_json(run.input(args.problem))
    cfg_data = dict(data.get("config", {}))
    if args.rmin is not None:
        cfg_data["r_min"] = args.rmin
    if args.seed is not None:
        cfg_data["seed"] = args.seed
    problem = ExtensionProblem.from_json(space, data, ExtensionConfig.from_json(cfg_data))
    with run.stage("extend"):
        res = extend(problem)
    run.certificates = res.certificates.summary()
    _write_json(
        run.output(args.out),
        {"schema": SCHEMA, **res.F.to_json(), "pi": {repr(x): v for x, v in res.pi_map.items()},
         "segments": {str(i): v for i, v in res.segments.items()},
         "modifications": [m.to_json() for m in res.modifications]},
    )
    if args.report:
        _write_json(run.output(args.report), _extension_report(res))
    if args.plot_dir:
        _, i, j = map_distortion(space, res.F, problem.config.r_min)
        pos = space.index_array(res.F.vertices)
        d = np.array([space.dist_row(int(pos[a]))[pos[b]] for a, b in zip(i, j)])
        ratios = d / (res.F.params[j] - res.F.params[i]) if len(i) else None
        run.outputs += emit_plot_data(args.plot_dir, space, res.F.vertices, res.F.params, ratios)
    return 0


def cmd_trace(args, run: _Run) -> int:
    from .continuum import trace_with_report
    from .metric_core import write_curve_csv

    space = _load_space(run, args.space)
    K = _id_list(_read_json(run.input(args.K)), "K")
    with run.stage("trace"):
        res = trace_with_report(space, K, args.eps, args.x, args.y)
    bound = args.eps * res.diameter + 2 * space.resolution
    mult_ok = all(m <= 2 for m in res.plan.multiplicity.values())
    run.certificates = {
        "hausdorff <= eps diam K + 2h": bool(res.hausdorff <= bound + 1e-12),
        "endpoints are x and y": res.curve.points[0] == args.x and res.curve.points[-1] == args.y,
        "tour multiplicities <= 2": mult_ok,
    }
    write_curve_csv(space, res.curve, run.output(args.out))
    if args.plan:
        _write_json(run.output(args.plan), res.plan.to_json())
    if args.report:
        _write_json(
            run.output(args.report),
            {"schema": SCHEMA, "hausdorff": res.hausdorff, "bound": bound, "diameter": res.diameter,
             "f_distortion": res.f_distortion, "separation": res.separation,
             "extension": _extension_report(res.extension), "certificates": run.certificates},
        )
    if args.plot_dir:
        run.outputs += emit_plot_data(args.plot_dir, space, res.curve.points, res.curve.cum_length)
    return 0 if all(run.certificates.values()) else 2


def _collect_flags(obj, out: list[bool]) -> None:
    if isinstance(obj, dict):
        for k, v in obj.items():
            if k == "ok" and isinstance(v, bool):
                out.append(v)
            elif k == "certificates" and isinstance(v, dict):
                out.extend(bool(x) for x in v.values() if isinstance(x, bool))
            else:
                _collect_flags(v, out)
    elif isinstance(obj, list):
        for v in obj:
            _collect_flags(v, out)


def cmd_verify(args, run: _Run) -> int:
    """Re-read a report and exit 0 only if every recorded certificate passed."""
    data = _read_json(run.input(args.report))
    flags: list[bool] = []
    _collect_flags(data, flags)
    if not flags:
        raise InputError(f"{args.report} records no certificates")
    failed = flags.count(False)
    run.certificates = {"passed": len(flags) - failed, "failed": failed}
    print(f"{len(flags) - failed}/{len(flags)} certificates pass")
    return 0 if failed == 0 else 2


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bilipext", description="Constructive bi-Lipschitz curves on metric graphs.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name: str, fn, help_: str) -> argparse.ArgumentParser:
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--manifest", help="manifest path (default: next to the first output)")
        return sp

    g = add("gen-space", cmd_gen_space, "write a grid or plane-pair space")
    g.add_argument("--kind", choices=["grid", "plane-pair"], required=True)
    g.add_argument("--dim", type=int, required=True)
    g.add_argument("--side", type=int, required=True)
    g.add_argument("--h", type=float, default=1.0)
    g.add_argument("--hole-radius", type=float, default=0.0)
    g.add_argument("--out", required=True)
    g.add_argument("--report")

    w = add("whitney", cmd_whitney, "Whitney decomposition with both filtrations")
    w.add_argument("--A", required=True)
    w.add_argument("--rmin", type=float, required=True)
    w.add_argument("--L", type=float, default=1.0)
    w.add_argument("--p0", type=float, default=2.0)
    w.add_argument("--lam", type=float, default=1.0)
    w.add_argument("--delta0", type=float, default=0.25)
    w.add_argument("--out", required=True)

    m = add("modulus", cmd_modulus, "p-modulus of a curve family")
    m.add_argument("--space", required=True)
    m.add_argument("--family", required=True)
    m.add_argument("--p", type=float, required=True)
    m.add_argument("--tol", type=float, default=1e-4)
    m.add_argument("--out", required=True)

    c = add("connect", cmd_connect, "curve between two vertices avoiding obstacles")
    c.add_argument("--space", required=True)
    c.add_argument("--x", type=int, required=True)
    c.add_argument("--y", type=int, required=True)
    c.add_argument("--obstacles")
    c.add_argument("--uniform", action="store_true")
    c.add_argument("--out", required=True)

    s = add("straighten", cmd_straighten, "straighten a curve")
    s.add_argument("--space", required=True)
    s.add_argument("--curve", required=True)
    s.add_argument("--eps", type=float, default=0.2)
    s.add_argument("--out", required=True)
    s.add_argument("--report")
    s.add_argument("--plot-dir")

    e = add("extend", cmd_extend, "extend a map from a finite set to its interval")
    e.set_defaults(seed=None)
    e.add_argument("--space", required=True)
    e.add_argument("--problem", required=True)
    e.add_argument("--rmin", type=float)
    e.add_argument("--out", required=True)
    e.add_argument("--report")
    e.add_argument("--plot-dir")

    t = add("trace", cmd_trace, "trace a connected set by a curve")
    t.add_argument("--space", required=True)
    t.add_argument("--K", required=True)
    t.add_argument("--eps", type=float, default=0.3)
    t.add_argument("--x", type=int, required=True)
    t.add_argument("--y", type=int, required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--plan")
    t.add_argument("--report")
    t.add_argument("--plot-dir")

    v = add("verify", cmd_verify, "check every certificate recorded in a report")
    v.add_argument("--report", required=True)
    return p


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    rec = _Run(args)
    code, status, err = 1, "error", None
    try:
        _threads()
        code = args.func(args, rec)
        status = "ok" if code == 0 else "certified-failure"
    except CertifiedFailure as exc:
        code, status, err = 2, "certified-failure", f"{type(exc).__name__}: {exc.clause}: {exc}"
        print(f"certified failure ({type(exc).__name__}): {exc}\n  violated clause: {exc.clause}", file=sys.stderr)
    except (BilipError, OSError, KeyError, ValueError) as exc:
        code, status, err = 1, "error", f"{type(exc).__name__}: {exc}"
        print(f"error: {exc}", file=sys.stderr)
    try:
        _write_json(rec.manifest_path(), rec.manifest(status, code, err))
    except OSError as exc:
        print(f"warning: manifest not written: {exc}", file=sys.stderr)
    return code


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
