from __future__ import annotations

import hashlib
import json
import subprocess
import sys

import pytest

from bilipext.cli import emit_plot_data, run
from bilipext.corpora import extension_corpus, plane_pair_problem
from bilipext.metric_core import load_space, read_curve_csv
from bilipext.space_gallery import grid_id


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _problem_file(path, A, f):
    path.write_text(json.dumps({"A": A, "f": {repr(a): v for a, v in f.items()}}))
    return str(path)


@pytest.fixture(scope="module")
def g9(tmp_path_factory):
    d = tmp_path_factory.mktemp("g9")
    assert run(["gen-space", "--kind", "grid", "--dim", "3", "--side", "9", "--out", str(d / "g9.json")]) == 0
    return d / "g9.json"


def test_gen_space_writes_manifest(tmp_path):
    out = tmp_path / "s.json"
    assert run(["gen-space", "--kind", "grid", "--dim", "2", "--side", "4", "--out", str(out),
                "--report", str(tmp_path / "r.json")]) == 0
    assert load_space(out).n == 16
    man = json.loads((tmp_path / "gen-space.manifest.json").read_text())
    assert man["schema"] == 1 and man["exit_code"] == 0 and str(out) in man["outputs"]
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["vertices"] == 16


def test_usage_error_exits_1(tmp_path, capsys):
    assert run(["extend", "--space", "x.json"]) == 1
    assert "--problem" in capsys.readouterr().err
    assert run(["no-such-command"]) == 1


def test_missing_input_exits_1(tmp_path):
    code = run(["extend", "--space", str(tmp_path / "nope.json"), "--problem", str(tmp_path / "p.json"),
                "--out", str(tmp_path / "F.json")])
    assert code == 1
    man = json.loads((tmp_path / "extend.manifest.json").read_text())
    assert man["status"] == "error"


def test_bad_thread_count_exits_1(tmp_path, g9, monkeypatch):
    monkeypatch.setenv("BILIP_THREADS", "zero")
    assert run(["gen-space", "--kind", "grid", "--dim", "2", "--side", "3", "--out", str(tmp_path / "s.json")]) == 1


def test_plane_pair_exits_2(tmp_path, capsys):
    sp = tmp_path / "pp.json"
    assert run(["gen-space", "--kind", "plane-pair", "--dim", "2", "--side", "11", "--hole-radius", "2",
                "--out", str(sp)]) == 0
    _, A, f = plane_pair_problem()
    prob = _problem_file(tmp_path / "p.json", A, f)
    code = run(["extend", "--space", str(sp), "--problem", prob, "--rmin", "3", "--out", str(tmp_path / "F.json")])
    assert code == 2
    assert "violated clause" in capsys.readouterr().err
    assert not (tmp_path / "F.json").exists()


def test_extend_verify_and_plots(tmp_path, g9):
    _, probs = extension_corpus()
    kind, A, f = probs[8]
    prob = _problem_file(tmp_path / "p.json", A, f)
    args = ["extend", "--space", str(g9), "--problem", prob, "--rmin", "3", "--out", str(tmp_path / "F.json"),
            "--report", str(tmp_path / "rep.json"), "--plot-dir", str(tmp_path / "plots")]
    assert run(args) == 0
    assert run(["verify", "--report", str(tmp_path / "rep.json")]) == 0
    script = (tmp_path / "plots" / "plot.py").read_text()
    assert "curve_plot.csv" in script and "ratios_hist.csv" in script
    assert (tmp_path / "plots" / "curve_plot.csv").read_text().startswith("t,vertex_id,x0,x1,x2")


def test_verify_flags_a_failed_certificate(tmp_path):
    rep = tmp_path / "rep.json"
    rep.write_text(json.dumps({"schema": 1, "certificates": [{"ok": True}, {"ok": False}]}))
    assert run(["verify", "--report", str(rep)]) == 2
    rep.write_text(json.dumps({"schema": 1}))
    assert run(["verify", "--report", str(rep)]) == 1


def test_outputs_are_deterministic(tmp_path, g9):
    _, probs = extension_corpus()
    kind, A, f = probs[5]
    prob = _problem_file(tmp_path / "p.json", A, f)
    hashes = []
    for k in range(2):
        out = tmp_path / f"F{k}.json"
        assert run(["extend", "--space", str(g9), "--problem", prob, "--rmin", "3", "--out", str(out),
                    "--report", str(tmp_path / f"rep{k}.json")]) == 0
        hashes.append((_sha(out), _sha(tmp_path / f"rep{k}.json")))
    assert hashes[0] == hashes[1]


def test_trace_connect_straighten(tmp_path, g9):
    K = sorted({grid_id(9, p) for t in range(1, 8) for p in ((t, 1, 4), (t, 7, 4), (1, t, 4), (7, t, 4))})
    kf = tmp_path / "K.json"
    kf.write_text(json.dumps({"K": K}))
    x, y = grid_id(9, (1, 1, 4)), grid_id(9, (7, 7, 4))
    curve = tmp_path / "c.csv"
    assert run(["trace", "--space", str(g9), "--K", str(kf), "--eps", "0.3", "--x", str(x), "--y", str(y),
                "--out", str(curve), "--plan", str(tmp_path / "plan.json")]) == 0
    space = load_space(g9)
    c = read_curve_csv(space, curve)
    assert c.start == x and c.end == y
    assert json.loads((tmp_path / "plan.json").read_text())["schema"] == 1
    obst = tmp_path / "Y.json"
    obst.write_text(json.dumps({"Y": [grid_id(9, (4, 4, 4))]}))
    a, b = grid_id(9, (0, 4, 4)), grid_id(9, (8, 4, 4))
    assert run(["connect", "--space", str(g9), "--x", str(a), "--y", str(b), "--obstacles", str(obst),
                "--out", str(tmp_path / "p.csv")]) == 0
    assert run(["straighten", "--space", str(g9), "--curve", str(curve), "--eps", "0.2",
                "--out", str(tmp_path / "s.csv"), "--report", str(tmp_path / "s.json")]) == 0


def test_whitney_and_modulus_commands(tmp_path):
    af = tmp_path / "A.json"
    af.write_text(json.dumps({"A": [0, 1, 5, 13]}))
    assert run(["whitney", "--A", str(af), "--rmin", "0.01", "--out", str(tmp_path / "w.json")]) == 0
    assert json.loads((tmp_path / "w.json").read_text())["schema"] == 1
    from bilipext.metric_core import save_space
    from bilipext.modulus import family_between, theta_space

    space, a, b = theta_space(2, 4)
    save_space(space, tmp_path / "t.json")
    (tmp_path / "fam.json").write_text(json.dumps(family_between(space, [a], [b]).to_json()))
    assert run(["modulus", "--space", str(tmp_path / "t.json"), "--family", str(tmp_path / "fam.json"),
                "--p", "2", "--out", str(tmp_path / "m.json")]) == 0
    assert json.loads((tmp_path / "m.json").read_text())["value"] == pytest.approx(0.5, rel=1e-3)


def test_plot_data_without_coordinates(tmp_path):
    written = emit_plot_data(tmp_path, None, [3, 4, 5], [0.0, 0.5, 1.0], [1.0, 1.2, 0.9])
    lines = (tmp_path / "curve_plot.csv").read_text().splitlines()
    assert lines[0] == "t,vertex_id" and len(lines) == 4
    assert len(written) == 3


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "bilipext", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip()
