from __future__ import annotations

import json

import numpy as np
import pytest

from bilipext.corpora import extension_corpus, plane_pair_problem
from bilipext.errors import CertifiedFailure, DegenerateA, InputError, NoClearancePath, ThresholdNotCrossed
from bilipext.extension import (
    CASES,
    ExtensionConfig,
    ExtensionProblem,
    Segment,
    _glue_scan,
    extend,
    map_distortion,
    reference_points,
)
from bilipext.space_gallery import grid_id, grid_space


@pytest.fixture(scope="module")
def corpus():
    return extension_corpus()


def _row_problem(space, n=9, step=1, cfg=None):
    A = [float(k) for k in range(0, n, step)]
    f = {a: grid_id(9, (int(a), 4, 4)) for a in A}
    return ExtensionProblem(space, A, f, cfg or ExtensionConfig(r_min=3.0))


def test_full_row_is_returned_unchanged(grid9):
    res = extend(_row_problem(grid9))
    assert res.F.vertices == tuple(grid_id(9, (k, 4, 4)) for k in range(9))
    assert res.L_prime == pytest.approx(1.0)


def test_interpolation_and_certificates(grid9, corpus):
    space, probs = corpus
    kind, A, f = probs[8]
    res = extend(ExtensionProblem(space, A, f, ExtensionConfig(r_min=3.0)))
    assert all(res.F(a) == f[a] for a in A)
    assert len(set(res.F.vertices)) == len(res.F.vertices)
    assert res.certificates.failures() == []
    assert res.L_prime <= 10 * res.L_f
    assert set(res.case_counts) <= set(CASES)


def test_extension_is_deterministic(corpus):
    space, probs = corpus
    kind, A, f = probs[5]
    cfg = ExtensionConfig(r_min=3.0)
    a = extend(ExtensionProblem(space, A, f, cfg)).to_json()
    b = extend(ExtensionProblem(space, A, f, cfg)).to_json()
    assert json.dumps(a, sort_keys=True, default=float) == json.dumps(b, sort_keys=True, default=float)


def test_reference_points_are_off_the_image(corpus):
    space, probs = corpus
    kind, A, f = probs[8]
    prob = ExtensionProblem(space, A, f, ExtensionConfig(r_min=3.0))
    pi = reference_points(prob)
    assert pi and not set(pi.values()) & set(f.values())


def test_distortion_uses_breakpoint_order(grid9):
    # a reversed row has the same vertex set but the pairing must follow params
    A = [0.0, 8.0]
    f = {0.0: grid_id(9, (8, 4, 4)), 8.0: grid_id(9, (0, 4, 4))}
    prob = ExtensionProblem(grid9, A, f, ExtensionConfig(r_min=3.0))
    assert prob.L_measured == pytest.approx(1.0)
    res = extend(prob)
    rep, i, j = map_distortion(grid9, res.F, 3.0)
    assert rep.L_measured == pytest.approx(res.L_prime)
    assert res.F(0.0) == f[0.0] and res.F(8.0) == f[8.0]


def test_problem_validation(grid9):
    v = grid_id(9, (0, 0, 0))
    with pytest.raises(DegenerateA):
        ExtensionProblem(grid9, [0.0], {0.0: v})
    with pytest.raises(InputError):
        ExtensionProblem(grid9, [0.0, 1.0], {0.0: v, 1.0: v})
    with pytest.raises(InputError):
        ExtensionProblem(grid9, [0.0, 1.0], {0.0: v})


def test_config_json():
    cfg = ExtensionConfig(r_min=2.0, xi=0.2)
    assert ExtensionConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(InputError):
        ExtensionConfig.from_json({"r_min": 1.0, "bogus": 1})
    with pytest.raises(InputError):
        ExtensionConfig(xi=0.2, eps_glue=0.3)
    with pytest.raises(InputError):
        ExtensionConfig(r_min=0.0)


def test_problem_json_roundtrip(grid9):
    prob = _row_problem(grid9, step=4)
    back = ExtensionProblem.from_json(grid9, json.loads(json.dumps(prob.to_json())))
    assert back.A == prob.A and back.f == prob.f and back.config == prob.config


def _seg(space, pts, params):
    return Segment(0, np.array([space.idx(grid_id(11, p)) for p in pts]), np.array(params, float), 1.0, 1.0)


def test_glue_scan_on_synthetic_layout():
    # left row y=2 for x=0..4, right row y=2 for x=6..10, gamma along y=4 from x=2..8
    space = grid_space(2, 11)
    gL = _seg(space, [(x, 2) for x in range(5)], range(5))
    gR = _seg(space, [(x, 2) for x in range(6, 11)], range(6, 11))
    gam = np.array([space.idx(grid_id(11, (x, 4))) for x in range(2, 9)])
    gpar = np.linspace(4.5, 5.5, len(gam))
    t1, t2, t3, t4, *_ = _glue_scan(space, gL, gR, gam, gpar, 0.0, 10.0, 2.0)
    # hand-derived: only x=2 and x=8 reach gamma within 2
    assert (t1, t4) == (2.0, 8.0)
    assert (t2, t3) == (gpar[0], gpar[-1])
    with pytest.raises(ThresholdNotCrossed):
        _glue_scan(space, gL, gR, gam, gpar, 0.0, 10.0, 1.0)


def test_plane_pair_has_certified_failure():
    space, A, f = plane_pair_problem()
    with pytest.raises(CertifiedFailure) as err:
        extend(ExtensionProblem(space, A, f, ExtensionConfig(r_min=3.0)))
    assert err.value.clause


def test_bridge_failure_is_reported():
    # f(0) and f(1) sit on either side of a wall made of the other images
    space = grid_space(2, 5)
    wall = [grid_id(5, (2, r)) for r in range(5)]
    A = [0.0, 1.0] + [10.0 + k for k in range(5)]
    f = {0.0: grid_id(5, (0, 0)), 1.0: grid_id(5, (4, 4))}
    f.update({10.0 + k: w for k, w in enumerate(wall)})
    with pytest.raises(NoClearancePath) as err:
        extend(ExtensionProblem(space, A, f, ExtensionConfig(r_min=40.0)))
    assert "bridge" in err.value.clause
