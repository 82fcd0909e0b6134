from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from bilipext.corpora import random_walks, wiggly_curves
from bilipext.errors import DegenerateCurve, InputError
from bilipext.metric_core import Curve, bilip_report, hausdorff_distance
from bilipext.space_gallery import grid_id, grid_space
from bilipext.straighten import StraightenConfig, concat_to_point, straighten, straighten_trace


@pytest.fixture(scope="module")
def cube():
    return grid_space(3, 8)


def _line(space, side, n):
    return Curve.from_ids(space, [grid_id(side, (k, 0, 0)) for k in range(n)])


def test_straight_row_is_fixed(cube):
    c = _line(cube, 8, 8)
    assert straighten(cube, c).points == c.points


def test_backtrack_is_removed(cube):
    ids = [grid_id(8, p) for p in [(0, 0, 0), (1, 0, 0), (2, 0, 0), (2, 1, 0), (2, 0, 0), (3, 0, 0),
                                   (4, 0, 0), (5, 0, 0), (6, 0, 0), (7, 0, 0)]]
    out = straighten(cube, Curve.from_ids(cube, ids), StraightenConfig(eps=0.1))
    assert len(set(out.points)) == len(out.points)
    assert out.start == ids[0] and out.end == ids[-1]


def test_concat_cuts_at_first_nearest(cube):
    c = _line(cube, 8, 5)
    target = grid_id(8, (2, 3, 0))
    out = concat_to_point(cube, c, target)
    assert out.points[:3] == c.points[:3] and out.end == target
    assert out.length == pytest.approx(2 + 3)


def test_close_endpoints_shortcut(cube):
    ids = [grid_id(8, p) for p in [(0, 0, 0), (0, 1, 0), (0, 2, 0), (0, 3, 0), (1, 3, 0), (1, 2, 0), (1, 1, 0),
                                   (1, 0, 0)]]
    tr = straighten_trace(cube, Curve.from_ids(cube, ids), StraightenConfig(eps=0.3))
    assert tr.shortcut and tr.curve.points == (ids[0], ids[-1])


def test_degenerate_inputs(cube):
    v = grid_id(8, (1, 1, 1))
    with pytest.raises(DegenerateCurve):
        straighten(cube, Curve.from_ids(cube, [v]))
    loop = [v, grid_id(8, (1, 1, 2)), grid_id(8, (1, 2, 2)), grid_id(8, (1, 2, 1)), v]
    with pytest.raises(DegenerateCurve):
        straighten(cube, Curve.from_ids(cube, loop))
    with pytest.raises(InputError):
        StraightenConfig(eps=1.0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.1, 0.2, 0.3]))
def test_straightening_properties(seed, eps):
    space, curves = wiggly_curves(count=1, seed=seed)
    sigma = curves[0]
    tr = straighten_trace(space, sigma, StraightenConfig(eps=eps))
    out = tr.curve
    assert out.start == sigma.start and out.end == sigma.end
    assert len(set(out.points)) == len(out.points)
    if not tr.shortcut:
        assert hausdorff_distance(space, out.points, sigma.points) <= eps * tr.diameter + space.resolution
        assert bilip_report(space, out, out.length).L_measured <= 2 ** (tr.chain_length - 1) * (1 + 1e-9)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.1, 0.2, 0.3]))
def test_output_stays_near_arbitrary_walks(seed, eps):
    # long excursions may be cut off, so only the output-to-input side holds
    space, curves = random_walks(count=1, seed=seed)
    sigma = curves[0]
    try:
        tr = straighten_trace(space, sigma, StraightenConfig(eps=eps))
    except DegenerateCurve:
        return
    dsig = space.dist_to_set(space.indices(sigma.points))
    assert dsig[space.indices(tr.curve.points)].max() <= eps * tr.diameter + space.resolution
    assert len(set(tr.curve.points)) == len(tr.curve.points)
