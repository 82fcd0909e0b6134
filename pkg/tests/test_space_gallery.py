from __future__ import annotations

import numpy as np
import pytest

from bilipext.errors import DisconnectedResult, NoFeasibleP, RangeTooNarrow, SizeOverflow
from bilipext.metric_core import distance
from bilipext.space_gallery import (
    assouad_estimate,
    check_porosity_witness,
    grid_id,
    grid_space,
    plane_pair_id,
    plane_pair_space,
    porosity_probe,
    regularity_fit,
)

from conftest import path_space
from oracles import lattice_ball_count


def test_small_grids():
    g = grid_space(1, 3, 1)
    assert g.n == 3 and sum(len(a) for a in g.adj) == 4
    sq = grid_space(2, 2, 0.5)
    assert sq.n == 4 and all(len(a) == 2 for a in sq.adj)
    assert np.all(sq.measure == 0.25)
    assert all(w == 0.5 for a in sq.adj for _, w in a)


def test_grid_distance_is_scaled_l1():
    g = grid_space(3, 5, 0.5)
    rng = np.random.default_rng(1)
    for a, b in rng.integers(0, g.n, (30, 2)):
        l1 = np.abs(np.array(np.unravel_index(a, (5,) * 3)) - np.array(np.unravel_index(b, (5,) * 3))).sum()
        assert distance(g, int(a), int(b)) == 0.5 * l1


def test_grid_size_cap():
    with pytest.raises(SizeOverflow):
        grid_space(3, 101)


def test_ball_volume_matches_lattice_count(grid9):
    c = grid_id(9, (4, 4, 4))
    row = grid9.dist_row(grid9.idx(c))
    for r in (1, 2, 3, 3.5):
        assert int((row < r).sum()) == lattice_ball_count(3, r)


def test_plane_pair_degrees():
    dim, side = 2, 7
    s = plane_pair_space(dim, side)
    c = side // 2
    for x in range(1, side - 1):
        v = plane_pair_id(dim, side, 0, (x, c))
        assert len(s.adj[s.idx(v)]) == 4 * dim - 2
    s3 = plane_pair_space(3, 5)
    v = plane_pair_id(3, 5, 0, (2, 2, 2))
    assert len(s3.adj[s3.idx(v)]) == 10


def test_plane_pair_hole_and_detour():
    side, c = 9, 4
    s = plane_pair_space(2, side, 1.0, hole_radius=2)
    for v, x in zip(s.ids, s.coords):
        assert np.linalg.norm(x) >= 2
    assert plane_pair_id(2, side, 0, (c, c)) not in s
    # mirror points across the hole on the shared line: coordinate distance 4
    u, w = plane_pair_id(2, side, 0, (c - 2, c)), plane_pair_id(2, side, 0, (c + 2, c))
    assert distance(s, u, w) > 4


def test_plane_pair_disconnected():
    with pytest.raises(DisconnectedResult):
        plane_pair_space(2, 5, 1.0, hole_radius=2.5)


def test_regularity_fits():
    fit = regularity_fit(grid_space(3, 8), r_min=2, r_max=4)
    assert 2.7 <= fit.Q_hat <= 3.3 and fit.C1_hat >= 1
    line = regularity_fit(path_space(200), r_min=2, r_max=8)
    assert abs(line.Q_hat - 1) <= 0.2
    with pytest.raises(RangeTooNarrow):
        regularity_fit(grid_space(3, 8), r_min=2, r_max=3)


def test_regularity_constant_covers_sample():
    g = grid_space(3, 8)
    fit = regularity_fit(g, r_min=2, r_max=4, seed=3)
    rng = np.random.default_rng(3)
    for i in sorted(rng.choice(g.n, size=32, replace=False)):
        row = g.dist_row(int(i))
        for r in (2, 3, 4):
            m = g.measure[row < r].sum()
            assert fit.C1_hat ** -1 * r**fit.Q_hat <= m * (1 + 1e-9)
            assert m <= fit.C1_hat * r**fit.Q_hat * (1 + 1e-9)


def test_porosity_single_vertex(grid9):
    y = grid_id(9, (4, 4, 4))
    rep = porosity_probe(grid9, {y})
    assert rep.p0_hat <= 4
    for yy, r, x in rep.witnesses:
        assert check_porosity_witness(grid9, {y}, yy, r, x, rep.p0_hat)


def test_porosity_face_and_full(grid9):
    face = {grid_id(9, (0, j, k)) for j in range(9) for k in range(9)}
    rep = porosity_probe(grid9, face)
    assert rep.p0_hat <= 4
    assert all(check_porosity_witness(grid9, face, y, r, x, rep.p0_hat) for y, r, x in rep.witnesses)
    with pytest.raises(NoFeasibleP):
        porosity_probe(grid9, set(grid9.ids))


def test_assouad_line():
    g = grid_space(3, 8)
    line = {grid_id(8, (i, 4, 4)) for i in range(8)}
    est = assouad_estimate(g, line)
    assert 0.7 <= est.alpha_hat <= 1.3
    for (R, r), n in zip(est.scales, est.counts):
        assert n <= est.C2_hat * (R / r) ** est.alpha_hat * (1 + 1e-9)
