from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from bilipext.continuum import (
    continuum_trace,
    edge_multiplicity,
    euler_tour_2to1,
    minimum_spanning_tree,
    trace_with_report,
)
from bilipext.errors import DisconnectedK, EndpointsTooClose, EqualEndpoints, InputError, NotATree
from bilipext.space_gallery import grid_id, grid_space

from oracles import tour_walks_brute, unlabeled_trees


def _valid_tour(edges, tour, a, b):
    nodes = {u for e in edges for u in e}
    tree = {frozenset(e) for e in edges}
    return (
        tour[0] == a
        and tour[-1] == b
        and set(tour) == nodes
        and all(frozenset(s) in tree for s in zip(tour, tour[1:]))
        and max(edge_multiplicity(tour).values()) <= 2
    )


def test_path_tree_is_walked_once():
    edges = [(0, 1), (1, 2), (2, 3)]
    assert euler_tour_2to1(edges, 0, 3) == [0, 1, 2, 3]


def test_star_tour_matches_frozen_order():
    # centre 0, leaves 1..3, from leaf 1 to leaf 3
    assert euler_tour_2to1([(0, 1), (0, 2), (0, 3)], 1, 3) == [1, 0, 2, 0, 3]


@pytest.mark.parametrize("n", range(2, 7))
def test_tours_agree_with_brute_force(n):
    for edges in unlabeled_trees(n):
        nodes = sorted({u for e in edges for u in e})
        for a in nodes:
            for b in nodes:
                if a == b:
                    continue
                tour = euler_tour_2to1(edges, a, b)
                assert tuple(tour) in set(tour_walks_brute(edges, a, b))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 10_000), min_size=1, max_size=30), st.data())
def test_random_trees_give_valid_tours(parents, data):
    # vertex k + 1 hangs off a vertex among 0..k
    edges = [(p % (k + 1), k + 1) for k, p in enumerate(parents)]
    n = len(edges) + 1
    a = data.draw(st.integers(0, n - 1))
    b = data.draw(st.integers(0, n - 1).filter(lambda v: v != a))
    assert _valid_tour(edges, euler_tour_2to1(edges, a, b), a, b)


def test_tour_input_errors():
    with pytest.raises(EqualEndpoints):
        euler_tour_2to1([(0, 1)], 0, 0)
    with pytest.raises(NotATree):
        euler_tour_2to1([(0, 1), (1, 2), (2, 0)], 0, 2)
    with pytest.raises(NotATree):
        euler_tour_2to1([(0, 1), (2, 3)], 0, 3)
    with pytest.raises(NotATree):
        euler_tour_2to1([(0, 1)], 0, 5)


def test_mst_breaks_ties_by_index():
    # unit square with both diagonals: the three sides from the lowest indices win
    w = [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 0, 1.0), (0, 2, 1.5), (1, 3, 1.5)]
    assert minimum_spanning_tree(4, w) == [(0, 1), (0, 3), (1, 2)]


def _ring(side, lo, hi, z):
    pts = set()
    for t in range(lo, hi + 1):
        for p in ((t, lo, z), (t, hi, z), (lo, t, z), (hi, t, z)):
            pts.add(grid_id(side, p))
    return sorted(pts)


def test_trace_square_ring(grid9):
    K = _ring(9, 1, 7, 4)
    x, y = grid_id(9, (1, 1, 4)), grid_id(9, (7, 7, 4))
    res = trace_with_report(grid9, K, 0.3, x, y)
    assert res.curve.start == x and res.curve.end == y
    assert res.hausdorff <= 0.3 * res.diameter + 2 * grid9.resolution
    assert max(res.plan.multiplicity.values()) <= 2
    assert res.extension.certificates.failures() == []


def test_trace_is_deterministic(grid9):
    K = _ring(9, 1, 7, 4)
    x, y = grid_id(9, (1, 1, 4)), grid_id(9, (7, 7, 4))
    a, pa = continuum_trace(grid9, K, 0.3, x, y)
    b, pb = continuum_trace(grid9, K, 0.3, x, y)
    assert a.points == b.points and pa.to_json() == pb.to_json()


def test_trace_input_errors(grid9):
    K = _ring(9, 1, 7, 4)
    x, y = grid_id(9, (1, 1, 4)), grid_id(9, (7, 7, 4))
    with pytest.raises(InputError):
        trace_with_report(grid9, K, 1.5, x, y)
    with pytest.raises(InputError):
        trace_with_report(grid9, K, 0.3, x, grid_id(9, (4, 4, 4)))
    with pytest.raises(EndpointsTooClose):
        trace_with_report(grid9, K, 0.3, x, grid_id(9, (2, 1, 4)))
    split = [grid_id(9, (0, 0, 0)), grid_id(9, (8, 8, 8))]
    with pytest.raises(DisconnectedK):
        trace_with_report(grid9, split, 0.3, *split)
