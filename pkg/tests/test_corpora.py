from __future__ import annotations

from bilipext.corpora import extension_corpus, plane_pair_problem, random_finite_sets, random_walks, wiggly_curves


def test_finite_sets_shape():
    sets = random_finite_sets(count=30, seed=1)
    assert all(2 <= len(A) <= 50 and A == sorted(A) and 0 <= A[0] and A[-1] <= 100 for A in sets)
    assert random_finite_sets(count=30, seed=1) == sets


def test_wiggly_curves_join_far_endpoints():
    space, curves = wiggly_curves(count=10, seed=2)
    for c in curves:
        a, b = space.idx(c.start), space.idx(c.end)
        assert space.dist_row(a)[b] >= 6


def test_random_walks_are_open():
    _, curves = random_walks(count=5, seed=3)
    assert all(c.start != c.end for c in curves)


def test_extension_corpus_kinds():
    space, probs = extension_corpus()
    assert len(probs) == 20
    assert {k for k, _, _ in probs} == {"row", "ell", "geometric"}
    for _, A, f in probs:
        assert 3 <= len(A) <= 8 and set(f) == set(A) and len(set(f.values())) == len(A)
    # distinct problems, not repeats of one set
    assert len({(tuple(A), tuple(f.values())) for _, A, f in probs}) == 20


def test_plane_pair_sheets():
    space, A, f = plane_pair_problem()
    assert -0.5 in f and 0.5 in f and f[-0.5] != f[0.5]
    assert space.dist_row(space.idx(f[-0.5]))[space.idx(f[0.5])] > 0
