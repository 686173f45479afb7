import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial import Voronoi

from gibbsdc.functionals import (InfiniteScoreError, ScoreSpec, add_one_cost, knn_large_edge, knn_score, knn_scores,
                                 knn_stabilization_radius, mst_edges, mst_total_length, persistence_diagram,
                                 persistent_betti, score_sum, voronoi_cell, voronoi_score, window_functional,
                                 whole_functional)
from gibbsdc.geometry import Box
from oracles import ExhaustiveMST, betti1_rank_oracle, brute_knn_scores, components_oracle

seeds = st.integers(0, 2**32)


def pts_from(seed, n, side=1.0, d=2):
    return np.random.default_rng(seed).uniform(0, side, size=(n, d))


# --- kNN -------------------------------------------------------------------


def test_knn_collinear_and_too_few():
    line = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    assert knn_score(line, line[1], 1) == pytest.approx(1.0)
    assert knn_score(line[:2], line[0], 2) == math.inf
    assert math.isinf(knn_score(line[:1], line[0], 1))


@given(seed=seeds, n=st.integers(2, 60), k=st.integers(1, 6))
def test_knn_matches_brute_force(seed, n, k):
    p = pts_from(seed, n)
    got, want = knn_scores(p, k), brute_knn_scores(p, k)
    assert np.allclose(got, want, atol=1e-12, rtol=0) or (np.isinf(got).all() and np.isinf(want).all())


def test_knn_sum_is_total_edge_length():
    p = pts_from(4, 50)
    s = knn_scores(p, 4).sum()
    assert s == pytest.approx(brute_knn_scores(p, 4).sum(), abs=1e-12)


def test_knn_large_edge_cases():
    two = np.array([[0.0, 0.0], [2.0, 0.0]])
    assert knn_large_edge(two, two[0], 1, 1.0) == 1 and knn_large_edge(two, two[1], 1, 1.0) == 1
    dense = np.c_[np.arange(20) * 0.1, np.zeros(20)]
    assert knn_large_edge(dense, dense[5], 1, 1.0) == 0
    assert knn_large_edge(two, two[0], 3, 1.0) == 1


@given(seed=seeds, k=st.integers(1, 5), a=st.floats(0.05, 0.6))
def test_knn_large_edge_sort_oracle_and_monotone(seed, k, a):
    p = pts_from(seed, 25)
    x = p[0]
    d = np.sort(np.linalg.norm(p[1:] - x, axis=1))
    assert knn_large_edge(p, x, k, a) == int(d[k - 1] >= a)
    y = pts_from(seed + 1, 1)
    assert knn_large_edge(np.vstack([p, y]), x, k, a) <= knn_large_edge(p, x, k, a)


@given(seed=seeds, k=st.integers(1, 5))
@settings(max_examples=30)
def test_knn_stabilization_radius(seed, k):
    """g(x, phi) = g(x, phi ∩ B_R(x)) and points beyond R never matter."""
    p = pts_from(seed, 150, side=4.0)
    for i in range(0, 150, 15):
        x = p[i]
        R = knn_stabilization_radius(p, x, k)
        if not math.isfinite(R):
            continue
        inside = p[np.linalg.norm(p - x, axis=1) <= R]
        assert knn_score(inside, x, k) == pytest.approx(knn_score(p, x, k), abs=1e-12)
        far = x + (R + 0.5) * np.array([[1.0, 0.0], [0.0, 1.0], [-0.7, -0.7]])
        assert knn_score(np.vstack([inside, far]), x, k) == pytest.approx(knn_score(inside, x, k), abs=1e-12)


def test_full_vs_restricted_only_differ_near_boundary():
    p = np.random.default_rng(8).uniform(-6, 6, size=(200, 2))
    Q = Box.cube(8)
    full = knn_scores(p, 4)
    inside = np.flatnonzero(Q.contains(p))
    restricted = knn_scores(p[inside], 4)
    for j, i in enumerate(inside):
        R = knn_stabilization_radius(p, p[i], 4)
        ball_in_Q = np.all(p[i] - R >= Q.lo) and np.all(p[i] + R <= Q.hi)
        if ball_in_Q:
            assert restricted[j] == pytest.approx(full[i], abs=1e-12)
    spec = ScoreSpec("knn_length", k=4)
    assert score_sum(p, spec, Q, "full") == pytest.approx(full[inside].sum())
    assert score_sum(p, spec, Q, "restricted") == pytest.approx(restricted.sum())


# --- Voronoi ---------------------------------------------------------------


def test_voronoi_square():
    p = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    assert voronoi_score(p, p[0]) == pytest.approx(2.0, abs=1e-9)
    assert voronoi_score(p[:2], p[0]) == math.inf
    assert voronoi_score(p, p[1]) == math.inf


def _shared_edge(cell, x, y):
    """Length of the part of the cell boundary lying on the bisector of x and y."""
    if cell is None:
        return None
    n = y - x
    m = (x + y) / 2
    on = np.abs((cell - m) @ n) <= 1e-9 * max(1.0, np.linalg.norm(n))
    total = 0.0
    for i in range(len(cell)):
        j = (i + 1) % len(cell)
        if on[i] and on[j]:
            total += np.linalg.norm(cell[j] - cell[i])
    return total


def test_voronoi_dual_edge_consistency():
    p = np.random.default_rng(21).uniform(0, 1, size=(100, 2))
    cells = [voronoi_cell(p, x) for x in p]
    checked = 0
    for i in range(100):
        for j in range(i + 1, 100):
            if cells[i] is None or cells[j] is None:
                continue
            a, b = _shared_edge(cells[i], p[i], p[j]), _shared_edge(cells[j], p[j], p[i])
            assert a == pytest.approx(b, abs=1e-9)
            checked += a > 0
    assert checked > 100


def test_voronoi_matches_qhull():
    p = np.random.default_rng(5).uniform(0, 1, size=(60, 2))
    vor = Voronoi(p)
    for i in range(60):
        reg = vor.regions[vor.point_region[i]]
        ours = voronoi_score(p, p[i])
        if -1 in reg or not reg:
            assert ours == math.inf
            continue
        v = vor.vertices[reg]
        c = v.mean(axis=0)
        v = v[np.argsort(np.arctan2(v[:, 1] - c[1], v[:, 0] - c[0]))]
        per = np.linalg.norm(v - np.roll(v, -1, axis=0), axis=1).sum()
        assert ours == pytest.approx(per / 2, rel=1e-9)


@given(seed=seeds)
def test_voronoi_monotone_under_insertion(seed):
    p = pts_from(seed, 30)
    y = pts_from(seed + 7, 1)
    for x in p[:5]:
        before = voronoi_score(p, x)
        assert voronoi_score(np.vstack([p, y]), x) <= before * (1 + 1e-9)


# --- MST -------------------------------------------------------------------


def test_mst_trivial():
    assert mst_total_length(np.zeros((1, 2))) == 0.0
    assert mst_total_length(np.array([[0.0, 0.0], [3.0, 4.0]])) == pytest.approx(5.0)
    line = np.c_[np.arange(9) * 0.25, np.zeros(9)]
    assert mst_total_length(line) == pytest.approx(8 * 0.25)


def test_mst_exhaustive_oracle():
    oracle = ExhaustiveMST(7)
    g = np.random.default_rng(99)
    for _ in range(30):
        p = g.uniform(0, 1, size=(7, 2))
        assert mst_total_length(p) == pytest.approx(oracle(p), abs=1e-12)


def test_mst_delaunay_path_matches_dense_graph_oracle():
    from scipy.sparse.csgraph import minimum_spanning_tree
    from scipy.spatial.distance import cdist
    p = np.random.default_rng(2).uniform(0, 50, size=(2100, 2))
    oracle = minimum_spanning_tree(cdist(p, p)).sum()
    assert mst_total_length(p) == pytest.approx(oracle, rel=1e-12)


@given(seed=seeds, n=st.integers(2, 80))
def test_mst_degree_bound_in_the_plane(seed, n):
    e = mst_edges(pts_from(seed, n))
    deg = np.bincount(e.ravel(), minlength=n)
    assert deg.max() <= 6


@given(seed=seeds)
@settings(max_examples=25)
def test_mst_removal_bound(seed):
    """Removing the points of a cube Q_{z,m} changes the MST length by a bounded amount."""
    p = pts_from(seed, 80, side=5.0)
    z, m = np.array([2.5, 2.5]), 1.0
    box = Box(z - m / 2, z + m / 2)
    inside = box.contains(p)
    if inside.all():
        return
    e = mst_edges(p)
    L = np.linalg.norm(p[e[:, 0]] - p[e[:, 1]], axis=1).max()
    k = int(inside.sum())
    diff = abs(mst_total_length(p) - mst_total_length(p[~inside]))
    assert diff <= 6 * k * (2 * L + math.sqrt(2) * m) + math.sqrt(2) * m * k + 1e-9


# --- persistent Betti numbers ---------------------------------------------


def test_betti_trivial():
    one = np.zeros((1, 2))
    assert persistent_betti(one, 0, 0.1, 0.5) == 1 and persistent_betti(one, 1, 0.1, 0.5) == 0
    two = np.array([[0.0, 0.0], [1.0, 0.0]])
    assert persistent_betti(two, 0, 0.2, 0.5) == 1
    assert persistent_betti(two, 0, 0.2, 0.49) == 2
    with pytest.raises(ValueError):
        persistent_betti(two, 0, 0.5, 0.2)
    with pytest.raises(ValueError):
        persistent_betti(np.zeros((3, 3)) + np.arange(3)[:, None], 1, 0.1, 0.2)


@given(seed=seeds, n=st.integers(1, 40), s=st.floats(0.01, 0.4))
def test_betti0_components_and_r_independent(seed, n, s):
    p = pts_from(seed, n)
    want = components_oracle(p, s)
    assert [persistent_betti(p, 0, r, s) for r in (0.0, s / 2, s)] == [want] * 3


def test_equilateral_triangle_persistence():
    ell = 1.0
    tri = np.array([[0.0, 0.0], [ell, 0.0], [ell / 2, ell * math.sqrt(3) / 2]])
    dgm = persistence_diagram(tri, 1.0)
    ones = [(b, d) for q, b, d in dgm.pairs if q == 1]
    assert len(ones) == 1
    assert ones[0][0] == pytest.approx(ell / 2) and ones[0][1] == pytest.approx(ell / math.sqrt(3))
    for r, s in [(0.5, 0.55), (0.5, 0.6), (0.4, 0.55), (0.55, 0.57)]:
        assert persistent_betti(tri, 1, r, s) == betti1_rank_oracle(tri, r, s)
    assert persistent_betti(tri, 1, 0.5, 0.55) == 1


@given(seed=seeds, n=st.integers(3, 9), r=st.floats(0.05, 0.5), ds=st.floats(0.0, 0.4))
@settings(max_examples=60)
def test_betti1_matches_rank_oracle(seed, n, r, ds):
    p = pts_from(seed, n)
    s = r + ds
    assert persistent_betti(p, 1, r, s) == betti1_rank_oracle(p, r, s)


def test_dimension0_essential_count():
    p = pts_from(3, 30)
    dgm = persistence_diagram(p, 0.1)
    ess = [1 for q, b, d in dgm.pairs if q == 0 and d == math.inf]
    assert len(ess) == components_oracle(p, 0.1)


@given(seed=seeds, q=st.sampled_from([0, 1]))
@settings(max_examples=30)
def test_betti_add_one_bound(seed, q):
    p = pts_from(seed, 25)
    y = pts_from(seed + 3, 1)[0]
    r, s = 0.05, 0.12
    spec = ScoreSpec("betti", q=q, r=r, s=s)
    D = add_one_cost(spec, p, y)
    local = int((np.linalg.norm(p - y, axis=1) <= 2 * s).sum())
    assert abs(D) <= 2 * (local + 1) ** (q + 2)


# --- sums, translation invariance, add-one costs ------------------------------


def test_score_sum_empty_and_whole_pattern():
    spec = ScoreSpec("knn_length", k=2)
    assert score_sum(np.zeros((0, 2)), spec, Box.cube(1)) == 0.0
    p = pts_from(1, 30, side=2.0) - 1
    Q = Box.cube(1.2)
    assert window_functional(p, ScoreSpec("mst_total"), Q) == pytest.approx(mst_total_length(p[Q.contains(p)]))


def test_score_sum_raises_on_infinite_scores():
    p = np.array([[0.0, 0.0], [0.3, 0.0], [0.0, 0.4]])
    with pytest.raises(InfiniteScoreError) as info:
        score_sum(p, ScoreSpec("voronoi_perimeter"), Box.cube(2))
    assert info.value.point.shape == (2,)
    with pytest.raises(InfiniteScoreError):
        score_sum(p, ScoreSpec("knn_length", k=5), Box.cube(2))


@pytest.mark.parametrize("spec", [ScoreSpec("knn_length", k=3), ScoreSpec("knn_large_edge", k=2, a=0.2),
                                  ScoreSpec("mst_total"), ScoreSpec("betti", q=1, r=0.1, s=0.15),
                                  ScoreSpec("betti", q=0, r=0.1, s=0.15)], ids=lambda s: s.kind)
@given(seed=seeds, v=st.tuples(st.floats(-100, 100), st.floats(-100, 100)))
@settings(max_examples=20)
def test_translation_invariance(spec, seed, v):
    p = pts_from(seed, 30)
    v = np.array(v)
    assert whole_functional(p + v, spec) == pytest.approx(whole_functional(p, spec), abs=1e-9)


@given(seed=seeds, v=st.tuples(st.floats(-100, 100), st.floats(-100, 100)))
@settings(max_examples=20)
def test_voronoi_translation_invariance(seed, v):
    p = pts_from(seed, 40)
    v = np.array(v)
    for x in p[:5]:
        a, b = voronoi_score(p, x), voronoi_score(p + v, x + v)
        assert (math.isinf(a) and math.isinf(b)) or a == pytest.approx(b, rel=1e-9)


def test_add_one_cost_examples():
    p = pts_from(2, 10)
    assert add_one_cost(ScoreSpec("count"), p, [5.0, 5.0]) == 1.0
    two = np.array([[0.0, 0.0], [1.0, 0.0]])
    assert add_one_cost(ScoreSpec("betti", q=0, r=0.1, s=0.3), two, [0.5, 0.0]) == -1.0
    far = np.array([10.0, 0.0])
    t = np.linalg.norm(p - far, axis=1).min()
    assert add_one_cost(ScoreSpec("mst_total"), p, far) <= t + 1e-12
    with pytest.raises(ValueError):
        add_one_cost(ScoreSpec("count"), p, p[0])


def test_scorespec_parse():
    assert ScoreSpec.parse("knn-length:k=4") == ScoreSpec("knn_length", k=4)
    assert ScoreSpec.parse("knn-large:k=4,a=1.0") == ScoreSpec("knn_large_edge", k=4, a=1.0)
    assert ScoreSpec.parse("betti:q=1,r=0.5,s=0.8") == ScoreSpec("betti", q=1, r=0.5, s=0.8)
    assert ScoreSpec.parse("voronoi").kind == "voronoi_perimeter"
    assert ScoreSpec.parse("mst").kind == "mst_total"
    for bad in ("knn-length:k=0", "betti:q=2,r=0,s=1", "betti:q=1,r=2,s=1", "foo", "knn-length:z=1"):
        with pytest.raises(ValueError):
            ScoreSpec.parse(bad)
