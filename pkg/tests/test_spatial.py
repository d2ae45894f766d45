import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcboundary.pointcloud import Ball, PointCloud, sample
from pcboundary.spatial import InsufficientPointsError, SpatialIndex, covering_sqrt, resolve_workers


def brute_range(points, x, r):
    sq = np.sum((points - x) ** 2, axis=1)
    return np.flatnonzero(sq <= r * r)


def test_single_point_cloud():
    idx = SpatialIndex(PointCloud([[0.3, 0.4]]))
    for r in (0.0, 0.1, 10.0):
        assert idx.range(idx.points[0], r).tolist() == [0]


def test_range_matches_scan_unit_square():
    rng = np.random.default_rng(0)
    pts = rng.random((100, 2))
    idx = SpatialIndex(pts)
    for _ in range(20):
        x, r = rng.random(2), rng.uniform(0, 0.5)
        assert np.array_equal(idx.range(x, r), brute_range(pts, x, r))


def test_grid_lattice_count():
    g = np.arange(10) * 0.1
    pts = np.array([(a, b) for a in g for b in g])
    idx = SpatialIndex(pts)
    centre = np.array([0.4, 0.4])
    # the diagonal neighbours sit at 0.1414 < 0.15, so the closed ball holds the 3x3 block
    assert len(idx.range(centre, 0.15)) == 9
    assert len(idx.range(centre, 0.12)) == 5


def test_query_far_outside_is_empty():
    rng = np.random.default_rng(1)
    pts = rng.random((50, 2))
    idx = SpatialIndex(pts)
    assert idx.range(np.array([1.0 + 2 * 0.2, 0.5]) + 0.2, 0.2).size == 0


def test_range_include_self_flag():
    pts = np.array([[0.0, 0.0], [0.0, 0.0], [0.5, 0.0]])
    idx = SpatialIndex(pts)
    assert idx.range_of(0, 1.0, include_self=False).tolist() == [1, 2]
    assert idx.range(pts[0], 1.0, include_self=False).tolist() == [2]


def test_kth_neighbor_colinear():
    idx = SpatialIndex(np.array([[0.0], [1.0], [3.0]]))
    assert idx.kth_neighbor_distance(0, 1) == 1.0
    assert idx.kth_neighbor_distance(0, 2) == 3.0
    assert np.allclose(idx.kth_neighbor_distances(1), [1.0, 1.0, 2.0])


def test_kth_neighbor_duplicates():
    idx = SpatialIndex(np.zeros((2, 2)))
    assert idx.kth_neighbor_distance(0, 1) == 0.0
    assert idx.kth_neighbor_distances(1).tolist() == [0.0, 0.0]


def test_kth_neighbor_too_large():
    idx = SpatialIndex(np.array([[0.0], [1.0], [3.0]]))
    with pytest.raises(InsufficientPointsError, match="insufficient points"):
        idx.kth_neighbor_distance(0, 3)
    with pytest.raises(InsufficientPointsError):
        idx.knn(np.zeros(1), 4)


def test_kth_neighbor_matches_sort():
    pts = sample(Ball(1.0), n=1000, seed=3).points
    idx = SpatialIndex(pts)
    all_k = idx.kth_neighbor_distances(10)
    rng = np.random.default_rng(2)
    for i in rng.choice(1000, 50, replace=False):
        d = np.sqrt(np.sum((pts - pts[i]) ** 2, axis=1))
        expected = np.sort(np.delete(d, i))[9]
        sq = np.sort(np.delete(np.sum((pts - pts[i]) ** 2, axis=1), i))[9]
        assert idx.kth_neighbor_distance(i, 10) == all_k[i]
        assert all_k[i] in (expected, np.nextafter(expected, np.inf))
        assert all_k[i] ** 2 >= sq
        assert len(brute_range(pts, pts[i], all_k[i])) >= 11


def test_knn_tie_break_by_index():
    pts = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, 0.0]])
    idx = SpatialIndex(pts)
    near, dist = idx.knn(np.zeros(2), 3, exclude=3)
    assert near.tolist() == [0, 1, 2]
    assert np.allclose(dist, 1.0)
    assert idx.nearest(np.array([[0.5, 0.5]])).tolist() == [0]


@pytest.mark.property
@pytest.mark.parametrize("n,dim", [(1, 2), (50, 1), (700, 2), (2000, 3)])
def test_range_and_knn_exactness(n, dim):
    rng = np.random.default_rng(n + dim)
    pts = rng.random((n, dim))
    # seed coincident points and exact-radius ties
    if n > 10:
        pts[5] = pts[3]
    idx = SpatialIndex(pts)
    for _ in range(100):
        x = rng.random(dim) if rng.random() < 0.5 else pts[rng.integers(n)]
        r = rng.uniform(0, 0.4)
        assert np.array_equal(idx.range(x, r), brute_range(pts, x, r))
        k = int(rng.integers(1, min(n, 8) + 1))
        near, d = idx.knn(x, k)
        sq = np.sum((pts - x) ** 2, axis=1)
        expected = np.lexsort((np.arange(n), sq))[:k]
        assert np.array_equal(near, expected)
        assert np.allclose(d, np.sqrt(sq[expected]))


def test_exact_boundary_membership():
    pts = np.array([[0.0, 0.0], [0.3, 0.4], [0.6, 0.8]])
    idx = SpatialIndex(pts)
    assert idx.range(pts[0], 0.5).tolist() == [0, 1]
    assert idx.range(pts[0], np.nextafter(0.5, 0)).tolist() == [0]


@pytest.mark.property
def test_monotone_in_radius():
    pts = sample(Ball(0.5), n=500, seed=4).points
    idx = SpatialIndex(pts)
    rng = np.random.default_rng(4)
    for _ in range(50):
        x = rng.uniform(-0.5, 0.5, 2)
        r1, r2 = np.sort(rng.uniform(0, 0.3, 2))
        assert set(idx.range(x, r1)) <= set(idx.range(x, r2))


@pytest.mark.property
def test_permutation_consistency():
    pts = sample(Ball(0.5), n=400, seed=6).points
    perm = np.random.default_rng(6).permutation(400)
    a, b = SpatialIndex(pts), SpatialIndex(PointCloud(pts).permuted(perm))
    for i in range(0, 400, 37):
        x = pts[i]
        assert np.array_equal(np.sort(perm[b.range(x, 0.1)]), a.range(x, 0.1))


@pytest.mark.parametrize("include_self", [True, False])
@pytest.mark.parametrize("chunk", [None, 7])
def test_neighborhoods_match_scan(include_self, chunk):
    pts = sample(Ball(0.5), n=600, seed=8).points.copy()
    pts[10] = pts[11]
    idx = SpatialIndex(pts)
    rows = np.arange(0, 600, 3)
    seen = []
    for blk in idx.neighborhoods(0.08, rows=rows, include_self=include_self, chunk=chunk):
        for k, i in enumerate(blk.rows):
            got = blk.indices[blk.indptr[k]:blk.indptr[k + 1]]
            exp = brute_range(pts, pts[i], 0.08)
            if not include_self:
                exp = exp[exp != i]
            assert np.array_equal(got, exp)
            sq = blk.sqdist[blk.indptr[k]:blk.indptr[k + 1]]
            assert np.array_equal(sq, np.sum((pts[got] - pts[i]) ** 2, axis=1))
            seen.append(i)
    assert seen == rows.tolist()


def test_neighborhoods_per_point_radius():
    pts = sample(Ball(0.5), n=300, seed=9).points
    idx = SpatialIndex(pts)
    radii = idx.kth_neighbor_distances(5)
    for blk in idx.neighborhoods(radii):
        for k, i in enumerate(blk.rows):
            got = blk.indices[blk.indptr[k]:blk.indptr[k + 1]]
            assert np.array_equal(got, brute_range(pts, pts[i], radii[i]))
            # the k-th neighbour sits exactly on the sphere and must be kept
            assert len(got) >= 6


def test_neighborhood_cache_is_read_only():
    idx = SpatialIndex(sample(Ball(0.5), n=200, seed=1).points)
    blk = next(idx.neighborhoods(0.1))
    with pytest.raises(ValueError):
        blk.indices[0] = 5
    assert next(idx.neighborhoods(0.1)) is blk


def test_workers(monkeypatch):
    monkeypatch.setenv("PCB_THREADS", "3")
    assert resolve_workers() == 3
    assert resolve_workers(2) == 2
    monkeypatch.delenv("PCB_THREADS")
    assert resolve_workers() == 1
    with pytest.raises(ValueError):
        resolve_workers(0)


@pytest.mark.property
def test_results_independent_of_workers():
    pts = sample(Ball(0.5), n=3000, seed=2).points
    a, b = SpatialIndex(pts, workers=1), SpatialIndex(pts, workers=4)
    assert np.array_equal(a.kth_neighbor_distances(10), b.kth_neighbor_distances(10))
    ba = next(a.neighborhoods(a.kth_neighbor_distances(10)))
    bb = next(b.neighborhoods(b.kth_neighbor_distances(10)))
    assert np.array_equal(ba.indices, bb.indices) and np.array_equal(ba.indptr, bb.indptr)


@pytest.mark.property
@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.tuples(st.integers(-5, 5), st.integers(-5, 5)), min_size=1, max_size=40),
    st.integers(0, 8),
)
def test_lattice_range_property(cells, r_int):
    # small integer lattices make exact ties at the radius common
    pts = np.array(cells, dtype=float) * 0.25
    r = r_int * 0.125
    idx = SpatialIndex(pts)
    for x in pts[:5]:
        assert np.array_equal(idx.range(x, r), brute_range(pts, x, r))


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1e6, allow_subnormal=False))
def test_covering_sqrt(sq):
    r = float(covering_sqrt(sq))
    assert r * r >= sq
    assert r <= np.nextafter(np.sqrt(sq), np.inf)


@pytest.mark.property
def test_dense_scan_matches_tree_path():
    pts = np.random.default_rng(7).random((300, 2))
    pts[5] = pts[9]  # a duplicate pair
    idx = SpatialIndex(pts)
    rows = np.arange(0, 300, 7)
    for r, include_self in ((0.9, True), (0.9, False), (2.0, True)):
        dense = idx._block_dense(rows, np.full(300, r), include_self)
        tree = idx._block_varying(rows, np.full(300, r), include_self)
        assert np.array_equal(dense.indptr, tree.indptr) and np.array_equal(dense.indices, tree.indices)
        assert np.array_equal(dense.sqdist, tree.sqdist)
