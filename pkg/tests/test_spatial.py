import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ensdiv.spatial import NeighborIndex, brute_force_distances, build_index, kth_distance, unit_ball_volume


def naive_kth(points, query, k):
    """Independent oracle: plain-Python squared-distance sum, then a full sort."""
    dists = []
    for p in points:
        acc = 0.0
        for a, b in zip(p, query):
            acc += (a - b) * (a - b)
        dists.append(math.sqrt(acc))
    dists.sort()
    return dists[k - 1]


def test_collinear_points_1d():
    index = build_index(np.array([[0.0], [1.0], [2.0]]))
    assert kth_distance(index, [0.0], 1) == 0.0
    assert kth_distance(index, [0.0], 2) == 1.0
    assert kth_distance(index, [0.0], 3) == 2.0
    assert kth_distance(index, [0.5], 2) == 0.5


def test_three_four_five():
    index = build_index(np.array([[0.0, 0.0], [3.0, 4.0]]))
    assert kth_distance(index, [0.0, 0.0], 2) == 5.0


def test_duplicates_give_zero_distance():
    index = build_index(np.array([[1.0, 1.0], [1.0, 1.0], [2.0, 2.0]]))
    assert kth_distance(index, [1.0, 1.0], 2) == 0.0


def test_empty_index_rejected():
    with pytest.raises(ValueError, match="empty"):
        build_index(np.empty((0, 3)))


def test_k_larger_than_m_rejected():
    index = build_index(np.zeros((3, 2)))
    with pytest.raises(ValueError, match="exceeds"):
        kth_distance(index, [0.0, 0.0], 4)


def test_k_zero_rejected():
    index = build_index(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        kth_distance(index, [0.0, 0.0], 0)


def test_query_dimension_mismatch():
    index = build_index(np.zeros((3, 2)))
    with pytest.raises(ValueError, match="dimension"):
        index.query(np.zeros((4, 3)), 1)


def test_uniform_d5_matches_brute_force_for_several_k():
    rng = np.random.default_rng(0)
    pts = rng.random((1000, 5))
    q = rng.random((200, 5))
    index = build_index(pts)
    for k in (1, 10, 100):
        got = index.kth(q, k)
        want = np.array([naive_kth(pts, row, k) for row in q[:20]])
        np.testing.assert_array_equal(got[:20], want)
        np.testing.assert_array_equal(got, brute_force_distances(pts, q, k)[:, -1])


def test_random_200_point_set_matches_oracle():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(200, 3))
    index = build_index(pts)
    for _ in range(50):
        query = rng.normal(size=3)
        k = int(rng.integers(1, 201))
        assert kth_distance(index, query, k) == naive_kth(pts, query, k)


@pytest.mark.parametrize("d", range(1, 9))
def test_tree_equals_brute_force_exactly(d):
    rng = np.random.default_rng(100 + d)
    pts = rng.random((400, d))
    q = rng.random((1000, d))
    ks = rng.integers(1, 401, size=1000)
    tree = build_index(pts)
    scan = build_index(pts, brute_force=True)
    for k in np.unique(ks):
        rows = ks == k
        np.testing.assert_array_equal(tree.kth(q[rows], int(k)), scan.kth(q[rows], int(k)))


def test_lattice_ties_are_exact():
    # many equidistant points: candidate slack alone cannot settle the order
    g = np.arange(-3.0, 4.0)
    pts = np.array(np.meshgrid(g, g, g)).reshape(3, -1).T
    tree = build_index(pts)
    q = np.zeros((1, 3))
    for k in range(1, pts.shape[0] + 1, 7):
        assert tree.kth(q, k)[0] == naive_kth(pts, q[0], k)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(2, 60), st.integers(0, 2**32 - 1))
def test_kth_distance_nondecreasing_in_k(d, m, seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(m, d))
    dist = build_index(pts).query(rng.normal(size=(5, d)), m)
    assert np.all(np.diff(dist, axis=1) >= 0)


def test_query_rows_are_sorted_order_statistics():
    rng = np.random.default_rng(4)
    pts = rng.random((50, 2))
    q = rng.random(2)
    row = build_index(pts).query(q, 50)[0]
    want = sorted(naive_kth(pts, q, k) for k in range(1, 51))
    np.testing.assert_array_equal(row, want)


def test_index_is_immutable():
    index = NeighborIndex(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        index.points[0, 0] = 1.0


def test_unit_ball_volume_small_d():
    assert unit_ball_volume(1) == pytest.approx(2.0, rel=1e-15)
    assert unit_ball_volume(2) == pytest.approx(math.pi, rel=1e-15)
    assert unit_ball_volume(3) == pytest.approx(4 * math.pi / 3, rel=1e-15)


@pytest.mark.parametrize("d", range(3, 60))
def test_unit_ball_volume_recursion(d):
    assert unit_ball_volume(d) == pytest.approx(unit_ball_volume(d - 2) * 2 * math.pi / d, rel=1e-12)


def test_unit_ball_volume_rejects_zero():
    with pytest.raises(ValueError):
        unit_ball_volume(0)
