import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hypercomplete.nn import MLP, Rng
from hypercomplete.oracles import brute_force_fps, brute_force_knn, gradcheck
from hypercomplete.points import (SampledSet, edge_conv, fps, hilbert_order, knn, nearest,
                                  pairwise_sqdist)
from hypercomplete.tensor import DimensionError, Tensor

coords = st.floats(-10, 10, allow_nan=False, width=64)


def clouds(min_n=1, max_n=32):
    return st.integers(min_n, max_n).flatmap(lambda n: arrays(np.float64, (n, 3), elements=coords))


def min_pairwise(points):
    d = np.sqrt(((points[:, None] - points[None]) ** 2).sum(-1))
    return d[~np.eye(len(points), dtype=bool)].min()


# -- fps -------------------------------------------------------------------------

def test_fps_skips_the_close_point():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0.1, 0, 0]], dtype=float)
    assert list(fps(pts, 2).indices) == [0, 1]


def test_fps_single_sample_is_start():
    pts = np.random.default_rng(0).normal(size=(10, 3))
    assert list(fps(pts, 1, start=4).indices) == [4]


def test_fps_collinear_tie_goes_to_lower_index():
    pts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], dtype=float)
    assert list(fps(pts, 3).indices) == [0, 3, 1]


def test_fps_coords_follow_indices():
    pts = np.random.default_rng(1).normal(size=(20, 3))
    s = fps(pts, 7)
    np.testing.assert_array_equal(s.coords.data, pts[s.indices])


def test_fps_too_many_samples():
    with pytest.raises(ValueError, match="3"):
        fps(np.zeros((3, 3)), 4)


@settings(max_examples=60, deadline=None)
@given(clouds(1, 32), st.data())
def test_fps_matches_greedy_oracle(pts, data):
    n_s = data.draw(st.integers(1, len(pts)))
    start = data.draw(st.integers(0, len(pts) - 1))
    assert list(fps(pts, n_s, start).indices) == brute_force_fps(pts, n_s, start)


@settings(max_examples=40, deadline=None)
@given(clouds(1, 32))
def test_fps_full_sample_is_permutation(pts):
    idx = fps(pts, len(pts)).indices
    assert sorted(idx) == list(range(len(pts)))


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 40), st.integers(0, 10_000))
def test_fps_min_distance_shrinks_with_more_samples(n, seed):
    pts = np.random.default_rng(seed).normal(size=(n, 3))
    for n_s in range(2, n):
        a = pts[fps(pts, n_s).indices]
        b = pts[fps(pts, n_s + 1).indices]
        assert min_pairwise(a) >= min_pairwise(b)


# -- knn -------------------------------------------------------------------------

def test_knn_query_on_a_target():
    targets = np.random.default_rng(2).normal(size=(12, 3))
    assert knn(targets, targets[5:6], 1)[0, 0] == 5


def test_knn_line_example():
    targets = np.array([[0, 0, 0], [1, 0, 0], [3, 0, 0]], dtype=float)
    assert list(knn(targets, np.array([[0.9, 0, 0]]), 2)[0]) == [1, 0]


def test_knn_all_is_permutation():
    targets = np.random.default_rng(3).normal(size=(9, 3))
    assert sorted(knn(targets, targets[:2], 9)[1]) == list(range(9))


def test_knn_k_too_large():
    with pytest.raises(ValueError):
        knn(np.zeros((3, 3)), np.zeros((1, 3)), 4)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 256), st.integers(1, 20), st.integers(0, 10_000), st.data())
def test_knn_matches_exhaustive_sort(n, q, seed, data):
    r = np.random.default_rng(seed)
    targets = r.normal(size=(n, 3))
    queries = r.normal(size=(q, 3))
    k = data.draw(st.integers(1, n))
    np.testing.assert_array_equal(knn(targets, queries, k), brute_force_knn(targets, queries, k))


def test_knn_ties_prefer_lower_index():
    targets = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0]], dtype=float)
    assert list(knn(targets, np.zeros((1, 3)), 3)[0]) == [0, 1, 2]


def test_nearest_ties_and_distances():
    targets = np.array([[1, 0, 0], [-1, 0, 0]], dtype=float)
    idx, d2 = nearest(np.array([[0, 0, 0], [-2, 0, 0]], dtype=float), targets)
    assert list(idx) == [0, 1]
    np.testing.assert_array_equal(d2, [1, 1])


# -- edge conv -------------------------------------------------------------------

def _samples(pts, idx):
    idx = np.asarray(idx)
    return SampledSet(idx, Tensor(pts[idx]))


def test_edge_conv_duplicated_points():
    pts = np.tile([[0.2, -0.4, 0.7]], (6, 1))
    mlp = MLP([6, 5, 4], Rng(0))
    out = edge_conv(pts, _samples(pts, [0, 3]), 3, mlp)
    expected = mlp(Tensor(np.concatenate([np.zeros(3), pts[0]])[None])).data[0]
    np.testing.assert_allclose(out.data, [expected, expected], atol=1e-15)


def test_edge_conv_k1_is_self():
    pts = np.random.default_rng(4).normal(size=(8, 3))
    mlp = MLP([6, 4], Rng(1), activation="relu")
    out = edge_conv(pts, _samples(pts, [2]), 1, mlp)
    expected = mlp(Tensor(np.concatenate([np.zeros(3), pts[2]])[None])).data[0]
    np.testing.assert_allclose(out.data[0], expected, atol=1e-15)


def test_edge_conv_two_points_by_hand():
    pts = np.array([[0, 0, 0], [1, 2, 3]], dtype=float)
    mlp = MLP([6, 6], Rng(2))
    mlp.layers[0].weight.data = np.eye(6)
    mlp.layers[0].bias.data = np.zeros(6)
    out = edge_conv(pts, _samples(pts, [0]), 2, mlp).data[0]
    # edges: self (0,0,0 ; 0,0,0) and to point 1 (1,2,3 ; 0,0,0); max per channel
    np.testing.assert_allclose(out, [1, 2, 3, 0, 0, 0])


def test_edge_conv_invariant_to_point_order():
    r = np.random.default_rng(5)
    pts = r.normal(size=(30, 3))
    mlp = MLP([6, 8, 5], Rng(3))
    perm = r.permutation(30)
    a = edge_conv(pts, SampledSet(np.arange(4), Tensor(pts[:4])), 6, mlp)
    b = edge_conv(pts[perm], SampledSet(np.arange(4), Tensor(pts[:4])), 6, mlp)
    np.testing.assert_allclose(a.data, b.data, atol=1e-14)


def test_edge_conv_gradients():
    r = np.random.default_rng(6)
    pts = r.normal(size=(10, 3))
    mlp = MLP([6, 5, 3], Rng(4))
    s = _samples(pts, [0, 4, 7])
    assert gradcheck(lambda: (edge_conv(pts, s, 4, mlp) ** 2).sum(), mlp.parameters()) < 1e-4


# -- pairwise distances ------------------------------------------------------------------

def test_pairwise_examples():
    assert pairwise_sqdist([[1.0, 2.0, 3.0]], [[1.0, 2.0, 3.0]]).data.tolist() == [[0.0]]
    assert pairwise_sqdist([[0.0, 0.0, 0.0]], [[3.0, 4.0, 0.0]]).data.tolist() == [[25.0]]
    d = pairwise_sqdist([[0.0, 0, 0], [1, 1, 0]], [[0.0, 0, 0], [1, 1, 0]]).data
    assert d[0, 0] == d[1, 1] == 0 and d[0, 1] == d[1, 0] == 2


def test_pairwise_shape_mismatch():
    with pytest.raises(DimensionError):
        pairwise_sqdist(np.zeros((2, 3)), np.zeros((2, 2)))


@settings(max_examples=40, deadline=None)
@given(clouds(1, 12), clouds(1, 12))
def test_pairwise_transpose_symmetry(a, b):
    np.testing.assert_array_equal(pairwise_sqdist(a, b).data.T, pairwise_sqdist(b, a).data)


def test_pairwise_gradients():
    r = np.random.default_rng(7)
    a = Tensor(r.normal(size=(4, 3)), requires_grad=True)
    b = Tensor(r.normal(size=(5, 3)), requires_grad=True)
    assert gradcheck(lambda: (pairwise_sqdist(a, b) ** 2).sum(), [a, b]) < 1e-4


# -- hilbert ordering --------------------------------------------------------------------

def test_hilbert_order_is_permutation_and_local():
    r = np.random.default_rng(8)
    pts = r.uniform(size=(200, 3))
    order = hilbert_order(pts)
    assert sorted(order) == list(range(200))
    walk = np.linalg.norm(np.diff(pts[order], axis=0), axis=1).sum()
    shuffled = np.linalg.norm(np.diff(pts, axis=0), axis=1).sum()
    assert walk < 0.5 * shuffled
