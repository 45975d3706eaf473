import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hypercomplete import metrics
from hypercomplete.metrics import (chamfer, cd_value, expansion_loss, f_score, fidelity, mmd, mst,
                                   reconstruction_loss, total_loss, tree_loss)
from hypercomplete.model import Completion
from hypercomplete.oracles import brute_force_mst_weight, gradcheck
from hypercomplete.tensor import Tensor

ORIGIN = [[0.0, 0.0, 0.0]]
UNIT_X = [[1.0, 0.0, 0.0]]
COLLINEAR = np.array([[0.0, 0, 0], [1, 0, 0], [3, 0, 0]])


def clouds(min_n=1, max_n=16):
    return st.integers(min_n, max_n).flatmap(
        lambda n: arrays(np.float64, (n, 3), elements=st.floats(-5, 5, width=64)))


# -- chamfer ------------------------------------------------------------------

@pytest.mark.parametrize("norm", ["l1", "l2"])
def test_chamfer_unit_pair(norm):
    assert cd_value(ORIGIN, UNIT_X, norm) == 2.0


def test_chamfer_directed_terms_by_hand():
    assert cd_value([[0.0, 0, 0], [1, 0, 0]], ORIGIN, "l1") == 0.5


def test_chamfer_rejects_empty_and_bad_norm():
    with pytest.raises(ValueError):
        cd_value(np.zeros((0, 3)), ORIGIN, "l1")
    with pytest.raises(ValueError):
        cd_value(ORIGIN, ORIGIN, "l3")


@settings(max_examples=50, deadline=None)
@given(clouds(), clouds(), st.floats(0.1, 10))
def test_chamfer_symmetry_zero_and_scaling(a, b, s):
    for norm in ("l1", "l2"):
        assert cd_value(a, b, norm) == pytest.approx(cd_value(b, a, norm), rel=1e-12, abs=1e-12)
        assert cd_value(a, a, norm) == 0.0
    assert cd_value(s * a, s * b, "l1") == pytest.approx(s * cd_value(a, b, "l1"), rel=1e-9, abs=1e-12)
    assert cd_value(s * a, s * b, "l2") == pytest.approx(s * s * cd_value(a, b, "l2"), rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("norm", ["l1", "l2"])
def test_chamfer_gradients(norm):
    r = np.random.default_rng(0)
    a = Tensor(r.normal(size=(12, 3)), requires_grad=True)
    b = Tensor(r.normal(size=(16, 3)), requires_grad=True)
    assert gradcheck(lambda: chamfer(a, b, norm), [a, b]) < 1e-4


def test_reconstruction_examples():
    assert float(reconstruction_loss(ORIGIN, ORIGIN, ORIGIN).data) == 0.0
    assert float(reconstruction_loss(ORIGIN, UNIT_X, ORIGIN).data) == 2.0


@settings(max_examples=30, deadline=None)
@given(clouds(), clouds(), clouds())
def test_reconstruction_dominates_each_term(s, p, g):
    total = float(reconstruction_loss(s, p, g).data)
    assert total >= cd_value(s, g, "l1") and total >= cd_value(p, g, "l1")


# -- minimum spanning tree ------------------------------------------------------------

def test_mst_collinear():
    tree = mst(COLLINEAR)
    assert sorted((min(u, v), max(u, v)) for u, v, _ in tree.edges) == [(0, 1), (1, 2)]
    assert tree.eta == 1.5


def test_mst_two_points():
    tree = mst([[0.0, 0, 0], [0, 3, 4]])
    assert len(tree.edges) == 1 and tree.eta == 5.0


def test_mst_equilateral_ties():
    tri = np.array([[0.0, 0, 0], [1, 0, 0], [0.5, np.sqrt(3) / 2, 0]])
    tree = mst(tri)
    assert len(tree.edges) == 2
    assert tree.total == pytest.approx(2.0, abs=1e-12)
    assert tree.eta == pytest.approx(1.0, abs=1e-12)


def test_mst_exact_ties_take_lowest_index():
    square = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]])
    tree = mst(square)
    assert sorted((min(u, v), max(u, v)) for u, v, _ in tree.edges) == [(0, 1), (0, 2), (1, 3)]


def test_mst_needs_two_points():
    with pytest.raises(ValueError):
        mst(ORIGIN)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 7), st.integers(0, 2 ** 32 - 1))
def test_mst_matches_enumeration(n, seed):
    pts = np.random.default_rng(seed).uniform(-1, 1, (n, 3))
    tree = mst(pts)
    assert len(tree.edges) == n - 1
    assert tree.total == pytest.approx(brute_force_mst_weight(pts), abs=1e-12)
    # spanning: union-find over the edges joins everything
    parent = list(range(n))

    def root(i):
        while parent[i] != i:
            i = parent[i]
        return i
    for u, v, _ in tree.edges:
        parent[root(u)] = root(v)
    assert len({root(i) for i in range(n)}) == 1


# -- tree and expansion losses --------------------------------------------------------

def test_tree_loss_collinear():
    assert float(tree_loss(COLLINEAR, 1.0).data) == 2.0


def test_tree_loss_large_ratio_is_zero():
    pts = np.random.default_rng(1).normal(size=(10, 3))
    assert float(tree_loss(pts, 100.0).data) == 0.0


def test_tree_loss_equal_edges_all_qualify():
    u, v = np.meshgrid(np.arange(4.0), np.arange(4.0), indexing="ij")
    grid = np.stack([u.ravel(), v.ravel(), np.zeros(16)], axis=1) * 0.1
    assert float(tree_loss(grid, 1.0).data) == pytest.approx(mst(grid).total, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 12), st.integers(0, 10_000), st.floats(0.1, 10))
def test_tree_loss_scale_covariant(n, seed, s):
    pts = np.random.default_rng(seed).normal(size=(n, 3))
    base = float(tree_loss(pts, 1.2).data)
    assert float(tree_loss(s * pts, 1.2).data) == pytest.approx(s * base, rel=1e-9)


def test_tree_loss_gradient_through_kept_edges():
    pts = Tensor(COLLINEAR.copy(), requires_grad=True)
    tree_loss(pts, 1.0).backward()
    # only edge (1, 2) counts: pulls point 1 towards +x and point 2 towards -x
    np.testing.assert_allclose(pts.grad, [[0, 0, 0], [-1, 0, 0], [1, 0, 0]])


def test_expansion_zero_when_collapsed():
    centers = np.random.default_rng(2).normal(size=(5, 3))
    assert float(expansion_loss(centers, np.repeat(centers, 4, axis=0), 1.2).data) == 0.0


def test_expansion_single_patch_equals_tree_loss():
    out = expansion_loss(ORIGIN, COLLINEAR, 1.0, include_center=False)
    assert float(out.data) == float(tree_loss(COLLINEAR, 1.0).data) == 2.0


def test_expansion_batched_matches_per_patch_loop():
    r = np.random.default_rng(3)
    centers = r.normal(size=(6, 3))
    pts = np.repeat(centers, 9, axis=0) + 0.1 * r.normal(size=(54, 3))
    batched = float(expansion_loss(centers, pts, 1.2).data)
    looped = sum(float(tree_loss(np.vstack([centers[j], pts[9 * j:9 * j + 9]]), 1.2).data)
                 for j in range(6))
    assert batched == pytest.approx(looped, rel=1e-12)


def test_expansion_tiny_patch_skipped():
    stats = {}
    out = expansion_loss(ORIGIN, ORIGIN, 1.2, include_center=False, stats=stats)
    assert float(out.data) == 0.0 and stats["skipped"] == 1


def _completion(seed=4):
    r = np.random.default_rng(seed)
    centers = r.normal(size=(4, 3))
    points = np.repeat(centers, 4, axis=0) + 0.2 * r.normal(size=(16, 3))
    return Completion(Tensor(points), Tensor(centers), None, 4), r.normal(size=(30, 3))


def test_total_loss_tau_zero_skips_tree():
    comp, gt = _completion()
    metrics.reset_mst_counter()
    loss, parts = total_loss(comp, gt, 1.2, 0.0)
    assert metrics.MST_CALLS == 0
    assert float(loss.data) == float(reconstruction_loss(comp.centers, comp.points, gt).data)
    total_loss(comp, gt, 1.2, 0.05)
    assert metrics.MST_CALLS > 0


def test_total_loss_monotone_in_tau():
    comp, gt = _completion(5)
    values = [total_loss(comp, gt, 1.2, tau)[1]["total"] for tau in (0.0, 0.01, 0.05, 0.5, 2.0)]
    assert values == sorted(values)


# -- evaluation metrics -----------------------------------------------------------------

def test_f_score_examples():
    pts = np.random.default_rng(6).normal(size=(20, 3))
    assert f_score(pts, pts, 0.01) == 1.0
    assert f_score(ORIGIN, [[5.0, 0, 0]], 1.0) == 0.0
    assert f_score([[0.0, 0, 0], [10, 0, 0]], ORIGIN, 1.0) == pytest.approx(2 / 3, abs=1e-12)


def test_f_score_threshold_is_strict():
    assert f_score(ORIGIN, UNIT_X, 1.0) == 0.0


@settings(max_examples=40, deadline=None)
@given(clouds(), clouds(), st.floats(1e-3, 5), st.floats(1e-3, 5))
def test_f_score_bounded_and_monotone(a, b, phi1, phi2):
    lo, hi = sorted((phi1, phi2))
    f_lo, f_hi = f_score(a, b, lo), f_score(a, b, hi)
    assert 0.0 <= f_lo <= f_hi <= 1.0


def test_fidelity_examples():
    assert fidelity(ORIGIN, [[3.0, 4, 0]]) == 5.0
    a = np.array([[0.0, 0, 0]])
    b = np.array([[0.0, 0, 0], [4, 0, 0]])
    assert fidelity(a, b) == 0.0 and fidelity(b, a) == 2.0


@settings(max_examples=30, deadline=None)
@given(clouds(2, 16), st.data())
def test_fidelity_zero_on_subsets(out, data):
    keep = data.draw(st.lists(st.integers(0, len(out) - 1), min_size=1, unique=True))
    assert fidelity(out[keep], out) == 0.0


def test_mmd_examples():
    a, b = np.array(ORIGIN), np.array([[2.0, 0, 0]])
    assert mmd([a, b], [a, b]) == 0.0
    assert mmd([a], [b]) == cd_value(a, b, "l2")
    # outputs {0, 1}, references {3, 4} on the x axis; row minima 9*2 and 4*2
    o = [np.array(ORIGIN), np.array(UNIT_X)]
    refs = [np.array([[3.0, 0, 0]]), np.array([[4.0, 0, 0]])]
    assert mmd(o, refs) == (18.0 + 8.0) / 2


def test_mmd_empty_reference():
    with pytest.raises(ValueError):
        mmd([np.array(ORIGIN)], [])


# -- report ---------------------------------------------------------------------------

def test_report_outputs(tmp_path):
    report = metrics.EvalReport(phi=0.5)
    report.rows.append(metrics.evaluate_pair("a/0", ORIGIN, ORIGIN, 0.5, category="a"))
    report.rows.append(metrics.evaluate_pair("b/0", ORIGIN, UNIT_X, 0.5, partial=ORIGIN, category="b"))
    report.skipped.append("b/1")
    report.write_csv(tmp_path / "r.csv")
    report.write_json(tmp_path / "r.json")
    raw = (tmp_path / "r.csv").read_bytes()
    assert raw.startswith(b"id,cd_l1,cd_l2,f_score\r\n")
    assert raw.count(b"\r\n") == 3
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["skipped"] == ["b/1"] and doc["warnings"] == 1
    assert doc["categories"]["a"]["cd_l1"] == 0.0
    assert doc["categories"]["b"]["cd_l2"] == 2.0
    assert doc["overall"]["f_score"] == 0.5
