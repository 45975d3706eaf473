"""Objectives and evaluation metrics for point cloud completion."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .points import _coords, nearest
from .tensor import Tensor, as_tensor

log = logging.getLogger(__name__)

# number of MST constructions since import / last reset
MST_CALLS = 0


def reset_mst_counter() -> None:
    global MST_CALLS
    MST_CALLS = 0


def _nonempty(*clouds) -> None:
    for c in clouds:
        if len(_coords(c)) == 0:
            raise ValueError("metric on an empty point cloud")


# -- chamfer family -----------------------------------------------------------

def _directed(a: Tensor, b: Tensor, norm: str) -> Tensor:
    idx, _ = nearest(a, b)
    diff = a - T.take(b, idx)
    if norm == "l1":
        return T.mean(T.row_norm(diff, axis=1))
    return T.mean(T.tsum(diff * diff, axis=1))


def chamfer(a, b, norm: str = "l1") -> Tensor:
    """Symmetric Chamfer distance.

    ``l1`` averages Euclidean nearest-neighbour distances, ``l2`` averages their
    squares. The result is the sum of the two directed means and is
    differentiable with respect to both clouds.
    """
    if norm not in ("l1", "l2"):
        raise ValueError(f"norm must be 'l1' or 'l2', got {norm!r}")
    a, b = as_tensor(a), as_tensor(b)
    _nonempty(a, b)
    return _directed(a, b, norm) + _directed(b, a, norm)


def reconstruction_loss(centers, completed, gt) -> Tensor:
    return chamfer(centers, gt, "l1") + chamfer(completed, gt, "l1")


# -- minimum spanning trees ---------------------------------------------------

@dataclass
class MstEdges:
    edges: list[tuple[int, int, float]]
    eta: float

    @property
    def total(self) -> float:
        return float(sum(d for _, _, d in self.edges))


def prim_batched(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Dense Prim over a batch of point sets [P, n, 3].

    Grows every tree from vertex 0 and always attaches the lowest-index vertex
    among the closest candidates. Returns parent and child index arrays of
    shape [P, n-1], in order of attachment.
    """
    global MST_CALLS
    MST_CALLS += 1
    pts = np.asarray(points, dtype=np.float64)
    batch, n, _ = pts.shape
    diff = pts[:, :, None, :] - pts[:, None, :, :]
    dist = np.sqrt(np.einsum("pijd,pijd->pij", diff, diff))
    rows = np.arange(batch)
    in_tree = np.zeros((batch, n), dtype=bool)
    in_tree[:, 0] = True
    best = dist[:, 0].copy()
    parent = np.zeros((batch, n), dtype=np.int64)
    us = np.empty((batch, n - 1), dtype=np.int64)
    vs = np.empty((batch, n - 1), dtype=np.int64)
    for step in range(n - 1):
        cand = np.where(in_tree, np.inf, best)
        v = np.argmin(cand, axis=1)
        us[:, step] = parent[rows, v]
        vs[:, step] = v
        in_tree[rows, v] = True
        d_new = dist[rows, v]
        closer = d_new < best
        best = np.where(closer, d_new, best)
        parent = np.where(closer, v[:, None], parent)
    return us, vs


def mst(points) -> MstEdges:
    pts = _coords(points)
    if len(pts) < 2:
        raise ValueError(f"minimum spanning tree needs >= 2 points, got {len(pts)}")
    us, vs = prim_batched(pts[None])
    d = np.linalg.norm(pts[us[0]] - pts[vs[0]], axis=1)
    edges = [(int(u), int(v), float(w)) for u, v, w in zip(us[0], vs[0], d)]
    return MstEdges(edges, float(d.mean()))


def _tree_terms(points: Tensor, us: np.ndarray, vs: np.ndarray, zeta: float) -> Tensor:
    """Sum over batches of edge lengths with d >= zeta * mean edge length.

    ``points`` is [P, n, 3]; topology (us, vs) is held fixed, so gradients
    reach the positions only through the selected edge lengths.
    """
    batch, n, _ = points.shape
    flat = points.reshape(batch * n, 3)
    offset = (np.arange(batch) * n)[:, None]
    lengths = T.row_norm(T.take(flat, (us + offset).ravel()) - T.take(flat, (vs + offset).ravel()),
                         axis=1)
    d = lengths.data.reshape(batch, n - 1)
    eta = d.mean(axis=1, keepdims=True)
    # relative slack keeps the equal-edge case (d == eta) on the inclusive side
    keep = d >= zeta * eta * (1.0 - 1e-12)
    return T.tsum(lengths * keep.ravel().astype(np.float64))


def tree_loss(points, zeta: float) -> Tensor:
    pts = as_tensor(points)
    if len(pts) < 2:
        raise ValueError(f"tree loss needs >= 2 points, got {len(pts)}")
    if zeta <= 0:
        raise ValueError("zeta must be positive")
    us, vs = prim_batched(pts.data[None])
    return _tree_terms(pts.reshape(1, len(pts), 3), us, vs, zeta)


def expansion_loss(centers, completed, zeta: float, group: int | None = None,
                   include_center: bool = True, stats: dict | None = None) -> Tensor:
    """Tree loss summed over the per-centre patches of the completed cloud.

    ``completed`` holds ``group`` consecutive points per centre (the layout
    produced by the deformation stage).
    """
    centers, completed = as_tensor(centers), as_tensor(completed)
    p = centers.shape[0]
    group = group or completed.shape[0] // p
    if group * p != completed.shape[0]:
        raise ValueError(f"{completed.shape[0]} points do not split into {p} patches")
    patches = completed.reshape(p, group, 3)
    if include_center:
        patches = T.concat([centers.reshape(p, 1, 3), patches], axis=1)
    n = patches.shape[1]
    if stats is not None:
        stats["skipped"] = p if n < 2 else 0
    if n < 2:
        log.warning("expansion loss: %d patches with fewer than 2 points skipped", p)
        return Tensor(0.0)
    us, vs = prim_batched(patches.data)
    return _tree_terms(patches, us, vs, zeta)


def total_loss(completion, gt, zeta: float, tau: float,
               expan_norm: str = "points") -> tuple[Tensor, dict[str, float]]:
    """L_rec + tau * L_expan. With tau == 0 the expansion term is never built.

    ``expan_norm="points"`` divides the patch-summed tree loss by the number of
    completed points, putting it on the same per-point footing as the Chamfer
    means in L_rec; ``"sum"`` keeps the bare sum over patches.
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    if expan_norm not in ("points", "sum"):
        raise ValueError(f"expan_norm must be 'points' or 'sum', got {expan_norm!r}")
    rec = reconstruction_loss(completion.centers, completion.points, gt)
    parts = {"rec": float(rec.data)}
    if tau == 0:
        parts["expan"] = 0.0
        parts["total"] = parts["rec"]
        return rec, parts
    expan = expansion_loss(completion.centers, completion.points, zeta,
                           group=completion.grid_points)
    if expan_norm == "points":
        expan = expan * (1.0 / len(completion.points))
    loss = rec + tau * expan
    parts["expan"] = float(expan.data)
    parts["total"] = float(loss.data)
    return loss, parts


# -- evaluation metrics ------------------------------------------------------

def f_score(pred, gt, phi: float = 0.01) -> float:
    """Harmonic mean of precision and recall at distance threshold ``phi``."""
    if phi <= 0:
        raise ValueError("phi must be positive")
    _nonempty(pred, gt)
    _, d_pred = nearest(pred, gt)
    _, d_gt = nearest(gt, pred)
    precision = float(np.mean(np.sqrt(d_pred) < phi))
    recall = float(np.mean(np.sqrt(d_gt) < phi))
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def fidelity(input_partial, output) -> float:
    """Mean distance from each input point to its nearest output point."""
    _nonempty(input_partial, output)
    _, d2 = nearest(input_partial, output)
    return float(np.mean(np.sqrt(d2)))


def mmd(outputs: Sequence, references: Sequence, norm: str = "l2") -> float:
    """Mean over outputs of the smallest Chamfer distance to any reference shape."""
    if not outputs:
        raise ValueError("mmd: no outputs")
    if not references:
        raise ValueError("mmd: empty reference set")
    with T.no_grad():
        mins = [min(float(chamfer(o, r, norm).data) for r in references) for o in outputs]
    return float(np.mean(mins))


def cd_value(a, b, norm: str) -> float:
    with T.no_grad():
        return float(chamfer(a, b, norm).data)


# -- reports -----------------------------------------------------------------

@dataclass
class ShapeResult:
    shape_id: str
    category: str
    cd_l1: float
    cd_l2: float
    f_score: float
    fidelity: float | None = None


@dataclass
class EvalReport:
    rows: list[ShapeResult] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    phi: float = 0.01
    mmd: float | None = None

    @property
    def warnings(self) -> int:
        return len(self.skipped)

    def summary(self) -> dict:
        def means(rows: list[ShapeResult]) -> dict:
            out = {
                "count": len(rows),
                "cd_l1": float(np.mean([r.cd_l1 for r in rows])) if rows else None,
                "cd_l2": float(np.mean([r.cd_l2 for r in rows])) if rows else None,
                "f_score": float(np.mean([r.f_score for r in rows])) if rows else None,
            }
            fid = [r.fidelity for r in rows if r.fidelity is not None]
            if fid:
                out["fidelity"] = float(np.mean(fid))
            return out

        cats = sorted({r.category for r in self.rows})
        doc = {
            "phi": self.phi,
            "overall": means(self.rows),
            "categories": {c: means([r for r in self.rows if r.category == c]) for c in cats},
            "skipped": list(self.skipped),
            "warnings": self.warnings,
        }
        if self.mmd is not None:
            doc["mmd"] = self.mmd
        return doc

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(["id", "cd_l1", "cd_l2", "f_score"])
            for r in self.rows:
                w.writerow([r.shape_id, repr(r.cd_l1), repr(r.cd_l2), repr(r.f_score)])

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")


def evaluate_pair(shape_id: str, pred, gt, phi: float, partial=None,
                  category: str = "all") -> ShapeResult:
    fid = fidelity(partial, pred) if partial is not None else None
    return ShapeResult(shape_id, category, cd_value(pred, gt, "l1"), cd_value(pred, gt, "l2"),
                       f_score(pred, gt, phi), fid)
