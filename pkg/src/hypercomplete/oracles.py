"""Slow, obviously-correct reference computations used by tests and selftest."""

from __future__ import annotations

import functools
import itertools
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


@functools.lru_cache(maxsize=None)
def all_labeled_trees(n: int) -> np.ndarray:
    """Every labelled tree on n vertices as edge arrays [n**(n-2), n-1, 2] (Pruefer decoding)."""
    if n == 2:
        return np.array([[[0, 1]]])
    trees = []
    for seq in itertools.product(range(n), repeat=n - 2):
        degree = [1] * n
        for s in seq:
            degree[s] += 1
        edges = []
        for s in seq:
            leaf = min(i for i in range(n) if degree[i] == 1)
            edges.append((leaf, s))
            degree[leaf] -= 1
            degree[s] -= 1
        u, v = [i for i in range(n) if degree[i] == 1]
        edges.append((u, v))
        trees.append(edges)
    return np.array(trees)


def brute_force_mst_weight(points: np.ndarray) -> float:
    pts = np.asarray(points, dtype=np.float64)
    trees = all_labeled_trees(len(pts))
    dist = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    weights = dist[trees[..., 0], trees[..., 1]].sum(axis=1)
    return float(weights.min())


def brute_force_fps(points: np.ndarray, n_s: int, start: int = 0) -> list[int]:
    pts = np.asarray(points, dtype=np.float64)
    chosen = [start]
    while len(chosen) < n_s:
        best, best_d = None, -1.0
        for i in range(len(pts)):
            if i in chosen:
                continue
            d = min(float(np.sum((pts[i] - pts[j]) ** 2)) for j in chosen)
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return chosen


def brute_force_knn(targets: np.ndarray, queries: np.ndarray, k: int) -> np.ndarray:
    out = []
    for q in queries:
        d = [(float(np.sum((t - q) ** 2)), i) for i, t in enumerate(targets)]
        out.append([i for _, i in sorted(d)[:k]])
    return np.array(out)


def numeric_grad(fn: Callable[[], Tensor], x: Tensor, index, eps: float = 1e-5) -> float:
    old = x.data[index]
    with no_grad():
        x.data[index] = old + eps
        fp = float(fn().data)
        x.data[index] = old - eps
        fm = float(fn().data)
    x.data[index] = old
    return (fp - fm) / (2 * eps)


def relative_error(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def gradcheck(fn: Callable[[], Tensor], tensors: Sequence[Tensor], eps: float = 1e-5,
              samples: int | None = None, rng: np.random.Generator | None = None,
              floor: float = 1e-6) -> float:
    """Largest relative error between backprop and central differences.

    With ``samples`` set, only that many random entries per tensor are probed.
    """
    for t in tensors:
        t.grad = None
    loss = fn()
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for t, g in zip(tensors, analytic):
        flat_ids = np.arange(t.size)
        if samples is not None and samples < t.size:
            flat_ids = rng.choice(t.size, samples, replace=False)
        for fid in flat_ids:
            idx = np.unravel_index(fid, t.shape)
            num = numeric_grad(fn, t, idx, eps)
            worst = max(worst, relative_error(float(g[idx]), num, floor))
    return worst
