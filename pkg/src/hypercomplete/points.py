"""Geometric primitives on raw point sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import MLP, Module, Rng
from .tensor import Tensor, as_tensor

# rows per block when scanning large distance matrices
_CHUNK = 512


@dataclass
class SampledSet:
    indices: np.ndarray
    coords: Tensor

    def __len__(self) -> int:
        return len(self.indices)


def _coords(cloud) -> np.ndarray:
    arr = cloud.data if isinstance(cloud, Tensor) else np.asarray(cloud, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected an [n, 3] point array, got shape {arr.shape}")
    return arr


def sqdist_np(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("pqd,pqd->pq", diff, diff)


def pairwise_sqdist(a, b) -> Tensor:
    """Squared Euclidean distances [p, q], built from explicit differences."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise T.DimensionError(f"pairwise_sqdist: shapes {a.shape} and {b.shape}")
    diff = T.reshape(a, (a.shape[0], 1, a.shape[1])) - T.reshape(b, (1, b.shape[0], b.shape[1]))
    return T.tsum(diff * diff, axis=2)


def nearest(queries, targets) -> tuple[np.ndarray, np.ndarray]:
    """Index of and squared distance to the nearest target for every query.

    Exact brute force in row blocks; ties go to the lowest target index.
    """
    q, t = _coords(queries), _coords(targets)
    if len(q) == 0 or len(t) == 0:
        raise ValueError("nearest-neighbour search on an empty cloud")
    idx = np.empty(len(q), dtype=np.int64)
    d2 = np.empty(len(q))
    step = max(1, _CHUNK * 4096 // max(len(t), 1))
    for s in range(0, len(q), step):
        block = sqdist_np(q[s:s + step], t)
        j = np.argmin(block, axis=1)
        idx[s:s + step] = j
        d2[s:s + step] = block[np.arange(len(j)), j]
    return idx, d2


def fps(cloud, n_s: int, start: int = 0) -> SampledSet:
    """Greedy farthest point sampling beginning at ``start``."""
    pts = _coords(cloud)
    n = len(pts)
    if n < 1:
        raise ValueError("fps on an empty cloud")
    if not 1 <= n_s <= n:
        raise ValueError(f"fps: cannot sample {n_s} points from a cloud of {n}")
    if not 0 <= start < n:
        raise ValueError(f"fps: start index {start} out of range for {n} points")
    chosen = np.empty(n_s, dtype=np.int64)
    chosen[0] = start
    min_d = ((pts - pts[start]) ** 2).sum(axis=1)
    min_d[start] = -1.0
    for i in range(1, n_s):
        nxt = int(np.argmax(min_d))
        chosen[i] = nxt
        d = ((pts - pts[nxt]) ** 2).sum(axis=1)
        np.minimum(min_d, d, out=min_d)
        min_d[chosen[: i + 1]] = -1.0
    coords = T.take(cloud, chosen) if isinstance(cloud, Tensor) else Tensor(pts[chosen])
    return SampledSet(chosen, coords)


def knn(targets, queries, k: int) -> np.ndarray:
    """Indices [q, k] of the k nearest targets per query, ascending, ties by index."""
    t, q = _coords(targets), _coords(queries)
    if k > len(t):
        raise ValueError(f"knn: k={k} exceeds the {len(t)} available targets")
    if k < 1:
        raise ValueError("knn: k must be >= 1")
    out = np.empty((len(q), k), dtype=np.int64)
    step = max(1, _CHUNK * 4096 // max(len(t), 1))
    for s in range(0, len(q), step):
        block = sqdist_np(q[s:s + step], t)
        out[s:s + step] = np.argsort(block, axis=1, kind="stable")[:, :k]
    return out


def edge_features(cloud, samples: SampledSet, k: int) -> Tensor:
    """Edge vectors [n_s, k, 6] = (neighbour - centre, centre)."""
    pts = as_tensor(cloud)
    idx = knn(pts, samples.coords, k)
    neigh = T.take(pts, idx)
    centre = T.reshape(samples.coords, (len(samples), 1, 3))
    centre_b = T.broadcast_to(centre, neigh.shape)
    return T.concat([neigh - centre_b, centre_b], axis=2)


def edge_conv(cloud, samples: SampledSet, k: int, mlp: MLP) -> Tensor:
    """Shared MLP over each edge, max-aggregated over the k neighbours -> [n_s, C]."""
    edges = edge_features(cloud, samples, k)
    return T.max_along(mlp(edges), axis=1)


class EdgeConv(Module):
    def __init__(self, out_channels: int, rng: Rng, k: int = 16, hidden: int = 64,
                 activation: str = "silu"):
        self.k = k
        self.mlp = MLP([6, hidden, out_channels], rng, activation=activation)

    def forward(self, cloud, samples: SampledSet) -> Tensor:
        return edge_conv(cloud, samples, min(self.k, len(_coords(cloud))), self.mlp)


def hilbert_order(points, bits: int = 10) -> np.ndarray:
    """Permutation sorting points along a 3-D Hilbert curve over their bounding box."""
    pts = _coords(points)
    lo = pts.min(axis=0)
    span = np.maximum(pts.max(axis=0) - lo, 1e-12)
    side = (1 << bits) - 1
    grid = np.floor((pts - lo) / span * side + 0.5).astype(np.int64)
    keys = np.array([_hilbert_key(tuple(row), bits) for row in grid], dtype=np.int64)
    return np.argsort(keys, kind="stable")


def _hilbert_key(coords: tuple[int, int, int], bits: int) -> int:
    # Skilling's axes-to-transpose, then interleave the transposed bits
    x = list(coords)
    n = 3
    m = 1 << (bits - 1)
    q = m
    while q > 1:
        p = q - 1
        for i in range(n):
            if x[i] & q:
                x[0] ^= p
            else:
                t = (x[0] ^ x[i]) & p
                x[0] ^= t
                x[i] ^= t
        q >>= 1
    for i in range(1, n):
        x[i] ^= x[i - 1]
    t = 0
    q = m
    while q > 1:
        if x[n - 1] & q:
            t ^= q - 1
        q >>= 1
    for i in range(n):
        x[i] ^= t
    key = 0
    for b in range(bits - 1, -1, -1):
        for i in range(n):
            key = (key << 1) | ((x[i] >> b) & 1)
    return key
