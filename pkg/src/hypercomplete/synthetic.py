"""Small deterministic shapes for smoke tests and toy training."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .cloudio import save_cloud
from .nn import Rng


def sphere(n: int, rng: Rng, radius: float = 0.5) -> np.ndarray:
    v = rng.normal((n, 3))
    return radius * v / np.linalg.norm(v, axis=1, keepdims=True)


def plane(n: int, rng: Rng, half: float = 0.5) -> np.ndarray:
    uv = rng.uniform(-half, half, (n, 2))
    tilt = np.array([[1.0, 0.0, 0.3], [0.0, 1.0, -0.2]])
    return uv @ tilt


def box_surface(n: int, rng: Rng, half: float = 0.4) -> np.ndarray:
    pts = rng.uniform(-half, half, (n, 3))
    axis = rng.integers(0, 3, n)
    side = np.where(rng.uniform(0, 1, n) < 0.5, -half, half)
    pts[np.arange(n), axis] = side
    return pts


def cut(points: np.ndarray, normal=(1.0, 0.0, 0.0), offset: float = 0.0) -> np.ndarray:
    """Keep the points on the negative side of the plane n.x = offset."""
    n = np.asarray(normal, dtype=np.float64)
    return points[points @ n <= offset]


def resample(points: np.ndarray, n: int, rng: Rng) -> np.ndarray:
    idx = rng.permutation(len(points))
    if len(points) >= n:
        return points[idx[:n]]
    extra = rng.integers(0, len(points), n - len(points))
    return np.concatenate([points[idx], points[extra]], axis=0)


SHAPES = {"sphere": sphere, "plane": plane, "box": box_surface}


def make_pair(kind: str, n_complete: int, n_partial: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """(partial, complete) where the partial view is the complete shape cut in half."""
    rng = Rng(seed)
    complete = SHAPES[kind](n_complete, rng)
    partial = resample(cut(complete), n_partial, rng)
    return partial, complete


def write_fixture_set(root: str | Path, n_complete: int = 512, n_partial: int = 256,
                      ext: str = ".xyz") -> list[str]:
    root = Path(root)
    (root / "partial").mkdir(parents=True, exist_ok=True)
    (root / "complete").mkdir(parents=True, exist_ok=True)
    ids = []
    for i, kind in enumerate(sorted(SHAPES)):
        sid = f"{i:04d}"
        partial, complete = make_pair(kind, n_complete, n_partial, seed=i)
        save_cloud(root / "partial" / f"{sid}{ext}", partial)
        save_cloud(root / "complete" / f"{sid}{ext}", complete)
        ids.append(sid)
    return ids
