"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"HCPT1"                       magic + format version
    u64 header_len, header bytes   UTF-8 ``key = value`` lines (the ModelConfig)
    u32 tensor_count
    per tensor: u16 name_len, name, u8 ndim, u64 dims[ndim], f64 data (row-major)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ModelConfig
from .nn import Module

MAGIC = b"HCPT1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, model: Module, cfg: ModelConfig) -> None:
    header = cfgmod.to_text(cfg).encode("utf-8")
    params = list(model.named_parameters())
    chunks = [MAGIC, struct.pack("<Q", len(header)), header, struct.pack("<I", len(params))]
    for name, t in params:
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", t.ndim) + struct.pack(f"<{t.ndim}Q", *t.shape))
        chunks.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_checkpoint(path: str | Path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    if not blob.startswith(MAGIC):
        found = blob[:5]
        if found.startswith(b"HCPT"):
            raise CheckpointError(f"{path}: unsupported checkpoint version {found!r}, expected {MAGIC!r}")
        raise CheckpointError(f"{path}: not a {MAGIC.decode()} checkpoint")
    pos = len(MAGIC)

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError(f"{path}: truncated checkpoint at byte {pos}")
        out = blob[pos:pos + n]
        pos += n
        return out

    (hlen,) = struct.unpack("<Q", take(8))
    cfg = cfgmod.model_from_pairs(cfgmod.parse_pairs(take(hlen).decode("utf-8")))
    (count,) = struct.unpack("<I", take(4))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    return cfg, tensors


def load_into(model: Module, tensors: dict[str, np.ndarray], source: str = "checkpoint") -> None:
    params = dict(model.named_parameters())
    missing = sorted(set(params) - set(tensors))
    extra = sorted(set(tensors) - set(params))
    if missing or extra:
        raise CheckpointError(
            f"{MAGIC.decode()} {source}: parameter names differ "
            f"(missing {missing[:3]}, unexpected {extra[:3]})")
    for name, t in params.items():
        if tensors[name].shape != t.shape:
            raise CheckpointError(
                f"{MAGIC.decode()} {source}: shape mismatch for {name}: "
                f"file {tensors[name].shape} vs model {t.shape}")
    for name, t in params.items():
        t.data = tensors[name].copy()
