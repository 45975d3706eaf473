"""Point cloud files: ``.xyz``/``.txt`` text, binary little-endian ``.ply``, raw float32 triplets."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class CloudFormatError(ValueError):
    pass


FORMATS = {
    ".xyz": "xyz", ".txt": "xyz", ".pts": "xyz",
    ".ply": "ply",
    ".bin": "raw", ".raw": "raw", ".f32": "raw",
}

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def detect_format(path: str | Path) -> str:
    suffix = Path(path).suffix.lower()
    try:
        return FORMATS[suffix]
    except KeyError:
        raise CloudFormatError(f"{path}: unknown point cloud extension {suffix!r}") from None


def load_cloud(path: str | Path, fmt: str | None = None) -> np.ndarray:
    path = Path(path)
    fmt = fmt or detect_format(path)
    if fmt == "xyz":
        pts = _load_xyz(path)
    elif fmt == "ply":
        pts = _load_ply(path)
    elif fmt == "raw":
        pts = _load_raw(path)
    else:
        raise CloudFormatError(f"unsupported format {fmt!r}")
    if not np.all(np.isfinite(pts)):
        raise CloudFormatError(f"{path}: non-finite coordinates")
    return pts


def save_cloud(path: str | Path, points, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = fmt or detect_format(path)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if fmt == "xyz":
        with open(path, "w", encoding="utf-8") as fh:
            for x, y, z in pts:
                fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")
    elif fmt == "ply":
        header = ("ply\nformat binary_little_endian 1.0\n"
                  f"element vertex {len(pts)}\n"
                  "property float x\nproperty float y\nproperty float z\nend_header\n")
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(pts.astype("<f4").tobytes())
    elif fmt == "raw":
        path.write_bytes(pts.astype("<f4").tobytes())
    else:
        raise CloudFormatError(f"unsupported format {fmt!r}")


def _load_xyz(path: Path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.replace(",", " ").split()
            if len(parts) < 3:
                raise CloudFormatError(f"{path}:{lineno}: expected 3 coordinates, got {text!r}")
            try:
                rows.append([float(p) for p in parts[:3]])
            except ValueError:
                raise CloudFormatError(f"{path}:{lineno}: malformed coordinates {text!r}") from None
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def _load_raw(path: Path) -> np.ndarray:
    blob = path.read_bytes()
    if len(blob) % 12:
        expected = (len(blob) // 12 + 1) * 12
        raise CloudFormatError(
            f"{path}: truncated raw float32 file, expected {expected} bytes, found {len(blob)}")
    return np.frombuffer(blob, dtype="<f4").astype(np.float64).reshape(-1, 3)


def _load_ply(path: Path) -> np.ndarray:
    blob = path.read_bytes()
    end = blob.find(b"end_header")
    if not blob.startswith(b"ply") or end < 0:
        raise CloudFormatError(f"{path}: not a PLY file")
    nl = blob.find(b"\n", end)
    header = blob[:end].decode("ascii", errors="replace").splitlines()
    body = blob[nl + 1:]
    fmt_line = next((h for h in header if h.startswith("format")), "")
    if "binary_little_endian" not in fmt_line:
        raise CloudFormatError(f"{path}: only binary_little_endian PLY is supported, got {fmt_line!r}")
    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    for line in header:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise CloudFormatError(f"{path}: property before any element")
            if len(elements) > 1:
                continue    # only the leading vertex block is read
            if parts[1] == "list":
                raise CloudFormatError(f"{path}: list property in element {elements[-1][0]!r}")
            if parts[1] not in _PLY_TYPES:
                raise CloudFormatError(f"{path}: unknown PLY type {parts[1]!r}")
            elements[-1][2].append((parts[2], "<" + _PLY_TYPES[parts[1]]))
    if not elements or elements[0][0] != "vertex":
        found = elements[0][0] if elements else "none"
        raise CloudFormatError(f"{path}: first PLY element must be 'vertex', found {found!r}")
    name, count, props = elements[0]
    names = [p for p, _ in props]
    if not {"x", "y", "z"} <= set(names):
        raise CloudFormatError(f"{path}: vertex element lacks x/y/z properties")
    dtype = np.dtype(props)
    need = dtype.itemsize * count
    if len(body) < need:
        raise CloudFormatError(f"{path}: truncated PLY body, expected {need} bytes, found {len(body)}")
    rec = np.frombuffer(body[:need], dtype=dtype, count=count)
    return np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
