"""Versioned binary checkpoint format shared by all model components.

Layout: magic b"ADCV", format version (u32 LE), array count (u32 LE),
then per array: name length (u32) + UTF-8 name, ndim (u32), dims (u64
each), raw float64 data in row-major order. Deterministic byte-for-byte
given the same arrays in the same order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"ADCV"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<Q", d))
            f.write(arr.tobytes(order="C"))


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        version, count = struct.unpack("<II", f.read(8))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", f.read(4))
            name = f.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = tuple(struct.unpack("<Q", f.read(8))[0] for _ in range(ndim))
            n = int(np.prod(shape)) if shape else 1
            buf = f.read(8 * n)
            if len(buf) != 8 * n:
                raise CheckpointError(f"{path}: truncated array {name!r}")
            out[name] = np.frombuffer(buf, dtype=np.float64).reshape(shape).copy()
    return out
