"""FMAP wire format: the dense-feature-map file contract shared with the
matching engine.

Layout (bit-exact): magic "FMAP" (4 ASCII bytes), u32 little-endian version
(1), u32 rows, u32 cols, u32 dim, f32 cell_size, then rows*cols*dim IEEE-754
little-endian f32 values, row-major with the descriptor dimension varying
fastest.  One file per pose variant, named <stem>.v<00..23>.fmap.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"FMAP"
VERSION = 1


def write_fmap(path: str | Path, values: np.ndarray, cell_size: float) -> None:
    values = np.ascontiguousarray(values, dtype="<f4")
    if values.ndim != 3:
        raise ValueError("feature values must be (rows, cols, dim)")
    rows, cols, dim = values.shape
    header = MAGIC + struct.pack("<IIIIf", VERSION, rows, cols, dim, cell_size)
    Path(path).write_bytes(header + values.tobytes())


def read_fmap(path: str | Path) -> tuple[np.ndarray, float]:
    data = Path(path).read_bytes()
    if len(data) < 24 or data[:4] != MAGIC:
        raise ValueError(f"bad magic in {path}")
    version, rows, cols, dim = struct.unpack("<IIII", data[4:20])
    (cell_size,) = struct.unpack("<f", data[20:24])
    if version != VERSION:
        raise ValueError(f"unsupported version {version} in {path}")
    payload = np.frombuffer(data, dtype="<f4", offset=24)
    if payload.size != rows * cols * dim:
        raise ValueError(f"payload size mismatch in {path}")
    return payload.reshape(rows, cols, dim).copy(), float(cell_size)


def variant_filename(stem: str | Path, index: int) -> Path:
    stem = Path(stem)
    return stem.with_name(stem.name + f".v{index:02d}.fmap")
