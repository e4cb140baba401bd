"""Mask file I/O: PNG (any nonzero pixel is foreground) and raw PGM (P5,
0 = background, 255 = foreground)."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError
from .geometry import BinaryMask


def read_mask(path: str | Path) -> BinaryMask:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return _read_pgm(path)
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return BinaryMask(arr > 0)


def write_mask(path: str | Path, mask: BinaryMask) -> None:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        _write_pgm(path, mask)
        return
    img = Image.fromarray(np.where(mask.cells, 255, 0).astype(np.uint8), mode="L")
    img.save(path)


def _read_pgm(path: Path) -> BinaryMask:
    data = path.read_bytes()
    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # then a single whitespace byte before the raster.
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < 4:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if i < len(data) and data[i:i + 1] == b"#":
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        start = i
        while i < len(data) and not data[i:i + 1].isspace():
            i += 1
        if start == i:
            raise FormatError(f"truncated PGM header: {path}")
        tokens.append(data[start:i])
    if tokens[0] != b"P5":
        raise FormatError(f"not a raw PGM (P5) file: {path}")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise FormatError(f"bad PGM header in {path}") from exc
    if maxval <= 0 or maxval > 255:
        raise FormatError(f"unsupported PGM maxval {maxval} in {path}")
    i += 1
    if len(data) - i < width * height:
        raise FormatError(f"PGM raster shorter than {width}x{height}: {path}")
    raster = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=i)
    return BinaryMask(raster.reshape(height, width) > 0)


def _write_pgm(path: Path, mask: BinaryMask) -> None:
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
    raster = np.where(mask.cells, 255, 0).astype(np.uint8).tobytes()
    path.write_bytes(header + raster)
