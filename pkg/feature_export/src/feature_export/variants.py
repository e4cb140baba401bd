"""The shared 24-member pose family: 12 rotations of 30 degrees, each with
and without a horizontal flip, rendered into a rotation-safe square canvas.

This mirrors the matching engine's wire contract exactly: index k (0..11)
rotates by k*30 degrees counterclockwise in mathematical axes about the
image center (w/2, h/2); indices 12..23 flip about the vertical centerline
first; the canvas side is ceil(hypot(w, h)) with the image center mapped to
the canvas center; resampling is nearest-neighbor with half-up rounding.
"""
from __future__ import annotations

import math

import numpy as np

N_VARIANTS = 24


def variant_params(index: int) -> tuple[bool, float]:
    if not 0 <= index < N_VARIANTS:
        raise ValueError(f"variant index out of range: {index}")
    return index >= 12, (index % 12) * math.pi / 6.0


def canvas_side(width: int, height: int) -> int:
    return int(math.ceil(math.hypot(width, height)))


def apply_variant_array(arr: np.ndarray, index: int, fill=0) -> np.ndarray:
    """Resample a (H, W) or (H, W, C) array into the variant canvas."""
    reflect, rotation = variant_params(index)
    h, w = arr.shape[:2]
    side = canvas_side(w, h)
    cos, sin = math.cos(rotation), math.sin(rotation)

    qx, qy = np.meshgrid(np.arange(side, dtype=np.float64),
                         np.arange(side, dtype=np.float64))
    dx, dy = qx - side / 2.0, qy - side / 2.0
    # inverse rotation, then inverse flip
    sx = cos * dx + sin * dy
    sy = -sin * dx + cos * dy
    if reflect:
        sx = -sx
    sx = np.floor(sx + w / 2.0 + 0.5).astype(np.int64)
    sy = np.floor(sy + h / 2.0 + 0.5).astype(np.int64)
    ok = (sx >= 0) & (sx < w) & (sy >= 0) & (sy < h)

    out_shape = (side, side) + arr.shape[2:]
    out = np.full(out_shape, fill, dtype=arr.dtype)
    out[qy[ok].astype(int), qx[ok].astype(int)] = arr[sy[ok], sx[ok]]
    return out
