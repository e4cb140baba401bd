"""Analytic rasterizers for synthetic objects: disks, annuli, rods, ellipses,
and hooks.  Each returns a mask plus the analytic geometry the caller may
need for oracles or scene construction."""
from __future__ import annotations

import math

import numpy as np

from .geometry import BinaryMask, Point2


def _grid(canvas: int | tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(canvas, int):
        h = w = canvas
    else:
        w, h = canvas
    ys, xs = np.mgrid[0:h, 0:w]
    return xs.astype(np.float64), ys.astype(np.float64)


def disk_mask(canvas, center: tuple[float, float], radius: float) -> BinaryMask:
    xs, ys = _grid(canvas)
    cx, cy = center
    return BinaryMask((xs - cx) ** 2 + (ys - cy) ** 2 <= radius * radius)


def annulus_mask(canvas, center: tuple[float, float], r_inner: float,
                 r_outer: float) -> BinaryMask:
    xs, ys = _grid(canvas)
    cx, cy = center
    d2 = (xs - cx) ** 2 + (ys - cy) ** 2
    return BinaryMask((d2 >= r_inner * r_inner) & (d2 <= r_outer * r_outer))


def ellipse_mask(canvas, center: tuple[float, float], a: float, b: float,
                 angle: float = 0.0) -> BinaryMask:
    """Filled ellipse with semi-axes a (along ``angle``) and b."""
    xs, ys = _grid(canvas)
    cx, cy = center
    ca, sa = math.cos(angle), math.sin(angle)
    u = (xs - cx) * ca + (ys - cy) * sa
    v = -(xs - cx) * sa + (ys - cy) * ca
    return BinaryMask((u / a) ** 2 + (v / b) ** 2 <= 1.0)


def rod_mask(canvas, center: tuple[float, float], length: float,
             thickness: float, angle: float = 0.0) -> tuple[BinaryMask, dict]:
    """Straight rod (rectangle) of the given length and thickness.

    Returns the mask and its analytic frame: unit ``axis``, unit ``normal``,
    and ``half_thickness``, which tests use to label the two faces.
    """
    xs, ys = _grid(canvas)
    cx, cy = center
    d = np.array([math.cos(angle), math.sin(angle)])
    n = np.array([-d[1], d[0]])
    u = (xs - cx) * d[0] + (ys - cy) * d[1]
    v = (xs - cx) * n[0] + (ys - cy) * n[1]
    half = thickness / 2.0
    mask = BinaryMask((np.abs(u) <= length / 2.0) & (np.abs(v) <= half))
    return mask, {"center": np.array(center, dtype=float), "axis": d,
                  "normal": n, "half_thickness": half, "half_length": length / 2.0}


def hook_mask(canvas, bend_center: tuple[float, float], inner_radius: float,
              wall: float, apex_angle: float, span: float = math.radians(185.0),
              handle_length: float = 30.0) -> tuple[BinaryMask, dict]:
    """C-shaped hook: an annular arc plus a tangential straight handle.

    The arc covers ``span`` radians centered on ``apex_angle`` (the direction
    from the bend center to the concave apex).  The handle continues from the
    arc end at ``apex_angle + span/2``.  Returns the mask and analytic
    geometry: the apex point on the inner boundary, the outward normal there
    (pointing into the cavity), the outer-crest point, and the handle
    segment.
    """
    xs, ys = _grid(canvas)
    bx, by = bend_center
    dx, dy = xs - bx, ys - by
    d2 = dx * dx + dy * dy
    r_in, r_out = inner_radius, inner_radius + wall

    rel_angle = np.arctan2(dy, dx) - apex_angle
    rel_angle = np.arctan2(np.sin(rel_angle), np.cos(rel_angle))
    arc = (d2 >= r_in * r_in) & (d2 <= r_out * r_out) & (np.abs(rel_angle) <= span / 2.0)

    theta_h = apex_angle + span / 2.0
    u_h = np.array([math.cos(theta_h), math.sin(theta_h)])
    tangent = np.array([-math.sin(theta_h), math.cos(theta_h)])
    h0 = np.array([bx, by]) + (r_in + wall / 2.0) * u_h
    along = (xs - h0[0]) * tangent[0] + (ys - h0[1]) * tangent[1]
    across = (xs - h0[0]) * u_h[0] + (ys - h0[1]) * u_h[1]
    handle = (along >= 0) & (along <= handle_length) & (np.abs(across) <= wall / 2.0)

    u_apex = np.array([math.cos(apex_angle), math.sin(apex_angle)])
    apex = np.array([bx, by]) + r_in * u_apex
    crest = np.array([bx, by]) + r_out * u_apex
    meta = {
        "bend_center": np.array([bx, by]),
        "apex": Point2(float(apex[0]), float(apex[1])),
        "apex_direction": u_apex,           # bend center -> apex, unit
        "apex_normal": -u_apex,             # outward normal at the apex (into the cavity)
        "crest": Point2(float(crest[0]), float(crest[1])),
        "inner_radius": r_in,
        "outer_radius": r_out,
        "handle": (h0, h0 + handle_length * tangent),
    }
    return BinaryMask(arc | handle), meta
