"""Multi-scale boundary curvature estimation and refinement.

The estimator fits the one-parameter parabola v = a*u^2 in a local frame
aligned with the dominant direction of the in-scale edge points.  Ray-cast
filtering removes edge points that belong to a different edge of the object
(the far side of thin structures) before a second fit.  A scale pyramid plus
a fixed scale-to-radius ratio picks the scale at which contact geometry is
judged.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (DegenerateFit, EmptySelection, InsufficientSupport,
                     NoMatchingConvexity)
from .geometry import BinaryMask, EdgePointSet, Point2

R_CAP = 1e4              # radius cap for straight edges (1/kappa unbounded)
FLAT_KAPPA = 1e-3        # below this magnitude the sign is meaningless
SIGN_PROBE_CAP = 3.0     # px; probe distance cap for the convexity test
MIN_SUPPORT = 5
MIN_SCALE = 3.0
RAY_COUNT = 72
RAY_CORRIDOR = 1.5       # px; perpendicular hit tolerance per ray
OCCLUSION_DEPTH = 1.6    # px; material depth a sight line may graze before
                         # everything behind it counts as a different edge
                         # (must stay below half the thinnest wall, 4 px)
DEFAULT_ALPHA = 3.5
DEFAULT_DELTA = 2.0      # px; ray-cast seed offset from the contact point

# Reference pyramid for 448 px-class masks; scaled with the mask diagonal.
BASE_PYRAMID = (5.0, 10.0, 15.0, 20.0, 30.0, 40.0, 60.0, 80.0)
_BASE_DIAGONAL = math.hypot(448.0, 448.0)


class Convexity(str, Enum):
    CONVEX = "convex"
    CONCAVE = "concave"
    FLAT = "flat"


def signs_compatible(a: Convexity, b: Convexity) -> bool:
    """Two boundary points can press against each other unless both are concave."""
    return not (a == Convexity.CONCAVE and b == Convexity.CONCAVE)


@dataclass
class CurvatureEstimate:
    """Local boundary geometry at one point and one observation scale."""

    point: Point2
    a: float                      # fitted quadratic coefficient, 1/px
    kappa: float                  # curvature magnitude, 1/px
    radius_of_curvature: float    # px, capped at R_CAP
    sign: Convexity
    normal: np.ndarray            # unit, foreground to background
    tangent: np.ndarray           # unit, largest-variance axis
    scale: float
    residual: float               # mean squared fit error, px^2
    support_count: int
    center_direction: np.ndarray | None = None  # unit, toward the fitted osculating center
    seed_direction: np.ndarray | None = None    # side for ray-cast filtering

    def record(self) -> dict:
        """Plain-JSON debug record."""
        return {
            "point": [self.point.x, self.point.y],
            "a": self.a,
            "kappa": self.kappa,
            "r": self.radius_of_curvature,
            "sign": self.sign.value,
            "scale": self.scale,
            "residual": self.residual,
        }


@dataclass
class ContactPair:
    """Tool-side and object-side estimates of one contact."""

    tool_point: CurvatureEstimate
    object_point: CurvatureEstimate

    def __post_init__(self):
        if not signs_compatible(self.tool_point.sign, self.object_point.sign):
            raise ValueError("concave-against-concave contact is not realizable")


def fit_parabola(local_points: np.ndarray) -> tuple[float, float]:
    """Least-squares coefficient of v = a*u^2 and the mean squared residual.

    ``local_points`` is (N, 2) of (u, v) in a frame already centered on the
    query point.  The closed form is a = sum(u^2 v) / sum(u^4).
    """
    pts = np.asarray(local_points, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] < MIN_SUPPORT:
        raise InsufficientSupport(f"need >= {MIN_SUPPORT} points, got {pts.shape[0]}")
    u, v = pts[:, 0], pts[:, 1]
    u2 = u * u
    denom = float(np.sum(u2 * u2))
    if denom < 1e-12:
        raise DegenerateFit("no support along the tangent axis")
    a = float(np.sum(u2 * v)) / denom
    residual = float(np.mean((v - a * u2) ** 2))
    return a, residual


def curvature_sign(mask: BinaryMask, c: Point2, toward_center: np.ndarray,
                   radius: float, kappa: float) -> Convexity:
    """Sign of the curvature from a mask probe toward the osculating center.

    Flat when the magnitude is below FLAT_KAPPA; otherwise convex when a
    short probe toward the center lands on foreground (center inside the
    object) and concave when it lands on background.
    """
    if kappa < FLAT_KAPPA:
        return Convexity.FLAT
    step = min(radius, SIGN_PROBE_CAP)
    q = Point2(c.x + toward_center[0] * step, c.y + toward_center[1] * step)
    return Convexity.CONVEX if mask.is_foreground(q) else Convexity.CONCAVE


def _contour_direction(edges: EdgePointSet, c: Point2) -> np.ndarray:
    d2 = (edges.points[:, 0] - c.x) ** 2 + (edges.points[:, 1] - c.y) ** 2
    i = int(np.argmin(d2))
    j = min(i + 1, edges.count - 1)
    h = max(i - 1, 0)
    d = edges.points[j] - edges.points[h]
    norm = np.linalg.norm(d)
    return d / norm if norm > 0 else np.array([1.0, 0.0])


def _principal_axis(pts: np.ndarray, edges: EdgePointSet, c: Point2) -> np.ndarray:
    """Unit direction of largest variance; near-isotropic point sets fall
    back to the contour direction at the query point."""
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered
    evals, evecs = np.linalg.eigh(cov)
    if evals[1] - evals[0] > 1e-9 * max(evals[1], 1.0):
        axis = evecs[:, 1]
    else:
        axis = _contour_direction(edges, c)
    if axis[0] < 0 or (axis[0] == 0 and axis[1] < 0):
        axis = -axis
    return axis / np.linalg.norm(axis)


def _outward_normal(mask: BinaryMask, c: Point2, n0: np.ndarray,
                    center_dir: np.ndarray | None) -> np.ndarray:
    """Orient the perpendicular axis from foreground to background."""
    plus = minus = 0
    for step in (1.5, 2.5, 3.5):
        plus += mask.is_foreground(Point2(c.x + n0[0] * step, c.y + n0[1] * step))
        minus += mask.is_foreground(Point2(c.x - n0[0] * step, c.y - n0[1] * step))
    if plus < minus:
        return n0.copy()
    if minus < plus:
        return -n0
    if center_dir is not None:
        # Probes tied (thin or deep neighborhood): a convex fit has its
        # center inside the object, so outward opposes it.
        return -center_dir
    return n0.copy()


def _local_offset(u: np.ndarray, v: np.ndarray) -> float:
    """Sub-pixel frame-origin correction along the perpendicular axis.

    A rasterized edge is a band about one pixel deep; when the query pixel
    sits at a locally extreme depth within the band, forcing the parabola
    through it inflates the curvature severely (the bias grows as 1/scale^2).
    Re-centering on the mean depth of the immediately adjacent edge pixels
    removes that bias.  The band gate on v keeps pixels of a different edge
    (e.g. a thin rod's far face right above the query point) out of it.
    """
    near = (np.abs(u) <= 1.5) & (np.abs(v) <= 1.5)
    return float(v[near].mean()) if near.any() else 0.0


SMOOTH_ALONG = 2.5   # px; tangent half-window of the refit's staircase denoise
SMOOTH_FLAT = 4.5    # px; wider window used once a stretch proves near-flat
SMOOTH_ACROSS = 1.2  # px; edge-preserving gate so faces never blend


def _bilateral_smooth(u: np.ndarray, v: np.ndarray, window: float) -> np.ndarray:
    """Replace each perpendicular offset with a local linear fit over its
    tangent window, restricted to points of the same edge (close in v).

    A local line is exact on straight stretches and keeps the one-sided
    windows at the ends of the u-range from bending the profile the way a
    plain windowed mean would; the v-gate stops blending across the faces
    of thin structures.
    """
    near = (np.abs(u[:, None] - u[None, :]) <= window) \
        & (np.abs(v[:, None] - v[None, :]) <= SMOOTH_ACROSS)
    out = np.empty_like(v)
    for i in range(u.shape[0]):
        sel = near[i]
        du = u[sel] - u[i]
        vv = v[sel]
        n = du.shape[0]
        s1, s2 = du.sum(), (du * du).sum()
        det = n * s2 - s1 * s1
        if det > 1e-12:
            out[i] = (vv.sum() * s2 - s1 * (du @ vv)) / det
        else:
            out[i] = vv.mean()
    return out


def _denoised_fit(u: np.ndarray, v_raw: np.ndarray) -> tuple[float, float]:
    """Smooth, re-center, and fit; near-flat stretches get a second pass
    with a wider window.

    The narrow window preserves genuine curvature of small features; once
    the first fit shows a radius far beyond the aperture, the stretch is
    treated as straight, where the wide window is exact and squeezes out
    the remaining staircase ripple.
    """
    v = _bilateral_smooth(u, v_raw, SMOOTH_ALONG)
    v = v - _local_offset(u, v)
    a, residual = fit_parabola(np.stack([u, v], axis=1))
    aperture = float(u.max() - u.min())
    radius = 1.0 / (2.0 * abs(a)) if a != 0 else R_CAP
    if radius > aperture:
        v = _bilateral_smooth(u, v_raw, SMOOTH_FLAT)
        v = v - _local_offset(u, v)
        a, residual = fit_parabola(np.stack([u, v], axis=1))
    return a, residual


def estimate_curvature(edges: EdgePointSet, c: Point2, scale: float,
                       mask: BinaryMask, *, smooth: bool = True) -> CurvatureEstimate:
    """Single-pass curvature estimate from the edge points within ``scale``.

    The tangent is the principal axis of the in-scale points, the parabola is
    fit in the frame centered at ``c``, and the sign comes from a mask probe.
    kappa = 2|a|; the radius of curvature is 1/kappa capped at R_CAP.
    ``smooth=False`` skips the raster denoise and fits the raw offsets.
    """
    if scale < MIN_SCALE:
        raise ValueError(f"observation scale must be >= {MIN_SCALE}")
    pts = edges.within(c, scale)
    if pts.shape[0] < MIN_SUPPORT:
        raise InsufficientSupport(
            f"{pts.shape[0]} edge points within scale {scale:g} of ({c.x:g}, {c.y:g})")

    tangent = _principal_axis(pts, edges, c)
    n0 = np.array([-tangent[1], tangent[0]])
    rel = pts - c.as_array()
    u, v = rel @ tangent, rel @ n0
    if smooth:
        a, residual = _denoised_fit(u, v)
    else:
        v = v - _local_offset(u, v)
        a, residual = fit_parabola(np.stack([u, v], axis=1))

    kappa = 2.0 * abs(a)
    radius = min(1.0 / kappa, R_CAP) if kappa > 0 else R_CAP
    center_dir = math.copysign(1.0, a) * n0 if a != 0 else n0.copy()
    normal = _outward_normal(mask, c, n0, center_dir if a != 0 else None)
    sign = curvature_sign(mask, c, center_dir, radius, kappa)
    # Ray-cast seeding happens on the open (background) side: from there the
    # first-hit rule keeps exactly the directly visible stretch of the edge,
    # which both drops other edges of thin structures and trims wrapped arcs
    # that a parabola cannot represent.
    seed = normal.copy()
    oriented_tangent = np.array([-normal[1], normal[0]])
    return CurvatureEstimate(point=c, a=a, kappa=kappa, radius_of_curvature=radius,
                             sign=sign, normal=normal, tangent=oriented_tangent,
                             scale=scale, residual=residual,
                             support_count=int(pts.shape[0]),
                             center_direction=center_dir, seed_direction=seed)


def _interior_depth(mask: BinaryMask) -> np.ndarray:
    """Distance of each foreground pixel to the nearest background (cached)."""
    cached = getattr(mask, "_interior_depth", None)
    if cached is None:
        from scipy import ndimage
        cached = ndimage.distance_transform_edt(mask.cells)
        mask._interior_depth = cached
    return cached


def suppress_irrelevant(edges: EdgePointSet, c: Point2,
                        first_pass: CurvatureEstimate,
                        delta: float = DEFAULT_DELTA,
                        mask: BinaryMask | None = None) -> EdgePointSet:
    """Keep only the in-scale edge points on the same edge as ``c``.

    RAY_COUNT rays fan out from a seed ``delta`` px off the contact point on
    its open (background) side.  An edge point survives when it lies in the
    corridor of some ray and is the first edge encountered along its sight
    line: the segment from the seed may graze at most OCCLUSION_DEPTH px of
    material before reaching it.  Points behind another edge, e.g. the far
    face of a thin rod, fail the sight-line test and drop out.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    pts = edges.within(c, first_pass.scale)
    if pts.shape[0] == 0:
        raise EmptySelection("no in-scale points")

    u = first_pass.seed_direction
    if u is None:
        u = first_pass.normal
    seed = c.as_array() + delta * u

    angles = np.arange(RAY_COUNT) * (2.0 * math.pi / RAY_COUNT)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    rel = pts - seed
    along = rel @ dirs.T                                   # (N, RAY_COUNT)
    perp = np.abs(rel[:, 0:1] * dirs[:, 1] - rel[:, 1:2] * dirs[:, 0])
    covered = ((perp <= RAY_CORRIDOR) & (along > 1e-9)).any(axis=1)

    if mask is not None and covered.any():
        covered &= _sight_line_clear(mask, seed, pts)
    if not covered.any():
        raise EmptySelection("no ray reached an in-scale edge point")
    return EdgePointSet(points=pts[covered])


def _sight_line_clear(mask: BinaryMask, seed: np.ndarray, pts: np.ndarray,
                      tail: float = 1.5) -> np.ndarray:
    """For each point, whether the seed-to-point segment stays shallower
    than OCCLUSION_DEPTH inside the foreground (the last ``tail`` px before
    the point are exempt, since the point's own edge band is material)."""
    depth = _interior_depth(mask)
    h, w = depth.shape
    deltas = pts - seed
    dists = np.linalg.norm(deltas, axis=1)
    max_len = max(float(dists.max()) - tail, 0.0)
    steps = np.arange(0.25, max_len + 1e-9, 0.5)
    if steps.size == 0:
        return np.ones(pts.shape[0], dtype=bool)
    valid = steps[None, :] <= (dists - tail)[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = steps[None, :] / dists[:, None]
    xs = np.clip(np.round(seed[0] + deltas[:, 0:1] * frac).astype(int), 0, w - 1)
    ys = np.clip(np.round(seed[1] + deltas[:, 1:2] * frac).astype(int), 0, h - 1)
    occluded = ((depth[ys, xs] > OCCLUSION_DEPTH) & valid).any(axis=1)
    return ~occluded


def two_pass_estimate(edges: EdgePointSet, c: Point2, scale: float,
                      mask: BinaryMask,
                      delta: float = DEFAULT_DELTA) -> CurvatureEstimate:
    """Estimate, filter irrelevant points, re-estimate.

    Falls back to the first-pass estimate when filtering keeps too few
    points to refit.
    """
    first = estimate_curvature(edges, c, scale, mask)
    try:
        kept = suppress_irrelevant(edges, c, first, delta, mask=mask)
        return estimate_curvature(kept, c, scale, mask, smooth=True)
    except (EmptySelection, InsufficientSupport, DegenerateFit):
        try:
            return estimate_curvature(edges, c, scale, mask, smooth=True)
        except (InsufficientSupport, DegenerateFit):
            return first


def motion_functional_scale(pyramid: list[CurvatureEstimate],
                            alpha: float = DEFAULT_ALPHA) -> CurvatureEstimate:
    """Pyramid entry whose scale-to-radius ratio is closest to ``alpha``.

    Ties break toward the smaller scale; the result is independent of the
    order of the pyramid list.
    """
    if not pyramid:
        raise ValueError("pyramid must be non-empty")
    best = None
    best_key = None
    for est in sorted(pyramid, key=lambda e: e.scale):
        key = abs(est.scale / est.radius_of_curvature - alpha)
        if best_key is None or key < best_key:
            best, best_key = est, key
    return best


def default_pyramid(mask: BinaryMask) -> list[float]:
    """Observation scales proportional to the mask diagonal."""
    factor = math.hypot(mask.width, mask.height) / _BASE_DIAGONAL
    scales = []
    for s in BASE_PYRAMID:
        scaled = max(MIN_SCALE, s * factor)
        if not scales or scaled > scales[-1] + 1e-9:
            scales.append(scaled)
    return scales


def functional_estimate(edges: EdgePointSet, c: Point2, mask: BinaryMask,
                        scales: list[float] | None = None,
                        alpha: float = DEFAULT_ALPHA,
                        delta: float = DEFAULT_DELTA) -> CurvatureEstimate:
    """Two-pass estimates over the scale pyramid, then scale selection."""
    if scales is None:
        scales = default_pyramid(mask)
    pyramid: list[CurvatureEstimate] = []
    for s in scales:
        try:
            pyramid.append(two_pass_estimate(edges, c, s, mask, delta))
        except (InsufficientSupport, DegenerateFit):
            continue
    if not pyramid:
        raise InsufficientSupport(f"no scale produced a valid estimate at ({c.x:g}, {c.y:g})")
    return motion_functional_scale(pyramid, alpha)


def refine_frame_normal(edges: EdgePointSet, estimate: CurvatureEstimate,
                        mask: BinaryMask,
                        delta: float = DEFAULT_DELTA) -> CurvatureEstimate:
    """Re-derive the normal at a window matched to the local radius.

    The functional observation scale often spans far beyond the osculating
    circle, where asymmetric far structure tilts the tangent axis by a few
    degrees.  Contact frames need the local surface normal, so it is redone
    at a window of about one radius; everything else (radius, sign, scale)
    stays from the wider estimate.
    """
    s_local = max(MIN_SCALE, min(1.2 * estimate.radius_of_curvature, estimate.scale))
    if abs(s_local - estimate.scale) < 1e-9:
        return estimate
    try:
        local = two_pass_estimate(edges, estimate.point, s_local, mask, delta)
    except (InsufficientSupport, DegenerateFit):
        return estimate
    if local.sign != estimate.sign or float(local.normal @ estimate.normal) < 0.5:
        return estimate
    from dataclasses import replace
    return replace(estimate, normal=local.normal, tangent=local.tangent)


def refine_convexity(mask: BinaryMask, edges: EdgePointSet, candidate: Point2,
                     required_sign: Convexity, scale: float,
                     delta: float = DEFAULT_DELTA) -> Point2:
    """Nearest edge point within ``scale`` of the candidate whose filtered
    sign at that scale equals ``required_sign``.

    The candidate itself (snapped to the boundary) is tested first and
    returned unchanged when it already satisfies the sign.
    """
    region = edges.within(candidate, scale)
    if region.shape[0] == 0:
        region = edges.nearest(candidate).as_array().reshape(1, 2)
    d2 = (region[:, 0] - candidate.x) ** 2 + (region[:, 1] - candidate.y) ** 2
    order = np.lexsort((region[:, 0], region[:, 1], d2))
    for idx in order:
        p = Point2(float(region[idx, 0]), float(region[idx, 1]))
        try:
            est = two_pass_estimate(edges, p, scale, mask, delta)
        except (InsufficientSupport, DegenerateFit):
            continue
        if est.sign == required_sign:
            return p
    raise NoMatchingConvexity(
        f"no {required_sign.value} point within {scale:g} px of ({candidate.x:g}, {candidate.y:g})")


def local_score(ref: ContactPair, tgt: ContactPair) -> float:
    """Absolute difference of tool-to-object radius ratios (dimensionless)."""
    ratio_ref = ref.tool_point.radius_of_curvature / ref.object_point.radius_of_curvature
    ratio_tgt = tgt.tool_point.radius_of_curvature / tgt.object_point.radius_of_curvature
    return abs(ratio_ref - ratio_tgt)
