"""End-to-end two-stage contact matching: global feature proposals on the
tool, curvature-based refinement, object-side candidate scanning, combined
ranking, and tool selection."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .curvature import (ContactPair, Convexity, CurvatureEstimate,
                        DEFAULT_ALPHA, DEFAULT_DELTA, default_pyramid,
                        functional_estimate, local_score, refine_convexity,
                        refine_frame_normal, signs_compatible, two_pass_estimate)
from .errors import (DegenerateFit, InsufficientSupport, NoCandidates,
                     NoMatchingConvexity)
from .features import (FallbackFeatureSource, FileFeatureSource, FeatureMap,
                       GlobalMatch, global_match, reference_feature_map)
from .geometry import BinaryMask, EdgePointSet, Point2, PoseVariant, extract_edges
from .motion import Trajectory2D

log = logging.getLogger(__name__)


@dataclass
class MatchConfig:
    """Tunables of the matching pipeline with their defaults."""

    lam: float = 0.5                 # weight of the curvature-ratio penalty
    k: int = 3                       # global top-k tool proposals
    m: int = 3                       # patch side for feature similarity
    alpha: float = DEFAULT_ALPHA     # scale-selection constant
    delta: float = DEFAULT_DELTA     # ray-cast seed offset, px
    pyramid: list[float] | None = None   # None: scaled with each mask
    max_sim_candidates: int = 5
    grid_n: int = 64
    pca_dim: int | None = 16
    nms_radius: float = 2.0
    object_stride: int = 4
    object_max: int = 16
    contact_gap_max: float = 3.0
    clearance_min: float = 0.0
    fallback_select: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda weight must be >= 0")
        for name in ("k", "m", "alpha", "delta", "max_sim_candidates",
                     "grid_n", "nms_radius", "object_stride", "object_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class ReferenceDemo:
    """One demonstration: masks, annotated contact points, and the tool
    trajectory.  ``feature_stem`` of None selects fallback descriptors."""

    tool_mask: BinaryMask
    object_mask: BinaryMask
    p_tool: Point2
    p_object: Point2
    trajectory: Trajectory2D
    feature_stem: str | None = None

    def __post_init__(self):
        for p, mask, what in ((self.p_tool, self.tool_mask, "tool"),
                              (self.p_object, self.object_mask, "object")):
            edge = extract_edges(mask).nearest(p)
            if edge.distance_to(p) > 1.0:
                raise ValueError(f"annotated {what} point ({p.x:g}, {p.y:g}) "
                                 f"is {edge.distance_to(p):.2f} px from the boundary")
        if len(self.trajectory) == 0:
            raise ValueError("trajectory must be non-empty")


@dataclass
class MatchCandidate:
    """A scored contact-point pair proposal."""

    p_tool: Point2
    p_object: Point2
    variant: PoseVariant
    s_dino: float
    s_curv: float
    combined: float
    tool_estimate: CurvatureEstimate
    object_estimate: CurvatureEstimate
    feasibility: float = 0.0   # static insertion margin of the mating object, px


def compute_reference_estimates(demo: ReferenceDemo, config: MatchConfig
                                ) -> tuple[CurvatureEstimate, CurvatureEstimate]:
    """Functional-scale estimates at the annotated reference contact points."""
    tool_edges = extract_edges(demo.tool_mask)
    object_edges = extract_edges(demo.object_mask)
    tool_est = functional_estimate(tool_edges, tool_edges.nearest(demo.p_tool),
                                   demo.tool_mask, config.pyramid,
                                   config.alpha, config.delta)
    tool_est = refine_frame_normal(tool_edges, tool_est, demo.tool_mask,
                                   config.delta)
    object_est = functional_estimate(object_edges,
                                     object_edges.nearest(demo.p_object),
                                     demo.object_mask, config.pyramid,
                                     config.alpha, config.delta)
    return tool_est, object_est


def propose_object_point(object_mask: BinaryMask,
                         ref_object_estimate: CurvatureEstimate,
                         config: MatchConfig
                         ) -> list[tuple[Point2, CurvatureEstimate]]:
    """Scan the target object boundary for sign-compatible contact points.

    Every ``object_stride``-th edge point is estimated at its functional
    scale; points whose sign matches the reference's are ranked by how close
    their radius of curvature is to the reference's, ascending.
    """
    edges = extract_edges(object_mask)
    ref_r = ref_object_estimate.radius_of_curvature
    scored: list[tuple[float, float, float, Point2, CurvatureEstimate]] = []
    for i in range(0, edges.count, config.object_stride):
        p = Point2(float(edges.points[i, 0]), float(edges.points[i, 1]))
        try:
            est = functional_estimate(edges, p, object_mask, config.pyramid,
                                      config.alpha, config.delta)
        except (InsufficientSupport, DegenerateFit):
            continue
        if est.sign != ref_object_estimate.sign:
            continue
        scored.append((abs(est.radius_of_curvature - ref_r), p.y, p.x, p, est))
    if not scored:
        raise NoCandidates("no sign-compatible object point")
    scored.sort(key=lambda t: (t[0], t[1], t[2]))
    return [(p, est) for _, _, _, p, est in scored[:config.object_max]]


def _feature_source(mask: BinaryMask, stem: str | None, config: MatchConfig):
    if stem is None:
        return FallbackFeatureSource(mask, config.grid_n)
    return FileFeatureSource(stem)


SEGMENT_REACH = 2.2      # times the observation scale: recentering region
FULL_TURN = 5.5          # rad; angular spans beyond this count as closed


def _segment_geometry(edges: EdgePointSet, seed: Point2,
                      seed_est: CurvatureEstimate, required_sign: Convexity,
                      mask: BinaryMask, config: MatchConfig):
    """Sign-consistent boundary stretch around a point, parametrized by
    cumulative arc length.

    The fitted osculating center only orders the points by winding angle;
    positions along the stretch are chord-length sums, which stay correct
    even when the fitted radius is biased.  Returns (positions, points,
    seed_position, total_length), or None when the stretch closes on itself
    (featureless loops such as a disk boundary, where any position is
    equivalent).
    """
    scale = seed_est.scale
    r = min(seed_est.radius_of_curvature, 4.0 * scale)
    center = seed.as_array() + seed_est.center_direction * r
    # The reach must cover the whole stretch even when the seed sits near
    # one end; a circular stretch of radius r spans about 3.5*r of arc.
    reach = max(SEGMENT_REACH * scale, 2.2 * r)
    region = edges.within(seed, reach)
    theta_seed = math.atan2(seed.y - center[1], seed.x - center[0])

    thetas, points = [0.0], [seed]
    order = np.lexsort((region[:, 0], region[:, 1]))
    for idx in order[::2]:
        p = Point2(float(region[idx, 0]), float(region[idx, 1]))
        if p.distance_to(seed) < 0.5:
            continue
        try:
            est = two_pass_estimate(edges, p, scale, mask, config.delta)
        except (InsufficientSupport, DegenerateFit):
            continue
        if est.sign != required_sign:
            continue
        # Radius gate: corners where another edge joins read as very sharp
        # concavities and would let the stretch bleed around the junction.
        ratio = est.radius_of_curvature / max(seed_est.radius_of_curvature, 1e-9)
        if not (0.25 <= ratio <= 4.0):
            continue
        theta = math.atan2(p.y - center[1], p.x - center[0]) - theta_seed
        thetas.append(math.atan2(math.sin(theta), math.cos(theta)))
        points.append(p)
    if len(points) < 3:
        return None
    thetas = np.asarray(thetas)
    if thetas.max() - thetas.min() > FULL_TURN:
        return None
    order = np.argsort(thetas, kind="stable")
    pts = np.array([[p.x, p.y] for p in points])[order]
    seed_idx = int(np.nonzero(order == 0)[0][0])
    steps = np.sqrt(((pts[1:] - pts[:-1]) ** 2).sum(axis=1))
    # Keep only the contiguous run containing the seed: the region can pick
    # up sign-compatible points of entirely different boundary stretches,
    # which would corrupt the arc-length parametrization.
    breaks = np.nonzero(steps > 4.0)[0]
    lo, hi = 0, len(pts) - 1
    for b in breaks:
        if b < seed_idx:
            lo = max(lo, b + 1)
        else:
            hi = min(hi, b)
    pts = pts[lo:hi + 1]
    if pts.shape[0] < 3:
        return None
    seed_idx -= lo
    steps = np.sqrt(((pts[1:] - pts[:-1]) ** 2).sum(axis=1))
    positions = np.concatenate([[0.0], np.cumsum(steps)])
    ordered_points = [Point2(float(x), float(y)) for x, y in pts]
    return (positions, ordered_points, float(positions[seed_idx]),
            float(positions[-1]), center)


CLOSE_RADIUS = 40.0   # px; morphological closing radius for cavity detection
OVERLAP_TOLERANCE = 15  # px^2 of insertion-probe overlap written off as raster noise


def _cavity_depth_field(mask: BinaryMask) -> np.ndarray:
    """Geodesic depth of every background pixel inside cavities.

    The mask is morphologically closed; background left inside the closure
    is cavity space.  Depth is the step distance through background to the
    open exterior, so it grows monotonically toward the deepest pocket of a
    concavity and is immune to boundary raster noise.  Cached per mask.
    """
    cached = getattr(mask, "_cavity_depth", None)
    if cached is not None:
        return cached
    from scipy import ndimage
    from skimage.graph import MCP_Geometric
    bg = ~mask.cells
    dist_bg = ndimage.distance_transform_edt(bg)
    dilated = dist_bg <= CLOSE_RADIUS
    inner = ndimage.distance_transform_edt(dilated)
    closed = (inner > CLOSE_RADIUS) | mask.cells
    exterior = bg & ~closed
    costs = np.where(bg, 1.0, np.inf)
    depth = np.zeros(mask.cells.shape, dtype=np.float64)
    if exterior.any():
        mcp = MCP_Geometric(costs)
        seeds = np.argwhere(exterior)
        dist, _ = mcp.find_costs(seeds)
        reachable = np.isfinite(dist) & bg
        depth[reachable] = dist[reachable]
        far = (dist[reachable].max() + 1.0) if reachable.any() else 1.0
        depth[bg & ~reachable] = far  # fully enclosed pockets
    mask._cavity_depth = depth
    return depth


def _depth_at(mask: BinaryMask, p: Point2, toward_cavity: np.ndarray) -> float:
    """Cavity depth just off the boundary point on its open side."""
    field = _cavity_depth_field(mask)
    for step in (2.0, 3.0, 1.0):
        x = int(round(p.x + toward_cavity[0] * step))
        y = int(round(p.y + toward_cavity[1] * step))
        if 0 <= x < mask.width and 0 <= y < mask.height and not mask.cells[y, x]:
            return float(field[y, x])
    return 0.0


def _disk_occupancy(mask: BinaryMask, p: Point2, radius: float) -> int:
    r = int(math.ceil(radius))
    x0, x1 = max(0, int(p.x) - r), min(mask.width, int(p.x) + r + 1)
    y0, y1 = max(0, int(p.y) - r), min(mask.height, int(p.y) + r + 1)
    if x0 >= x1 or y0 >= y1:
        return 0
    ys, xs = np.mgrid[y0:y1, x0:x1]
    inside = (xs - p.x) ** 2 + (ys - p.y) ** 2 <= radius * radius
    return int((mask.cells[y0:y1, x0:x1] & inside).sum())


@dataclass
class SegmentLandmark:
    """Intrinsic coordinates of a contact point within its boundary stretch:
    arc-length fraction plus normalized cavity depth."""

    fraction: float
    depth_fraction: float


def _segment_depths(mask: BinaryMask, points: list[Point2],
                    center: np.ndarray) -> np.ndarray:
    out = np.zeros(len(points))
    for i, p in enumerate(points):
        d = center - p.as_array()
        norm = np.linalg.norm(d)
        if norm < 1e-9:
            continue
        out[i] = _depth_at(mask, p, d / norm)
    return out


def segment_landmark(edges: EdgePointSet, point: Point2,
                     estimate: CurvatureEstimate, mask: BinaryMask,
                     config: MatchConfig) -> SegmentLandmark | None:
    """Intrinsic position of ``point`` along its sign-consistent boundary
    stretch; None when the stretch is closed/featureless."""
    geo = _segment_geometry(edges, point, estimate, estimate.sign, mask, config)
    if geo is None:
        return None
    positions, points, seed_pos, total, center = geo
    if total < 1e-9:
        return SegmentLandmark(fraction=0.5, depth_fraction=1.0)
    depths = _segment_depths(mask, points, center)
    d_max = depths.max()
    # the landmark's own depth, sampled exactly like the segment points
    seed_idx = int(np.argmin(np.abs(positions - seed_pos)))
    depth_fraction = depths[seed_idx] / d_max if d_max > 0 else 1.0
    return SegmentLandmark(fraction=seed_pos / total,
                           depth_fraction=min(depth_fraction, 1.0))


def _free_distance_field(mask: BinaryMask) -> np.ndarray:
    """Distance of every pixel to the nearest foreground pixel (cached)."""
    cached = getattr(mask, "_free_distance", None)
    if cached is None:
        from scipy import ndimage
        cached = ndimage.distance_transform_edt(~mask.cells)
        mask._free_distance = cached
    return cached


def _insertion_margin(mask: BinaryMask, p: Point2, direction: np.ndarray,
                      probe_radius: float, gap: float = 2.5) -> float:
    """Worst clearance of a mating disk backing off along ``direction``.

    The disk starts nested against the contact point and retreats out of the
    concavity; the returned margin is the minimum distance between its rim
    and the material along the way.  The best contact point maximizes it.
    """
    field = _free_distance_field(mask)
    h, w = field.shape
    margin = math.inf
    for t in (0.0, 4.0, 9.0, 15.0, 22.0, 30.0):
        cx = p.x + direction[0] * (probe_radius + gap + t)
        cy = p.y + direction[1] * (probe_radius + gap + t)
        xi, yi = int(round(cx)), int(round(cy))
        if not (0 <= xi < w and 0 <= yi < h):
            continue  # off-canvas is open space
        margin = min(margin, float(field[yi, xi]) - probe_radius)
    return margin if math.isfinite(margin) else probe_radius


def _insertion_overlap(mask: BinaryMask, p: Point2, normal: np.ndarray,
                       probe_radius: float, gap: float = 2.5) -> int:
    """Static feasibility probe: overlap of a mating disk swept a short way
    out along the contact normal.

    The mating object must be able to sit at the contact point and back off
    without passing through material; candidate positions whose probe stays
    clear are exactly those the trajectory verifier can accept.
    """
    total = 0
    for t in (0.0, 3.0, 7.0, 12.0, 18.0):
        cx = p.x + normal[0] * (probe_radius + gap + t)
        cy = p.y + normal[1] * (probe_radius + gap + t)
        r = probe_radius - 1.0
        x0, x1 = int(max(0, cx - r)), int(min(mask.width, cx + r + 1))
        y0, y1 = int(max(0, cy - r)), int(min(mask.height, cy + r + 1))
        if x0 >= x1 or y0 >= y1:
            continue
        ys, xs = np.mgrid[y0:y1, x0:x1]
        inside = (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
        total += int((mask.cells[y0:y1, x0:x1] & inside).sum())
    return total


def _refine_tool_candidate(g: GlobalMatch, edges: EdgePointSet,
                           tool_mask: BinaryMask, ref_estimate: CurvatureEstimate,
                           ref_landmark: SegmentLandmark | None,
                           probe_radius: float | None,
                           config: MatchConfig) -> list[tuple[CurvatureEstimate, float]]:
    """Curvature pipeline for one global proposal; empty when it drops out.

    The proposal is snapped to the boundary and forced to the reference
    sign.  When the local sign-consistent stretch is open, two further
    hypotheses are added: the point matching the reference's normalized
    cavity depth (the robust landmark of a concave pocket) and the points
    matching its arc-length fraction in either orientation.  Feature scores
    are nearly uniform along such stretches, so the set is finally ordered
    by a static insertion probe of the mating object; verification
    arbitrates the survivors.
    """
    required_sign = ref_estimate.sign
    anchor = edges.nearest(g.point)
    positions_out: list[Point2] = []
    try:
        prelim = functional_estimate(edges, anchor, tool_mask, config.pyramid,
                                     config.alpha, config.delta)
        seed = refine_convexity(tool_mask, edges, anchor, required_sign,
                                prelim.scale, config.delta)
        positions_out.append(seed)
    except (InsufficientSupport, DegenerateFit, NoMatchingConvexity):
        return []

    if ref_landmark is not None:
        try:
            seed_est = two_pass_estimate(edges, seed, ref_estimate.scale,
                                         tool_mask, config.delta)
            geo = None
            if seed_est.sign == required_sign:
                geo = _segment_geometry(edges, seed, seed_est, required_sign,
                                        tool_mask, config)
            if geo is not None:
                positions, points, _, total, center = geo
                hypotheses: list[Point2] = []
                if probe_radius is not None:
                    # the point where the mating object nests with the most
                    # clearance along its escape path
                    margins = np.empty(len(points))
                    for i, p in enumerate(points):
                        d = center - p.as_array()
                        d = d / max(np.linalg.norm(d), 1e-9)
                        margins[i] = _insertion_margin(tool_mask, p, d,
                                                       probe_radius)
                    hypotheses.append(points[int(np.argmax(margins))])
                depths = _segment_depths(tool_mask, points, center)
                if depths.max() > 0:
                    target_d = ref_landmark.depth_fraction * depths.max()
                    order = np.lexsort((-depths, np.abs(depths - target_d)))
                    hypotheses.append(points[int(order[0])])
                # a ladder around the reference's arc-length fraction, in
                # both orientations: one rung lands on the true analog even
                # when every individual cue is a few pixels off
                targets: list[float] = []
                for frac in sorted({ref_landmark.fraction,
                                    1.0 - ref_landmark.fraction}):
                    base = frac * total
                    for off in (0.0, -4.0, 4.0, -8.0, 8.0, -12.0, 12.0):
                        targets.append(base + off)
                for target in targets:
                    hypotheses.append(points[int(np.argmin(np.abs(positions - target)))])
                for p in hypotheses:
                    if all(p.distance_to(q) > 2.0 for q in positions_out):
                        positions_out.append(p)
        except (InsufficientSupport, DegenerateFit):
            pass

    scored: list[tuple[int, float, int, CurvatureEstimate]] = []
    for i, p in enumerate(positions_out):
        try:
            est = functional_estimate(edges, p, tool_mask, config.pyramid,
                                      config.alpha, config.delta)
        except (InsufficientSupport, DegenerateFit):
            continue
        if est.sign != required_sign:
            continue
        est = refine_frame_normal(edges, est, tool_mask, config.delta)
        overlap, margin = 0, 0.0
        if probe_radius is not None:
            overlap = _insertion_overlap(tool_mask, est.point, est.normal,
                                         probe_radius)
            margin = _insertion_margin(tool_mask, est.point, est.normal,
                                       probe_radius)
        scored.append((overlap, -margin, i, est))
    scored.sort(key=lambda t: (t[0], t[1], t[2]))
    # A contact whose mating disk cannot even statically occupy its spot can
    # never verify; keep such candidates only if nothing else survived.
    clean = [s for s in scored if s[0] <= OVERLAP_TOLERANCE]
    pool = clean if clean else scored
    return [(est, -neg_margin) for _, neg_margin, _, est in pool[:4]]


def match_contact(demo: ReferenceDemo, tool_mask: BinaryMask,
                  object_mask: BinaryMask, config: MatchConfig | None = None, *,
                  target_stem: str | None = None,
                  ref_estimates: tuple[CurvatureEstimate, CurvatureEstimate] | None = None,
                  score_sink: dict | None = None) -> list[MatchCandidate]:
    """Ranked contact-pair candidates for a target tool/object pair.

    Global feature matching proposes tool points across the 24 pose
    variants; each is refined by the curvature pipeline and forced to the
    reference tool's sign.  Object-side candidates come from curvature
    scanning alone.  Pairs score combined = s_dino - lambda * s_curv and are
    ranked descending, ties by (s_dino desc, row, col).
    """
    if config is None:
        config = MatchConfig()
    if ref_estimates is None:
        ref_estimates = compute_reference_estimates(demo, config)
    ref_tool_est, ref_object_est = ref_estimates
    ref_pair = ContactPair(ref_tool_est, ref_object_est)

    f_ref = reference_feature_map(demo.tool_mask, config.grid_n, stem=demo.feature_stem)
    source = _feature_source(tool_mask, target_stem, config)
    proposals = global_match(f_ref, tool_mask, demo.p_tool, config.k, config.m,
                             source, ref_mask=demo.tool_mask,
                             pca_dim=config.pca_dim, nms_radius=config.nms_radius,
                             score_sink=score_sink)

    ref_edges = extract_edges(demo.tool_mask)
    ref_landmark = segment_landmark(ref_edges, ref_tool_est.point, ref_tool_est,
                                    demo.tool_mask, config)

    object_candidates = propose_object_point(object_mask, ref_object_est, config)
    probe_radius = object_candidates[0][1].radius_of_curvature
    probe_radius = min(probe_radius, 40.0)

    tool_edges = extract_edges(tool_mask)
    tool_candidates: list[tuple[GlobalMatch, CurvatureEstimate, float]] = []
    seen_points: set[tuple[float, float, bool]] = set()
    for g in proposals:
        ests = _refine_tool_candidate(g, tool_edges, tool_mask,
                                      ref_tool_est, ref_landmark, probe_radius,
                                      config)
        if not ests:
            log.debug("dropped global proposal at (%.1f, %.1f)", g.point.x, g.point.y)
        for est, margin in ests:
            key = (est.point.x, est.point.y, g.variant.reflect)
            if key not in seen_points:
                seen_points.add(key)
                tool_candidates.append((g, est, margin))
    if not tool_candidates:
        raise NoCandidates("every global proposal failed curvature refinement")

    candidates: list[MatchCandidate] = []
    for g, tool_est, margin in tool_candidates:
        for obj_point, obj_est in object_candidates:
            if not signs_compatible(tool_est.sign, obj_est.sign):
                continue
            s_curv = local_score(ref_pair, ContactPair(tool_est, obj_est))
            combined = g.s_dino - config.lam * s_curv
            candidates.append(MatchCandidate(
                p_tool=tool_est.point, p_object=obj_point, variant=g.variant,
                s_dino=g.s_dino, s_curv=s_curv, combined=combined,
                tool_estimate=tool_est, object_estimate=obj_est,
                feasibility=margin))
    if not candidates:
        raise NoCandidates("no sign-compatible tool/object pair")

    candidates.sort(key=lambda c: (-c.combined, -c.s_dino, c.p_tool.y, c.p_tool.x,
                                   c.p_object.y, c.p_object.x))
    return candidates


@dataclass
class ToolSelection:
    index: int
    candidate: MatchCandidate
    candidates: list[MatchCandidate]


def select_tool(demo: ReferenceDemo, tools: list[tuple[BinaryMask, str | None]],
                object_mask: BinaryMask, config: MatchConfig | None = None
                ) -> ToolSelection:
    """Pick the tool whose best candidate has the highest combined score.

    Ties go to the lowest tool index; tools with no viable candidate are
    skipped.
    """
    if not tools:
        raise NoCandidates("empty tool list")
    if config is None:
        config = MatchConfig()
    ref_estimates = compute_reference_estimates(demo, config)
    best: ToolSelection | None = None
    for index, (mask, stem) in enumerate(tools):
        try:
            ranked = match_contact(demo, mask, object_mask, config,
                                   target_stem=stem, ref_estimates=ref_estimates)
        except NoCandidates:
            continue
        if best is None or ranked[0].combined > best.candidate.combined:
            best = ToolSelection(index=index, candidate=ranked[0], candidates=ranked)
    if best is None:
        raise NoCandidates("no tool produced a viable candidate")
    return best
