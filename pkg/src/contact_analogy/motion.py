"""Contact frames, trajectory retargeting, waypoint transfer, and
quasi-static geometric verification of swept tool motion.

A trajectory pose maps the tool from its canonical (mask) placement to its
placement at time t, in world coordinates; the first pose of a demonstration
is typically the identity.  Retargeting conjugates every pose by the rigid
alignment between two contact frames, so relative motion is preserved and
the swept contact-point path of the target is congruent to the reference's.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import NoVerifiedCandidate
from .geometry import BinaryMask, Point2, Similarity2, extract_edges, round_half_up

MAX_SUBDIVISION_DEPTH = 12
FEASIBILITY_BIN = 3.0  # px; margin granularity for verification ordering


@dataclass(frozen=True)
class ContactFrame:
    """Local frame at a contact point: x along the boundary tangent, y along
    the outward normal.  handedness -1 marks frames from reflected matches."""

    origin: Point2
    x_axis: np.ndarray
    y_axis: np.ndarray
    handedness: int = 1

    def __post_init__(self):
        for v in (self.x_axis, self.y_axis):
            if abs(np.linalg.norm(v) - 1.0) > 1e-9:
                raise ValueError("frame axes must be unit vectors")
        if abs(float(self.x_axis @ self.y_axis)) > 1e-9:
            raise ValueError("frame axes must be orthogonal")
        if self.handedness not in (-1, 1):
            raise ValueError("handedness must be +1 or -1")

    def to_world(self) -> Similarity2:
        """Similarity mapping frame-local coordinates into the world."""
        h = float(self.handedness)
        linear = np.array([[self.x_axis[0] * h, self.y_axis[0]],
                           [self.x_axis[1] * h, self.y_axis[1]]])
        return _similarity_from_linear(linear, self.origin.as_array())


def _similarity_from_linear(linear: np.ndarray, translation: np.ndarray) -> Similarity2:
    det = float(linear[0, 0] * linear[1, 1] - linear[0, 1] * linear[1, 0])
    if abs(det) < 1e-12:
        raise ValueError("degenerate linear part")
    reflect = det < 0
    scale = math.sqrt(abs(det))
    if reflect:
        rotation = math.atan2(-linear[1, 0], -linear[0, 0])
    else:
        rotation = math.atan2(linear[1, 0], linear[0, 0])
    return Similarity2(rotation=rotation, reflect=reflect, scale=scale,
                       translation=(float(translation[0]), float(translation[1])))


def build_frame(estimate, handedness: int = 1) -> ContactFrame:
    """Frame at a curvature estimate: y = outward normal, x = normal rotated
    by -90 degrees."""
    normal = np.asarray(estimate.normal, dtype=np.float64)
    normal = normal / np.linalg.norm(normal)
    x_axis = np.array([normal[1], -normal[0]])
    return ContactFrame(origin=estimate.point, x_axis=x_axis, y_axis=normal,
                        handedness=handedness)


def align_frames(ref: ContactFrame, tgt: ContactFrame) -> Similarity2:
    """Rigid map carrying the reference frame onto the target frame."""
    return tgt.to_world().compose(ref.to_world().inverse())


@dataclass
class Trajectory2D:
    """Timestamped rigid poses of the tool, with an optional contact phase
    given as an inclusive (start, end) pose index range."""

    times: np.ndarray
    poses: list[Similarity2]
    contact_phase: tuple[int, int] | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.times.size == 0 or len(self.poses) != self.times.size:
            raise ValueError("trajectory must pair every time with a pose")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        fixed = []
        for p in self.poses:
            if abs(p.scale - 1.0) > 1e-9 or p.reflect:
                raise ValueError("trajectory poses must be rigid (scale 1, no reflection)")
            fixed.append(Similarity2(rotation=p.rotation, translation=p.translation))
        self.poses = fixed
        if self.contact_phase is not None:
            i0, i1 = self.contact_phase
            if not (0 <= i0 <= i1 < len(self.poses)):
                raise ValueError(f"contact phase {self.contact_phase} out of range")

    def __len__(self) -> int:
        return len(self.poses)


def retarget_trajectory(ref_traj: Trajectory2D, ref_frame: ContactFrame,
                        tgt_frame: ContactFrame) -> Trajectory2D:
    """Conjugate every pose by the frame alignment: Q = A o P o A^-1.

    The conjugated poses are rigid regardless of the alignment's handedness,
    and timestamps carry over unchanged.
    """
    align = align_frames(ref_frame, tgt_frame)
    align_inv = align.inverse()
    poses = []
    for p in ref_traj.poses:
        q = align.compose(p).compose(align_inv)
        poses.append(Similarity2(rotation=q.rotation, translation=q.translation))
    return Trajectory2D(times=ref_traj.times.copy(), poses=poses,
                        contact_phase=ref_traj.contact_phase)


def transform_waypoints(waypoints: np.ndarray, directions: np.ndarray | None,
                        ref_frame: ContactFrame, tgt_frame: ContactFrame,
                        scale: float = 1.0) -> tuple[np.ndarray, np.ndarray | None]:
    """Carry waypoint positions and unit force directions through the frame
    alignment.

    A size ratio between the objects scales positions about the target
    contact origin but never touches the directions, which stay unit.
    """
    align = align_frames(ref_frame, tgt_frame)
    pts = align.apply(np.asarray(waypoints, dtype=np.float64).reshape(-1, 2))
    if scale != 1.0:
        origin = tgt_frame.origin.as_array()
        pts = origin + scale * (pts - origin)
    dirs = None
    if directions is not None:
        dirs = np.asarray(directions, dtype=np.float64).reshape(-1, 2) @ align.linear().T
        norms = np.linalg.norm(dirs, axis=1, keepdims=True)
        dirs = dirs / norms
    return pts, dirs


@dataclass
class Violation:
    pose_index: int
    kind: str                # "collision" or "contact_loss"
    location: Point2


@dataclass
class VerificationReport:
    passed: bool
    first_violation: Violation | None
    min_clearance: float
    max_contact_gap: float

    def to_dict(self) -> dict:
        out = {"passed": self.passed, "min_clearance": self.min_clearance,
               "max_contact_gap": self.max_contact_gap, "first_violation": None}
        if self.first_violation is not None:
            v = self.first_violation
            out["first_violation"] = {"pose_index": v.pose_index, "type": v.kind,
                                      "location": [v.location.x, v.location.y]}
        return out


def _interpolate(p0: Similarity2, p1: Similarity2, f: float) -> Similarity2:
    d = p1.rotation - p0.rotation
    d = math.atan2(math.sin(d), math.cos(d))
    t0, t1 = np.asarray(p0.translation), np.asarray(p1.translation)
    t = t0 + f * (t1 - t0)
    return Similarity2(rotation=p0.rotation + f * d,
                       translation=(float(t[0]), float(t[1])))


def _sample_poses(traj: Trajectory2D, corners: np.ndarray,
                  step_limit: float) -> list[tuple[float, Similarity2]]:
    """Pose samples with midpoints inserted until successive tool
    displacements (bounded via the tool bounding-box corners) are small."""
    samples: list[tuple[float, Similarity2]] = [(0.0, traj.poses[0])]
    for i in range(len(traj.poses) - 1):
        segment = [(float(i), traj.poses[i]), (float(i + 1), traj.poses[i + 1])]
        depth = 0
        while depth < MAX_SUBDIVISION_DEPTH:
            refined: list[tuple[float, Similarity2]] = [segment[0]]
            split = False
            for (ua, pa), (ub, pb) in zip(segment, segment[1:]):
                disp = np.linalg.norm(pa.apply(corners) - pb.apply(corners), axis=1).max()
                if disp > step_limit:
                    um = 0.5 * (ua + ub)
                    refined.append((um, _interpolate(traj.poses[i], traj.poses[i + 1],
                                                     um - i)))
                    split = True
                refined.append((ub, pb))
            segment = refined
            if not split:
                break
            depth += 1
        samples.extend(segment[1:])
    return samples


def verify_trajectory(tool_mask: BinaryMask, object_mask: BinaryMask,
                      static_masks: list[BinaryMask], traj: Trajectory2D,
                      contact_pair: tuple[Point2, Point2], *,
                      clearance_min: float = 0.0, contact_gap_max: float = 3.0,
                      step_limit: float = 1.0) -> VerificationReport:
    """Sweep the tool through the trajectory and check it geometrically.

    At every (subdivided) pose the transformed tool must not overlap the
    object or any static obstacle; during the contact phase the transformed
    tool contact point must stay within ``contact_gap_max`` of the object's
    boundary.  Failures are reported, not raised; the report carries the
    first violation and the extremal margins seen up to that point.
    """
    p_tool, p_obj = contact_pair
    occupancy = object_mask.cells.copy()
    for sm in static_masks:
        if sm.cells.shape != occupancy.shape:
            raise ValueError("all scene masks must share one canvas")
        occupancy |= sm.cells
    h, w = occupancy.shape
    clearance_field = ndimage.distance_transform_edt(~occupancy)
    object_edges = extract_edges(object_mask).points

    tool_pts = tool_mask.foreground_points()
    x0, y0, x1, y1 = tool_mask.bounding_box()
    corners = np.array([[x0, y0], [x1, y0], [x0, y1], [x1, y1]], dtype=np.float64)

    phase = traj.contact_phase
    min_clearance = math.inf
    max_gap = 0.0
    first: Violation | None = None

    for u, pose in _sample_poses(traj, corners, step_limit):
        placed = pose.apply(tool_pts)
        px = round_half_up(placed[:, 0])
        py = round_half_up(placed[:, 1])
        inside = (px >= 0) & (px < w) & (py >= 0) & (py < h)
        if inside.any():
            clear = clearance_field[py[inside], px[inside]]
            min_clearance = min(min_clearance, float(clear.min()))
            collided = clear <= clearance_min
            if collided.any():
                where = placed[inside][collided]
                loc = where.mean(axis=0)
                first = Violation(pose_index=int(math.floor(u)), kind="collision",
                                  location=Point2(float(loc[0]), float(loc[1])))
                break
        if phase is not None and phase[0] - 1e-9 <= u <= phase[1] + 1e-9:
            cp = pose.apply(p_tool.as_array())
            gap = float(np.sqrt(((object_edges - cp) ** 2).sum(axis=1).min()))
            max_gap = max(max_gap, gap)
            if gap > contact_gap_max:
                first = Violation(pose_index=int(math.floor(u)), kind="contact_loss",
                                  location=Point2(float(cp[0]), float(cp[1])))
                break

    if not math.isfinite(min_clearance):
        min_clearance = float(max(h, w))
    return VerificationReport(passed=first is None, first_violation=first,
                              min_clearance=min_clearance, max_contact_gap=max_gap)


@dataclass
class VerificationScene:
    """Target-side geometry the verifier sweeps against."""

    tool_mask: BinaryMask
    object_mask: BinaryMask
    static_masks: list[BinaryMask] = field(default_factory=list)


@dataclass
class RankResult:
    candidate: object            # MatchCandidate
    trajectory: Trajectory2D
    report: VerificationReport
    runs: int
    verified: bool
    rank: int


def _coarse_reject(scene: VerificationScene, traj: Trajectory2D,
                   contact_pair, contact_gap_max: float) -> bool:
    """Provably-failing pre-check on the raw (unsubdivided) poses.

    The full verifier evaluates a superset of these poses with the same
    collision and contact rules, so any candidate rejected here would fail
    it too; skipping saves a dispatch without ever skipping a passer.  Only
    clear penetration (beyond raster noise) counts, since the full collision
    rule is stricter.
    """
    from .curvature import _interior_depth

    occ = scene.object_mask.cells
    for sm in scene.static_masks:
        occ = occ | sm.cells
    combined = BinaryMask(occ)
    depth = _interior_depth(combined)
    h, w = depth.shape
    boundary = getattr(scene.tool_mask, "_boundary_pts", None)
    if boundary is None:
        boundary = extract_edges(scene.tool_mask).points
        scene.tool_mask._boundary_pts = boundary
    edges_obj = getattr(scene.object_mask, "_edge_pts", None)
    if edges_obj is None:
        edges_obj = extract_edges(scene.object_mask).points
        scene.object_mask._edge_pts = edges_obj

    p_tool, _ = contact_pair
    phase = traj.contact_phase
    for i, pose in enumerate(traj.poses):
        placed = pose.apply(boundary)
        px = np.clip(round_half_up(placed[:, 0]), 0, w - 1)
        py = np.clip(round_half_up(placed[:, 1]), 0, h - 1)
        if depth[py, px].max() > 2.0:
            return True
        if phase is not None and phase[0] <= i <= phase[1]:
            cp = pose.apply(p_tool.as_array())
            gap = float(np.sqrt(((edges_obj - cp) ** 2).sum(axis=1).min()))
            if gap > contact_gap_max:
                return True
    return False


def rank_and_verify(candidates: list, ref_frame: ContactFrame,
                    ref_traj: Trajectory2D, scene: VerificationScene, *,
                    max_sim_candidates: int = 5, fallback: bool = True,
                    clearance_min: float = 0.0, contact_gap_max: float = 3.0,
                    verify_fn=None) -> RankResult:
    """Retarget and verify ranked candidates; return the first that passes.

    When none of the top ``max_sim_candidates`` passes and ``fallback`` is
    enabled, the top-ranked candidate is returned flagged unverified.
    """
    external_verify = verify_fn is not None
    if verify_fn is None:
        verify_fn = verify_trajectory
    if not candidates:
        raise NoVerifiedCandidate("no candidates to verify")

    runs = 0
    tried: set[tuple] = set()
    fallback_result: RankResult | None = None
    rejected: RankResult | None = None
    # Verification order favors statically feasible contacts, coarsely
    # binned so the combined-score ranking decides among similar margins;
    # the reported rank still refers to the combined-score ranking.
    order = sorted(range(len(candidates)),
                   key=lambda i: (-round(getattr(candidates[i], "feasibility", 0.0)
                                         / FEASIBILITY_BIN), i))
    for rank in order:
        cand = candidates[rank]
        if runs >= max_sim_candidates:
            break
        # The swept geometry depends only on the tool point and the frame
        # handedness; a pair that differs merely in its object point or in
        # the rotation bin it was found under would replay the exact same
        # trajectory, so it does not consume a run.
        key = (cand.p_tool.x, cand.p_tool.y, cand.variant.reflect)
        if key in tried:
            continue
        tried.add(key)
        handedness = -1 if cand.variant.reflect else 1
        tgt_frame = build_frame(cand.tool_estimate, handedness=handedness)
        traj = retarget_trajectory(ref_traj, ref_frame, tgt_frame)
        if not external_verify and _coarse_reject(scene, traj,
                                                  (cand.p_tool, cand.p_object),
                                                  contact_gap_max):
            if rejected is None:
                rejected = RankResult(
                    candidate=cand, trajectory=traj,
                    report=VerificationReport(passed=False, first_violation=None,
                                              min_clearance=0.0,
                                              max_contact_gap=0.0),
                    runs=0, verified=False, rank=rank)
            continue
        report = verify_fn(scene.tool_mask, scene.object_mask, scene.static_masks,
                           traj, (cand.p_tool, cand.p_object),
                           clearance_min=clearance_min,
                           contact_gap_max=contact_gap_max)
        runs += 1
        if report.passed:
            return RankResult(candidate=cand, trajectory=traj, report=report,
                              runs=runs, verified=True, rank=rank)
        if fallback_result is None:
            fallback_result = RankResult(candidate=cand, trajectory=traj,
                                         report=report, runs=runs,
                                         verified=False, rank=rank)
    if fallback_result is None:
        fallback_result = rejected
    if fallback and fallback_result is not None:
        fallback_result.runs = runs
        return fallback_result
    raise NoVerifiedCandidate(f"all {runs} verified candidates failed")
