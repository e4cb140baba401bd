"""Binary masks, boundary extraction, planar similarity transforms, and the
24-member pose family used by the global matcher.

Coordinate convention, used package-wide: a point is (x, y) with x running
along columns and y along rows, y increasing downward.  Mask arrays are
indexed [row, col] = [y, x] and pixel centers sit at integer coordinates.
Positive rotation angles are counterclockwise in mathematical (y-up) axes,
which renders as clockwise on screen.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import EmptyMask

MIN_MASK_SIDE = 8

# Neighbor preference for contour following: E, SE, S, SW, W, NW, N, NE.
_NEIGHBOR_ORDER = ((0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1))


def round_half_up(values: np.ndarray) -> np.ndarray:
    """Round with halves going up, uniformly (no banker's rounding)."""
    return np.floor(np.asarray(values, dtype=np.float64) + 0.5).astype(np.int64)


@dataclass(frozen=True)
class Point2:
    """Sub-pixel image location (x along columns, y along rows, y down)."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)

    def distance_to(self, other: "Point2") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


class BinaryMask:
    """Segmented 2D silhouette stored as a boolean [row, col] array."""

    def __init__(self, cells: np.ndarray):
        cells = np.asarray(cells, dtype=bool)
        if cells.ndim != 2:
            raise ValueError("mask must be 2D")
        h, w = cells.shape
        if w < MIN_MASK_SIDE or h < MIN_MASK_SIDE:
            raise ValueError(f"mask must be at least {MIN_MASK_SIDE}x{MIN_MASK_SIDE}, got {w}x{h}")
        if not cells.any():
            raise EmptyMask("mask has no foreground")
        self.cells = cells

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def foreground_count(self) -> int:
        return int(self.cells.sum())

    def is_foreground(self, p: Point2) -> bool:
        c, r = int(round(p.x)), int(round(p.y))
        if 0 <= r < self.height and 0 <= c < self.width:
            return bool(self.cells[r, c])
        return False

    def foreground_points(self) -> np.ndarray:
        """All foreground pixel coordinates as an (N, 2) array of (x, y)."""
        rows, cols = np.nonzero(self.cells)
        return np.stack([cols, rows], axis=1).astype(np.float64)

    def nearest_foreground(self, p: Point2) -> Point2:
        pts = self.foreground_points()
        d2 = (pts[:, 0] - p.x) ** 2 + (pts[:, 1] - p.y) ** 2
        i = int(np.argmin(d2))
        return Point2(float(pts[i, 0]), float(pts[i, 1]))

    def bounding_box(self) -> tuple[int, int, int, int]:
        """(x0, y0, x1, y1) inclusive bounds of the foreground."""
        rows, cols = np.nonzero(self.cells)
        return int(cols.min()), int(rows.min()), int(cols.max()), int(rows.max())

    def cropped(self) -> np.ndarray:
        x0, y0, x1, y1 = self.bounding_box()
        return self.cells[y0:y1 + 1, x0:x1 + 1]

    def __eq__(self, other) -> bool:
        return isinstance(other, BinaryMask) and np.array_equal(self.cells, other.cells)


@dataclass
class EdgePointSet:
    """Boundary pixels of a mask, ordered by contour-following.

    ``points`` is (N, 2) float (x, y); ``contour_ids[i]`` identifies which
    boundary component point i belongs to, and points of one component are
    stored consecutively in traversal order.
    """

    points: np.ndarray
    contour_ids: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if self.points.shape[0] == 0:
            raise ValueError("edge point set must be non-empty")
        if self.contour_ids is not None:
            self.contour_ids = np.asarray(self.contour_ids, dtype=np.int32)

    @property
    def count(self) -> int:
        return int(self.points.shape[0])

    def within(self, center: Point2, radius: float) -> np.ndarray:
        """Points with Euclidean distance <= radius of ``center``."""
        d2 = (self.points[:, 0] - center.x) ** 2 + (self.points[:, 1] - center.y) ** 2
        return self.points[d2 <= radius * radius]

    def nearest(self, p: Point2) -> Point2:
        d2 = (self.points[:, 0] - p.x) ** 2 + (self.points[:, 1] - p.y) ** 2
        i = int(np.argmin(d2))
        return Point2(float(self.points[i, 0]), float(self.points[i, 1]))


@dataclass(frozen=True)
class Similarity2:
    """Planar similarity: optional horizontal flip, then rotation, scaling,
    and translation.  Applying to a point computes s*R(theta)*F*p + t."""

    rotation: float = 0.0
    reflect: bool = False
    scale: float = 1.0
    translation: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    def linear(self) -> np.ndarray:
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        m = np.array([[c, -s], [s, c]], dtype=np.float64)
        if self.reflect:
            m[:, 0] = -m[:, 0]
        return self.scale * m

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        single = pts.ndim == 1
        out = pts.reshape(-1, 2) @ self.linear().T + np.asarray(self.translation)
        return out[0] if single else out

    def apply_point(self, p: Point2) -> Point2:
        q = self.apply(p.as_array())
        return Point2(float(q[0]), float(q[1]))

    def inverse(self) -> "Similarity2":
        inv_rot = self.rotation if self.reflect else -self.rotation
        inv = Similarity2(rotation=inv_rot, reflect=self.reflect, scale=1.0 / self.scale)
        t = -inv.apply(np.asarray(self.translation))
        return Similarity2(rotation=inv_rot, reflect=self.reflect,
                           scale=1.0 / self.scale, translation=(float(t[0]), float(t[1])))

    def compose(self, other: "Similarity2") -> "Similarity2":
        """Return self applied after other: (self o other)(p) = self(other(p))."""
        sign = -1.0 if self.reflect else 1.0
        rot = self.rotation + sign * other.rotation
        rot = math.atan2(math.sin(rot), math.cos(rot))
        t = self.apply(np.asarray(other.translation))
        return Similarity2(rotation=rot, reflect=self.reflect ^ other.reflect,
                           scale=self.scale * other.scale,
                           translation=(float(t[0]), float(t[1])))

    @staticmethod
    def identity() -> "Similarity2":
        return Similarity2()


N_VARIANTS = 24
_ROTATION_STEP = math.pi / 6.0  # 12 bins of 30 degrees


@dataclass(frozen=True)
class PoseVariant:
    """One of 24 pose hypotheses: 12 rotations, with and without a flip.

    index = k for plain rotations (k in 0..11) and 12 + k for flipped ones;
    variant 0 is the identity.
    """

    index: int

    def __post_init__(self):
        if not 0 <= self.index < N_VARIANTS:
            raise ValueError(f"variant index out of range: {self.index}")

    @property
    def reflect(self) -> bool:
        return self.index >= 12

    @property
    def k(self) -> int:
        return self.index % 12

    @property
    def rotation(self) -> float:
        return self.k * _ROTATION_STEP

    @staticmethod
    def from_flags(reflect: bool, k: int) -> "PoseVariant":
        return PoseVariant((12 if reflect else 0) + k % 12)


ALL_VARIANTS = tuple(PoseVariant(i) for i in range(N_VARIANTS))


def extract_edges(mask: BinaryMask) -> EdgePointSet:
    """All foreground pixels with at least one background 8-neighbor.

    Out-of-image neighbors count as background.  Points are discovered in
    scanline order and emitted contour-by-contour: within a boundary
    component the walk follows adjacent boundary pixels with a fixed
    neighbor preference, jumping to the nearest unvisited pixel of the same
    component when it runs into a dead end.
    """
    fg = mask.cells
    padded = np.pad(fg, 1, constant_values=False)
    has_bg_neighbor = np.zeros_like(fg)
    for dy, dx in _NEIGHBOR_ORDER:
        shifted = padded[1 + dy:1 + dy + fg.shape[0], 1 + dx:1 + dx + fg.shape[1]]
        has_bg_neighbor |= ~shifted
    boundary = fg & has_bg_neighbor
    if not boundary.any():
        raise EmptyMask("no boundary pixels")

    labels, n_components = ndimage.label(boundary, structure=np.ones((3, 3), dtype=int))
    visited = np.zeros_like(boundary)
    xs: list[int] = []
    ys: list[int] = []
    ids: list[int] = []

    order_rows, order_cols = np.nonzero(boundary)
    component_of = labels[order_rows, order_cols]
    seen_components: dict[int, int] = {}
    contour_id = 0
    for start_idx in range(order_rows.size):
        comp = int(component_of[start_idx])
        if comp in seen_components:
            continue
        seen_components[comp] = contour_id
        comp_mask = labels == comp
        r, c = int(order_rows[start_idx]), int(order_cols[start_idx])
        remaining = int(comp_mask.sum())
        while remaining:
            visited[r, c] = True
            xs.append(c)
            ys.append(r)
            ids.append(contour_id)
            remaining -= 1
            if remaining == 0:
                break
            nxt = None
            for dy, dx in _NEIGHBOR_ORDER:
                rr, cc = r + dy, c + dx
                if 0 <= rr < fg.shape[0] and 0 <= cc < fg.shape[1] \
                        and comp_mask[rr, cc] and not visited[rr, cc]:
                    nxt = (rr, cc)
                    break
            if nxt is None:
                rows, cols = np.nonzero(comp_mask & ~visited)
                d2 = (rows - r) ** 2 + (cols - c) ** 2
                j = int(np.lexsort((cols, rows, d2))[0])
                nxt = (int(rows[j]), int(cols[j]))
            r, c = nxt
        contour_id += 1

    points = np.stack([np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64)], axis=1)
    return EdgePointSet(points=points, contour_ids=np.asarray(ids, dtype=np.int32))


def variant_transform(variant: PoseVariant, width: int, height: int) -> Similarity2:
    """Map from original-image coordinates to variant coordinates of the same
    frame: flip about the vertical centerline, then rotate about the image
    center (width/2, height/2).  Scale is always 1."""
    center = np.array([width / 2.0, height / 2.0])
    base = Similarity2(rotation=variant.rotation, reflect=variant.reflect)
    t = center - base.apply(center)
    return Similarity2(rotation=variant.rotation, reflect=variant.reflect,
                       translation=(float(t[0]), float(t[1])))


def rotation_safe_side(width: int, height: int) -> int:
    """Canvas side that holds the image under any rotation about its center."""
    return int(math.ceil(math.hypot(width, height)))


def variant_to_canvas(variant: PoseVariant, width: int, height: int) -> tuple[Similarity2, int]:
    """Map from original-image coordinates into the enlarged variant canvas.

    The canvas is the rotation-safe square; the image center lands on the
    canvas center.  Returns (transform, canvas_side).
    """
    side = rotation_safe_side(width, height)
    base = Similarity2(rotation=variant.rotation, reflect=variant.reflect)
    center_src = np.array([width / 2.0, height / 2.0])
    center_dst = np.array([side / 2.0, side / 2.0])
    t = center_dst - base.apply(center_src)
    return Similarity2(rotation=variant.rotation, reflect=variant.reflect,
                       translation=(float(t[0]), float(t[1]))), side


def apply_variant(mask: BinaryMask, variant: PoseVariant) -> BinaryMask:
    """Resample the mask into the rotation-safe canvas under the variant pose.

    Nearest-neighbor sampling keeps the mask binary; for the axis-aligned
    subgroup (rotations by multiples of 90 degrees, flips) the resampling is
    an exact lattice map, so e.g. two 180-degree applications reproduce the
    identity output bit-for-bit up to canvas placement.
    """
    transform, side = variant_to_canvas(variant, mask.width, mask.height)
    inv = transform.inverse()
    qx, qy = np.meshgrid(np.arange(side, dtype=np.float64),
                         np.arange(side, dtype=np.float64))
    src = inv.apply(np.stack([qx.ravel(), qy.ravel()], axis=1))
    sx = round_half_up(src[:, 0])
    sy = round_half_up(src[:, 1])
    ok = (sx >= 0) & (sx < mask.width) & (sy >= 0) & (sy < mask.height)
    out = np.zeros(side * side, dtype=bool)
    out[ok] = mask.cells[sy[ok], sx[ok]]
    return BinaryMask(out.reshape(side, side))
