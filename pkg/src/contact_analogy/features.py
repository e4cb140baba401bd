"""Dense feature maps, their binary file format, PCA reduction, patch
similarity, and global top-k contact-point proposal across pose variants.

A feature map is an n x n grid of d-vectors laid over a square canvas (the
rotation-safe canvas the pose variants render into); ``cell_size`` converts
between grid cells and canvas pixels.
"""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateData, DimensionError, FormatError, NoForeground
from .geometry import (ALL_VARIANTS, BinaryMask, Point2, PoseVariant,
                       apply_variant, round_half_up, variant_to_canvas)

log = logging.getLogger(__name__)

FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1

FALLBACK_DIM = 24  # 8 angular bins x 3 radial bands
_ANGULAR_BINS = 8
_RADIAL_BANDS = 3


@dataclass
class FeatureMap:
    """Row-major grid of descriptors: ``values[row, col]`` is a d-vector."""

    values: np.ndarray
    cell_size: float

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 3:
            raise ValueError("feature map values must be (rows, cols, dim)")
        if self.rows < 4 or self.cols < 4 or self.dim < 1:
            raise ValueError(f"feature map too small: {self.values.shape}")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature map contains non-finite components")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def cell_of_point(self, p: Point2) -> tuple[int, int]:
        """(row, col) of the grid cell containing a canvas point."""
        col = int(math.floor((p.x + 0.5) / self.cell_size))
        row = int(math.floor((p.y + 0.5) / self.cell_size))
        return (min(max(row, 0), self.rows - 1), min(max(col, 0), self.cols - 1))

    def point_of_cell(self, row: int, col: int) -> Point2:
        """Canvas coordinates of a cell center."""
        return Point2((col + 0.5) * self.cell_size - 0.5,
                      (row + 0.5) * self.cell_size - 0.5)

    def unit_values(self) -> np.ndarray:
        """Per-cell unit vectors; zero vectors stay zero."""
        v = self.values.astype(np.float64)
        norms = np.linalg.norm(v, axis=2, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            u = np.where(norms > 0, v / norms, 0.0)
        return u


def save_feature_map(path: str | Path, fmap: FeatureMap) -> None:
    header = FMAP_MAGIC + struct.pack("<IIIIf", FMAP_VERSION, fmap.rows,
                                      fmap.cols, fmap.dim, fmap.cell_size)
    payload = fmap.values.astype("<f4").tobytes()
    Path(path).write_bytes(header + payload)


def load_feature_map(path: str | Path) -> FeatureMap:
    data = Path(path).read_bytes()
    if len(data) < 24 or data[:4] != FMAP_MAGIC:
        raise FormatError(f"bad magic in {path}")
    version, rows, cols, dim = struct.unpack("<IIII", data[4:20])
    (cell_size,) = struct.unpack("<f", data[20:24])
    if version != FMAP_VERSION:
        raise FormatError(f"unsupported version {version} in {path}")
    expected = rows * cols * dim
    payload = np.frombuffer(data, dtype="<f4", offset=24)
    if payload.size != expected:
        raise DimensionError(
            f"payload holds {payload.size} floats, header says {expected}: {path}")
    return FeatureMap(values=payload.reshape(rows, cols, dim).copy(),
                      cell_size=float(cell_size))


def _octant(dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """45-degree angular bin of integer offsets, by exact sign comparisons.

    Bins advance counterclockwise from the +x axis; a 90-degree rotation of
    an offset advances its bin by exactly 2, which property tests rely on.
    """
    out = np.zeros(dx.shape, dtype=np.int64)
    q0 = (dx > 0) & (dy >= 0)
    out[q0] = np.where(dx[q0] > dy[q0], 0, 1)
    q1 = (dx <= 0) & (dy > 0)
    out[q1] = np.where(dy[q1] > -dx[q1], 2, 3)
    q2 = (dx < 0) & (dy <= 0)
    out[q2] = np.where(-dx[q2] > -dy[q2], 4, 5)
    q3 = (dx >= 0) & (dy < 0)
    out[q3] = np.where(-dy[q3] > dx[q3], 6, 7)
    return out


def compute_fallback_features(mask: BinaryMask, n: int = 64) -> FeatureMap:
    """Self-contained shape descriptor grid: per cell, an 8-bin angular
    occupancy histogram of the foreground at 3 logarithmic radii.

    Radii scale with the foreground bounding-box diagonal, so the descriptor
    of an object is independent of how much background canvas surrounds it.
    Sampling uses a fixed sub-lattice of offsets, keeping the computation
    deterministic and exactly equivariant under 90-degree rotations.
    """
    if n < 4:
        raise ValueError("grid size must be at least 4")
    x0, y0, x1, y1 = mask.bounding_box()
    diag = math.hypot(x1 - x0 + 1, y1 - y0 + 1)
    base = max(2.0, diag / 16.0)
    band_edges = np.array([base, 2 * base, 4 * base, 8 * base])
    r_max = band_edges[-1]

    stride = max(1, int(math.ceil(r_max / 24.0)))
    half = int(math.floor(r_max))
    coords = np.arange(-half, half + 1, stride, dtype=np.int64)
    ox, oy = np.meshgrid(coords, coords)
    ox, oy = ox.ravel(), oy.ravel()
    r2 = ox * ox + oy * oy
    lo2, hi2 = band_edges[0] ** 2, band_edges[-1] ** 2
    keep = (r2 >= lo2) & (r2 < hi2) & (r2 > 0)
    ox, oy, r2 = ox[keep], oy[keep], r2[keep]
    band = np.searchsorted(band_edges[1:-1] ** 2, r2, side="right")
    # Angular bins measured in mathematical axes (y up): flip dy.
    bins = band * _ANGULAR_BINS + _octant(ox, -oy)

    order = np.argsort(bins, kind="stable")
    ox, oy, bins = ox[order], oy[order], bins[order]
    counts = np.bincount(bins, minlength=FALLBACK_DIM)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    present = counts > 0

    h, w = mask.height, mask.width
    cell_size = max(w, h) / float(n)
    centers = (np.arange(n) + 0.5) * cell_size - 0.5
    anchors = round_half_up(centers)
    pad = half + 1
    padded = np.pad(mask.cells, pad).astype(np.float32)

    ay = (anchors[:, None] + pad + oy[None, :]).reshape(n, 1, -1)
    ax = (anchors[:, None] + pad + ox[None, :]).reshape(1, n, -1)
    samples = padded[ay, ax]  # (n, n, n_offsets)
    sums = np.add.reduceat(samples, starts, axis=2)
    values = np.zeros((n, n, FALLBACK_DIM), dtype=np.float32)
    values[:, :, present] = sums[:, :, present] / counts[present]
    return FeatureMap(values=values, cell_size=cell_size)


@dataclass
class PcaBasis:
    """Mean vector plus orthonormal principal directions."""

    mean: np.ndarray
    components: np.ndarray        # (d, d_out), orthonormal columns
    explained_variance: np.ndarray  # (d_out,), descending

    def project(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) @ self.components


def pca_reduce(maps: list[FeatureMap], d_out: int) -> tuple[PcaBasis, list[FeatureMap]]:
    """Fit a PCA basis on the union of cells of all maps and project each map.

    Explained variances are the top eigenvalues of the pooled sample
    covariance (ddof=1), in descending order.
    """
    if not maps:
        raise DegenerateData("no feature maps to fit")
    dim = maps[0].dim
    for m in maps:
        if m.dim != dim:
            raise ValueError("all maps must share the descriptor dimension")
    if not 1 <= d_out <= dim:
        raise ValueError(f"d_out must be in [1, {dim}], got {d_out}")
    pooled = np.concatenate([m.values.reshape(-1, dim) for m in maps], axis=0)
    pooled = pooled.astype(np.float64)
    if pooled.shape[0] < d_out:
        raise DegenerateData(f"{pooled.shape[0]} cells cannot support {d_out} components")

    mean = pooled.mean(axis=0)
    centered = pooled - mean
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:d_out].T
    # Deterministic sign: largest-magnitude entry of each component positive.
    for j in range(components.shape[1]):
        i = int(np.argmax(np.abs(components[:, j])))
        if components[i, j] < 0:
            components[:, j] = -components[:, j]
    explained = (singular[:d_out] ** 2) / max(pooled.shape[0] - 1, 1)

    basis = PcaBasis(mean=mean, components=components, explained_variance=explained)
    projected = [FeatureMap(values=basis.project(m.values.astype(np.float64)).astype(np.float32),
                            cell_size=m.cell_size) for m in maps]
    return basis, projected


def _as_cell(p) -> tuple[int, int]:
    if isinstance(p, Point2):
        return int(round(p.y)), int(round(p.x))
    row, col = p
    return int(row), int(col)


def patch_similarity(f_ref: FeatureMap, f_tgt: FeatureMap, p_ref, p_tgt,
                     m: int = 3) -> float:
    """Mean cosine similarity over corresponding offsets of two m x m patches.

    ``p_ref``/``p_tgt`` are grid locations (Point2 with x=col, y=row, or
    (row, col) tuples).  Offsets where either patch leaves its grid are
    excluded pairwise; zero vectors contribute cosine 0.  The sum is always
    divided by m*m, so the result lies in [-1, 1].
    """
    if m < 1 or m % 2 == 0:
        raise ValueError("patch side must be odd and >= 1")
    r0, c0 = _as_cell(p_ref)
    r1, c1 = _as_cell(p_tgt)
    half = m // 2
    total = 0.0
    for dr in range(-half, half + 1):
        for dc in range(-half, half + 1):
            ra, ca = r0 + dr, c0 + dc
            rb, cb = r1 + dr, c1 + dc
            if not (0 <= ra < f_ref.rows and 0 <= ca < f_ref.cols):
                continue
            if not (0 <= rb < f_tgt.rows and 0 <= cb < f_tgt.cols):
                continue
            a = f_ref.values[ra, ca].astype(np.float64)
            b = f_tgt.values[rb, cb].astype(np.float64)
            na, nb = np.linalg.norm(a), np.linalg.norm(b)
            if na > 0 and nb > 0:
                total += float(a @ b) / (na * nb)
    return total / (m * m)


@dataclass
class GlobalMatch:
    """A proposed tool contact point from the global matching stage."""

    point: Point2            # in original target-mask coordinates
    variant: PoseVariant
    s_dino: float
    cell: tuple[int, int]    # (row, col) in the variant's feature grid


class FallbackFeatureSource:
    """Computes fallback descriptors for each pose variant of a target mask."""

    def __init__(self, mask: BinaryMask, n: int = 64):
        self.mask = mask
        self.n = n
        self._cache: dict[int, FeatureMap] = {}

    def map_for(self, variant: PoseVariant, variant_mask: BinaryMask | None = None) -> FeatureMap:
        if variant.index not in self._cache:
            vm = variant_mask if variant_mask is not None else apply_variant(self.mask, variant)
            self._cache[variant.index] = compute_fallback_features(vm, self.n)
        return self._cache[variant.index]


class FileFeatureSource:
    """Loads ``<stem>.v<00..23>.fmap`` files; missing variants are skipped."""

    def __init__(self, stem: str | Path):
        self.stem = Path(stem)
        self._cache: dict[int, FeatureMap | None] = {}
        self.warnings = 0

    def path_for(self, variant: PoseVariant) -> Path:
        return self.stem.with_name(self.stem.name + f".v{variant.index:02d}.fmap")

    def map_for(self, variant: PoseVariant, variant_mask: BinaryMask | None = None) -> FeatureMap | None:
        if variant.index not in self._cache:
            path = self.path_for(variant)
            if path.exists():
                self._cache[variant.index] = load_feature_map(path)
            else:
                if variant.index == 0:
                    raise FormatError(f"mandatory variant file missing: {path}")
                log.warning("skipping missing variant file %s", path)
                self.warnings += 1
                self._cache[variant.index] = None
        return self._cache[variant.index]


def reference_feature_map(mask: BinaryMask, n: int = 64,
                          stem: str | Path | None = None) -> FeatureMap:
    """Identity-variant feature map of a reference mask (file or fallback)."""
    if stem is not None:
        return FileFeatureSource(stem).map_for(PoseVariant(0))
    return FallbackFeatureSource(mask, n).map_for(PoseVariant(0))


def _foreground_cells(variant_mask: BinaryMask, fmap: FeatureMap) -> np.ndarray:
    """Boolean (rows, cols) grid: cells containing at least one foreground pixel."""
    rows, cols = np.nonzero(variant_mask.cells)
    ci = np.floor((cols + 0.5) / fmap.cell_size).astype(np.int64)
    ri = np.floor((rows + 0.5) / fmap.cell_size).astype(np.int64)
    ci = np.clip(ci, 0, fmap.cols - 1)
    ri = np.clip(ri, 0, fmap.rows - 1)
    fg = np.zeros((fmap.rows, fmap.cols), dtype=bool)
    fg[ri, ci] = True
    return fg


def _score_grid(ref_unit: np.ndarray, tgt_unit: np.ndarray,
                ref_cell: tuple[int, int], m: int) -> np.ndarray:
    """Patch similarity against ``ref_cell`` evaluated at every target cell."""
    half = m // 2
    rows, cols, _ = tgt_unit.shape
    scores = np.zeros((rows, cols), dtype=np.float64)
    r0, c0 = ref_cell
    for dr in range(-half, half + 1):
        for dc in range(-half, half + 1):
            ra, ca = r0 + dr, c0 + dc
            if not (0 <= ra < ref_unit.shape[0] and 0 <= ca < ref_unit.shape[1]):
                continue
            rvec = ref_unit[ra, ca]
            shifted = np.zeros((rows, cols), dtype=np.float64)
            rs0, rs1 = max(0, dr), min(rows, rows + dr)
            cs0, cs1 = max(0, dc), min(cols, cols + dc)
            if rs0 >= rs1 or cs0 >= cs1:
                continue
            shifted[rs0 - dr:rs1 - dr, cs0 - dc:cs1 - dc] = tgt_unit[rs0:rs1, cs0:cs1] @ rvec
            scores += shifted
    return scores / (m * m)


def _nms(scores: np.ndarray, fg: np.ndarray, radius: float, keep: int) -> list[tuple[int, int]]:
    """Greedy non-maximum suppression over foreground cells."""
    rows, cols = np.nonzero(fg)
    vals = scores[rows, cols]
    order = np.lexsort((cols, rows, -vals))
    kept: list[tuple[int, int]] = []
    for idx in order:
        r, c = int(rows[idx]), int(cols[idx])
        if all((r - kr) ** 2 + (c - kc) ** 2 > radius * radius for kr, kc in kept):
            kept.append((r, c))
            if len(kept) >= keep:
                break
    return kept


def global_match(f_ref: FeatureMap, mask_tgt: BinaryMask, p_ref: Point2,
                 k: int = 3, m: int = 3, feature_source=None, *,
                 ref_mask: BinaryMask | None = None, pca_dim: int | None = 16,
                 nms_radius: float = 2.0,
                 score_sink: dict | None = None) -> list[GlobalMatch]:
    """Top-k contact-point proposals over all 24 pose variants of the target.

    Patch similarity against the reference point is evaluated at every
    foreground cell of every available variant; within a variant, candidates
    closer than ``nms_radius`` cells to a better one are suppressed.  Winning
    cells are mapped back to original target coordinates through the inverse
    variant transform and snapped to the nearest foreground pixel.  Ties are
    broken by (variant index, row, col) ascending.

    ``p_ref`` is in original reference-mask coordinates when ``ref_mask`` is
    given, otherwise already in reference canvas coordinates.  ``pca_dim``
    selects joint PCA reduction of the reference and all variant maps before
    scoring (None scores the raw descriptors).
    """
    if feature_source is None:
        raise ValueError("a feature source is required")
    if not mask_tgt.cells.any():
        raise NoForeground("target mask has no foreground")

    if ref_mask is not None:
        t_ref, _ = variant_to_canvas(PoseVariant(0), ref_mask.width, ref_mask.height)
        p_canvas = t_ref.apply_point(p_ref)
    else:
        p_canvas = p_ref
    ref_cell = f_ref.cell_of_point(p_canvas)

    variant_masks: dict[int, BinaryMask] = {}
    entries: list[tuple[PoseVariant, FeatureMap]] = []
    for variant in ALL_VARIANTS:
        vm = apply_variant(mask_tgt, variant)
        variant_masks[variant.index] = vm
        fmap = feature_source.map_for(variant, vm)
        if fmap is not None:
            entries.append((variant, fmap))
    if not entries:
        raise NoForeground("no variant feature maps available")

    if pca_dim is not None:
        _, projected = pca_reduce([f_ref] + [fm for _, fm in entries], pca_dim)
        ref_scored = projected[0]
        scored = list(zip([v for v, _ in entries], projected[1:]))
    else:
        ref_scored = f_ref
        scored = entries

    ref_unit = ref_scored.unit_values()
    candidates: list[tuple[float, int, int, int]] = []
    score_grids: dict[int, np.ndarray] = {}
    for variant, fmap in scored:
        tgt_unit = fmap.unit_values()
        scores = _score_grid(ref_unit, tgt_unit, ref_cell, m)
        score_grids[variant.index] = scores
        fg = _foreground_cells(variant_masks[variant.index], fmap)
        if not fg.any():
            continue
        for r, c in _nms(scores, fg, nms_radius, max(k, 1)):
            candidates.append((float(scores[r, c]), variant.index, r, c))

    if score_sink is not None:
        score_sink.update(score_grids)
    if not candidates:
        raise NoForeground("no scorable foreground cells")
    candidates.sort(key=lambda t: (-t[0], t[1], t[2], t[3]))

    matches: list[GlobalMatch] = []
    fmap_by_variant = dict((v.index, fm) for v, fm in scored)
    for score, vidx, r, c in candidates[:k]:
        variant = PoseVariant(vidx)
        fmap = fmap_by_variant[vidx]
        canvas_pt = fmap.point_of_cell(r, c)
        transform, _ = variant_to_canvas(variant, mask_tgt.width, mask_tgt.height)
        orig = transform.inverse().apply_point(canvas_pt)
        snapped = mask_tgt.nearest_foreground(orig)
        matches.append(GlobalMatch(point=snapped, variant=variant,
                                   s_dino=score, cell=(r, c)))
    return matches
