"""Export pipeline: pose variants of an image are rendered first, features
extracted per variant, background token cells zeroed, and one FMAP file
written per variant."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .backbones import load_backbone
from .fmap import variant_filename, write_fmap
from .variants import N_VARIANTS, apply_variant_array, canvas_side


@dataclass
class ExportJob:
    image_path: Path
    mask_path: Path
    out_stem: Path
    grid_n: int = 32
    variants: str = "all"          # "all" or "identity"
    backbone_id: str = "tinycnn"

    def __post_init__(self):
        if self.grid_n < 4:
            raise ValueError("grid size must be at least 4")
        if self.variants not in ("all", "identity"):
            raise ValueError("variants must be 'all' or 'identity'")


def _load_image(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return arr


def _load_mask(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return arr > 0


def _cell_foreground(mask: np.ndarray, n: int) -> np.ndarray:
    """Token cells containing at least one foreground pixel."""
    side = mask.shape[0]
    cell = side / n
    ys, xs = np.nonzero(mask)
    ci = np.clip(np.floor((xs + 0.5) / cell).astype(int), 0, n - 1)
    ri = np.clip(np.floor((ys + 0.5) / cell).astype(int), 0, n - 1)
    fg = np.zeros((n, n), dtype=bool)
    fg[ri, ci] = True
    return fg


def export_features(job: ExportJob) -> list[Path]:
    """Write one FMAP file per requested pose variant; returns the paths."""
    image = _load_image(Path(job.image_path))
    mask = _load_mask(Path(job.mask_path))
    if image.shape[:2] != mask.shape:
        raise ValueError(
            f"image {image.shape[:2]} and mask {mask.shape} dimensions differ")

    backbone = load_backbone(job.backbone_id)
    n = job.grid_n
    resize_to = n * backbone.patch
    h, w = mask.shape
    side = canvas_side(w, h)
    indices = range(N_VARIANTS) if job.variants == "all" else [0]

    written = []
    for idx in indices:
        canvas_img = apply_variant_array(image, idx, fill=0.0)
        canvas_mask = apply_variant_array(mask, idx, fill=False)
        pil = Image.fromarray((canvas_img * 255).astype(np.uint8))
        resized = np.asarray(pil.resize((resize_to, resize_to), Image.BILINEAR),
                             dtype=np.float32) / 255.0
        tokens = backbone.extract(resized)
        if tokens.shape[:2] != (n, n):
            raise ValueError(f"backbone returned a {tokens.shape[:2]} grid, "
                             f"expected {(n, n)}")
        fg = _cell_foreground(canvas_mask, n)
        tokens = tokens.copy()
        tokens[~fg] = 0.0
        path = variant_filename(job.out_stem, idx)
        write_fmap(path, tokens, cell_size=side / n)
        written.append(path)
    return written
