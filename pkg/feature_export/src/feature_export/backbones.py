"""Backbone registry: anything that turns an image into a token grid.

Every backbone reports its ``patch`` size; an export at grid size n resizes
the canvas to (n * patch) squared so the token grid is exactly n x n.
"""
from __future__ import annotations

import numpy as np


class BackboneError(RuntimeError):
    pass


class TinyCnn:
    """Self-contained convolutional backbone with frozen random weights.

    Initialization is seeded, so identical inputs always produce identical
    feature files; useful wherever a pretrained checkpoint is unavailable.
    """

    patch = 8
    dim = 48

    def __init__(self, seed: int = 0):
        import torch
        import torch.nn as nn
        torch.manual_seed(seed)
        self.net = nn.Sequential(
            nn.Conv2d(3, 24, 5, stride=2, padding=2), nn.GELU(),
            nn.Conv2d(24, 48, 5, stride=2, padding=2), nn.GELU(),
            nn.Conv2d(48, self.dim, 3, stride=2, padding=1),
        ).eval()
        for p in self.net.parameters():
            p.requires_grad_(False)

    def extract(self, image: np.ndarray) -> np.ndarray:
        """(H, W, 3) float image in [0, 1] -> (H/patch, W/patch, dim)."""
        import torch
        x = torch.from_numpy(image.astype(np.float32)).permute(2, 0, 1)[None]
        with torch.no_grad():
            tokens = self.net(x)[0].permute(1, 2, 0)
        return tokens.numpy().astype(np.float32)


class DinoV2:
    """Pretrained vision-transformer tokens via torch.hub.

    Requires the checkpoint to be available locally (hub cache) or a
    network path to it; otherwise construction fails with a clear message.
    """

    patch = 14

    def __init__(self, name: str = "dinov2_vits14"):
        import torch
        try:
            self.model = torch.hub.load("facebookresearch/dinov2", name).eval()
        except Exception as exc:
            raise BackboneError(
                f"backbone '{name}' is not available locally: {exc}") from exc
        self.dim = self.model.embed_dim

    def extract(self, image: np.ndarray) -> np.ndarray:
        import torch
        mean = np.array([0.485, 0.456, 0.406], dtype=np.float32)
        std = np.array([0.229, 0.224, 0.225], dtype=np.float32)
        x = (image.astype(np.float32) - mean) / std
        x = torch.from_numpy(x).permute(2, 0, 1)[None]
        with torch.no_grad():
            out = self.model.forward_features(x)["x_norm_patchtokens"][0]
        n = int(round(np.sqrt(out.shape[0])))
        return out.reshape(n, n, -1).numpy().astype(np.float32)


def load_backbone(identifier: str):
    """Resolve a backbone identifier string.

    ``tinycnn`` (optionally ``tinycnn:<seed>``) needs no downloads;
    ``dinov2_vits14`` / ``dinov2_vitb14`` / ... go through torch.hub.
    """
    if identifier.startswith("tinycnn"):
        _, _, seed = identifier.partition(":")
        return TinyCnn(seed=int(seed) if seed else 0)
    if identifier.startswith("dinov2"):
        return DinoV2(identifier)
    raise BackboneError(f"unknown backbone identifier: {identifier!r}")
