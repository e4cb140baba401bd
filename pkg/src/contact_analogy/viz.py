"""Visualization output: contact-point overlays, per-variant similarity
heatmaps, and benchmark summary figures, all rendered to files."""
from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .geometry import BinaryMask, Point2


def _mask_axes(ax, mask: BinaryMask, title: str) -> None:
    ax.imshow(mask.cells, cmap="gray", interpolation="nearest")
    ax.set_title(title, fontsize=9)
    ax.set_xticks([])
    ax.set_yticks([])


def save_contact_overlay(path: str | Path, mask: BinaryMask, points: list[Point2],
                         labels: list[str] | None = None,
                         title: str = "contact points") -> Path:
    """Mask with contact points drawn as crosses."""
    fig, ax = plt.subplots(figsize=(4, 4), dpi=120)
    _mask_axes(ax, mask, title)
    colors = plt.cm.tab10(np.linspace(0, 1, max(len(points), 1)))
    for i, p in enumerate(points):
        ax.plot(p.x, p.y, marker="+", markersize=14, markeredgewidth=2.2,
                color=colors[i % len(colors)])
        if labels and i < len(labels):
            ax.annotate(labels[i], (p.x, p.y), textcoords="offset points",
                        xytext=(5, -5), fontsize=7, color=colors[i % len(colors)])
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path


def save_heatmap(path: str | Path, scores: np.ndarray, title: str) -> Path:
    """One similarity grid as a grayscale image."""
    fig, ax = plt.subplots(figsize=(3.2, 3.2), dpi=120)
    ax.imshow(scores, cmap="gray", interpolation="nearest", vmin=-1.0, vmax=1.0)
    ax.set_title(title, fontsize=8)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path


def save_match_figures(out_dir: str | Path, stem: str, demo_tool: BinaryMask,
                       demo_object: BinaryMask, p_tool: Point2, p_object: Point2,
                       target_tool: BinaryMask, target_object: BinaryMask,
                       candidates: list, selected_index: int,
                       score_grids: dict[int, np.ndarray] | None = None) -> list[Path]:
    """Overlay PNGs for the reference pair and the matched target pair, plus
    optional per-variant similarity heatmaps."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    written.append(save_contact_overlay(
        out_dir / f"{stem}_reference_tool.png", demo_tool, [p_tool],
        ["reference"], "reference tool"))
    written.append(save_contact_overlay(
        out_dir / f"{stem}_reference_object.png", demo_object, [p_object],
        ["reference"], "reference object"))
    tool_pts = [c.p_tool for c in candidates[:5]]
    tool_labels = [f"#{i}{'*' if i == selected_index else ''}"
                   for i in range(len(tool_pts))]
    written.append(save_contact_overlay(
        out_dir / f"{stem}_target_tool.png", target_tool, tool_pts,
        tool_labels, "target tool candidates"))
    obj_pts = [candidates[selected_index].p_object] if candidates else []
    written.append(save_contact_overlay(
        out_dir / f"{stem}_target_object.png", target_object, obj_pts,
        ["selected"], "target object contact"))
    if score_grids:
        for vidx in sorted(score_grids):
            written.append(save_heatmap(
                out_dir / f"{stem}_heat_v{vidx:02d}.png", score_grids[vidx],
                f"variant {vidx:02d}"))
    return written


def save_bench_figure(path: str | Path, rows: list[dict]) -> Path:
    """Per-scene outcome bars next to the benchmark CSV."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2), dpi=120)
    names = [r["scene"] for r in rows]
    success = np.array([r["success"] for r in rows], dtype=float)
    runs = np.array([r["runs"] for r in rows], dtype=float)
    xs = np.arange(len(rows))
    ax1.bar(xs, success, color=np.where(success > 0, "#2a9d2a", "#c23b3b"))
    ax1.set_ylim(0, 1.2)
    ax1.set_ylabel("verified")
    ax1.set_title(f"success {success.mean() * 100:.0f}%", fontsize=9)
    ax2.bar(xs, runs, color="#4466aa")
    ax2.set_ylabel("verification runs")
    ax2.set_title("runs until first pass", fontsize=9)
    for ax in (ax1, ax2):
        ax.set_xticks(xs)
        ax.set_xticklabels(names, rotation=90, fontsize=5)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path
