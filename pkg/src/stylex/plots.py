"""PNG renderings of analysis results."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def boxplot_1d(points_1d, param_values, path, title: str = "", seen=None) -> Path:
    coords = np.asarray(points_1d).reshape(-1)
    values = np.asarray(param_values, dtype=float)
    keys = np.unique(values)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    parts = ax.boxplot([coords[values == k] for k in keys], orientation="horizontal", patch_artist=True)
    if seen is not None:
        seen = np.asarray(seen, dtype=bool)
        for box, k in zip(parts["boxes"], keys):
            box.set_facecolor("#9ecae1" if seen[values == k][0] else "#fdae6b")
    ax.set_yticks(range(1, len(keys) + 1), [f"{k:g}" for k in keys])
    ax.set_xlabel("1-D t-SNE coordinate")
    ax.set_ylabel("parameter value")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def scatter_2d(points, labels: Sequence[str], path, title: str = "", held_out: Sequence[str] = ()) -> Path:
    points = np.asarray(points)
    labels = np.asarray(labels)
    uniq = list(dict.fromkeys(labels.tolist()))
    cmap = plt.get_cmap("tab20" if len(uniq) > 10 else "tab10")
    fig, ax = plt.subplots(figsize=(6.5, 6))
    for i, lab in enumerate(uniq):
        sel = labels == lab
        marker = "x" if lab in held_out else "o"
        ax.scatter(points[sel, 0], points[sel, 1], s=10, marker=marker, color=cmap(i % cmap.N), label=lab)
    if len(uniq) <= 10:
        ax.legend(fontsize=6, loc="best")
    ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def distance_grid(reference: np.ndarray, rows: Sequence[Sequence[np.ndarray]],
                  distances: Sequence[Sequence[float]], path, row_titles: Sequence[str] = ()) -> Path:
    """Reference tile top-left, then one row per candidate group, tiles annotated."""
    ncols = 1 + max(len(r) for r in rows)
    fig, axes = plt.subplots(len(rows), ncols, figsize=(1.6 * ncols, 1.8 * len(rows)), squeeze=False)
    for ax in axes.flat:
        ax.axis("off")
    axes[0, 0].imshow(reference, cmap="gray", vmin=0, vmax=1)
    axes[0, 0].set_title("reference", fontsize=7)
    for r, (tiles, dists) in enumerate(zip(rows, distances)):
        if r < len(row_titles):
            axes[r, 0].text(0.5, -0.12, row_titles[r], transform=axes[r, 0].transAxes, ha="center", fontsize=6)
        for c, (tile, d) in enumerate(zip(tiles, dists)):
            ax = axes[r, c + 1]
            ax.imshow(tile, cmap="gray", vmin=0, vmax=1)
            ax.set_title(f"d={d:.3f}", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)
