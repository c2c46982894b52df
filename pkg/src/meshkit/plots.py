"""Report figures. Every function writes one PNG and returns its path."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def distance_histogram(distances, h: float, path, title: str = "output vertex distance to source"):
    d = np.asarray(distances, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist(d / h if h > 0 else d, bins=40, color="#4c72b0")
    ax.set_xlabel("distance / h" if h > 0 else "distance")
    ax.set_ylabel("vertices")
    ax.set_title(title)
    return _save(fig, path)


def extraction_stats(stats: dict, path):
    labels = ["cells", "scanned", "active"]
    vals = [stats.get("total_cells", 0), stats.get("candidate_cells", stats.get("total_cells", 0)), stats.get("active_cells", 0)]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(labels, vals, color=["#999999", "#dd8452", "#55a868"])
    ax.set_yscale("log")
    ax.set_title(f"pruned fraction {stats.get('pruned_fraction', 0.0):.3f}")
    return _save(fig, path)


def bake_overview(image, mask, weight, path):
    fig, axes = plt.subplots(1, 3, figsize=(10, 3.4))
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 2:
        img = np.concatenate([img, np.zeros(img.shape[:2] + (1,))], axis=2)
    axes[0].imshow(np.clip(img.squeeze(), 0, 1), origin="upper")
    axes[0].set_title("texture")
    axes[1].imshow(mask, cmap="viridis", vmin=0, vmax=2)
    axes[1].set_title("0 outside, 1 observed, 2 hole")
    im = axes[2].imshow(weight, cmap="magma")
    axes[2].set_title("blend weight")
    fig.colorbar(im, ax=axes[2], fraction=0.046)
    for a in axes:
        a.set_axis_off()
    return _save(fig, path)


def similarity_matrix(ids, vectors, path, t_cos: float | None = None):
    v = np.asarray(vectors, dtype=np.float64)
    sim = v @ v.T if len(v) else np.zeros((0, 0))
    fig, ax = plt.subplots(figsize=(5.5, 4.8))
    im = ax.imshow(sim, cmap="coolwarm", vmin=-1, vmax=1)
    if len(ids) <= 30:
        ax.set_xticks(range(len(ids)), ids, rotation=90, fontsize=7)
        ax.set_yticks(range(len(ids)), ids, fontsize=7)
    if t_cos is not None:
        ys, xs = np.nonzero(np.triu(sim >= t_cos, 1))
        ax.scatter(xs, ys, marker="s", facecolors="none", edgecolors="k", s=30)
    fig.colorbar(im, ax=ax, fraction=0.046)
    ax.set_title("descriptor cosine")
    return _save(fig, path)


def stage_status(counts: dict, path):
    stages = list(counts)
    states = ["done", "running", "pending", "failed"]
    colors = {"done": "#55a868", "running": "#dd8452", "pending": "#bbbbbb", "failed": "#c44e52"}
    fig, ax = plt.subplots(figsize=(6, 3.2))
    bottom = np.zeros(len(stages))
    for s in states:
        vals = np.array([counts[st].get(s, 0) for st in stages], dtype=float)
        ax.bar(stages, vals, bottom=bottom, label=s, color=colors[s])
        bottom += vals
    ax.set_ylabel("assets")
    ax.legend(fontsize=7, ncol=4)
    return _save(fig, path)
