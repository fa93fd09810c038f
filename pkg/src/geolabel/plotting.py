"""Report figures. Uses the Agg canvas directly so no GUI backend is touched."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .metrics import ConfusionMatrix


def _names(cm: ConfusionMatrix, class_names) -> list[str]:
    names = list(class_names or [])
    return [names[c - 1] if c - 1 < len(names) else f"class_{c}" for c in range(1, cm.num_classes + 1)]


def plot_confusion(cm: ConfusionMatrix, path, class_names=None, title: str = "confusion (row-normalized)") -> Path:
    """Heatmap of ground truth (rows) against prediction (columns), including the unlabeled column."""
    counts = cm.counts[1:, :].astype(float)
    rows = counts.sum(axis=1, keepdims=True)
    norm = np.divide(counts, rows, out=np.zeros_like(counts), where=rows > 0)
    names = _names(cm, class_names)
    n = len(names)
    fig = Figure(figsize=(1.2 + 0.6 * (n + 1), 1.0 + 0.6 * n), dpi=100)
    FigureCanvasAgg(fig)
    ax = fig.add_subplot()
    im = ax.imshow(norm, vmin=0.0, vmax=1.0, cmap="viridis", aspect="auto")
    ax.set_xticks(range(n + 1), ["unlabeled"] + names, rotation=45, ha="right")
    ax.set_yticks(range(n), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("ground truth")
    ax.set_title(title)
    for i in range(n):
        for j in range(n + 1):
            if norm[i, j] >= 0.005:
                ax.text(j, i, f"{norm[i, j]:.2f}", ha="center", va="center",
                        color="black" if norm[i, j] > 0.6 else "white", fontsize=8)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, metadata={"Software": None})
    return path


def plot_class_iou(cm: ConfusionMatrix, path, class_names=None, title: str = "per-class IoU") -> Path:
    iou = np.nan_to_num(cm.iou(), nan=0.0)
    names = _names(cm, class_names)
    fig = Figure(figsize=(max(4.0, 0.7 * len(names) + 1.5), 3.5), dpi=100)
    FigureCanvasAgg(fig)
    ax = fig.add_subplot()
    x = np.arange(len(names))
    ax.bar(x, 100.0 * iou, color="tab:blue")
    for xi, v in zip(x, iou):
        ax.text(xi, 100.0 * v + 1.0, f"{100.0 * v:.1f}", ha="center", fontsize=8)
    ax.set_xticks(x, names, rotation=45, ha="right")
    ax.set_ylim(0, 105)
    ax.set_ylabel("IoU [%]")
    ax.set_title(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, metadata={"Software": None})
    return path
