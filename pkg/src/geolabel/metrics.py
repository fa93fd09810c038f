"""Confusion-matrix metrics for label maps and the registration score."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyMatrix, ResolutionMismatch
from .geometry import CameraModel

UNLABELED = 0


@dataclass
class ConfusionMatrix:
    """Counts indexed ``[ground truth, prediction]``; row/column 0 is unlabeled."""

    counts: np.ndarray

    @classmethod
    def zeros(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes + 1, num_classes + 1), dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0] - 1

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        n = max(self.num_classes, other.num_classes)
        return ConfusionMatrix(_pad(self.counts, n) + _pad(other.counts, n))

    def iou(self) -> np.ndarray:
        """Per-class IoU for classes ``1..C``; NaN where the class never appears."""
        c = self.counts
        tp = np.diag(c)[1:].astype(float)
        fp = c[:, 1:].sum(axis=0) - tp
        fn = c[1:, :].sum(axis=1) - tp
        denom = tp + fp + fn
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(denom > 0, tp / denom, np.nan)

    def gt_frequency(self) -> np.ndarray:
        gt = self.counts[1:, :].sum(axis=1).astype(float)
        total = gt.sum()
        return gt / total if total else gt


def _pad(counts: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n + 1, n + 1), dtype=np.int64)
    k = counts.shape[0]
    out[:k, :k] = counts
    return out


def accumulate(pred: np.ndarray, gt: np.ndarray, ignore_unlabeled_gt: bool = True,
               num_classes: int = None, mask: np.ndarray = None) -> ConfusionMatrix:
    """Count ``(gt, pred)`` pixel pairs; ``mask`` optionally restricts the pixels."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ResolutionMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
    keep = np.ones(gt.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if ignore_unlabeled_gt:
        keep = keep & (gt != UNLABELED)
    p = pred[keep].astype(np.int64)
    g = gt[keep].astype(np.int64)
    if num_classes is None:
        num_classes = int(max(p.max(initial=0), g.max(initial=0)))
    n = num_classes + 1
    counts = np.bincount(g * n + p, minlength=n * n).reshape(n, n)
    return ConfusionMatrix(counts.astype(np.int64))


def pixel_accuracy(cm: ConfusionMatrix) -> float:
    total = cm.total
    if total == 0:
        raise EmptyMatrix("confusion matrix is empty")
    return float(np.trace(cm.counts)) / total


def fw_miou(cm: ConfusionMatrix) -> float:
    """Ground-truth-frequency-weighted mean IoU over classes 1..C."""
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix is empty")
    freq = cm.gt_frequency()
    iou = np.nan_to_num(cm.iou(), nan=0.0)
    return float(np.sum(freq * iou))


def eval_registration(
    rgb_gt_label: np.ndarray,
    thermal_gt_label: np.ndarray,
    rgb_cam: CameraModel,
    thermal_cam: CameraModel,
    bbox,
    ignore_unlabeled_gt: bool = True,
) -> tuple[float, float]:
    """Transfer RGB labels into thermal space (nearest sampling) and score them.

    Output pixels whose source falls outside the RGB frame are not scored.
    """
    from .register import distortion_transfer

    thermal_gt_label = np.asarray(thermal_gt_label)
    if thermal_gt_label.shape != thermal_cam.shape:
        raise ResolutionMismatch(f"thermal labels {thermal_gt_label.shape} vs camera {thermal_cam.shape}")
    moved, mask = distortion_transfer(rgb_gt_label, rgb_cam, thermal_cam, bbox, sampling="nearest")
    cm = accumulate(moved, thermal_gt_label, ignore_unlabeled_gt, mask=mask > 0)
    return pixel_accuracy(cm), fw_miou(cm)


def pct(x: float) -> str:
    return f"{100.0 * x:.2f}"


def text_report(cm: ConfusionMatrix, class_names=None, title: str = "evaluation") -> str:
    names = class_names or [f"class_{c}" for c in range(1, cm.num_classes + 1)]
    iou = cm.iou()
    freq = cm.gt_frequency()
    lines = [
        f"# {title}",
        f"pixels = {cm.total}",
        f"accuracy = {pct(pixel_accuracy(cm))}",
        f"fw_miou = {pct(fw_miou(cm))}",
        f"unlabeled_pred = {pct(cm.counts[:, 0].sum() / cm.total)}",
        "",
        f"{'id':>4} {'class':<20} {'gt_share':>9} {'iou':>8}",
    ]
    for c in range(1, cm.num_classes + 1):
        name = names[c - 1] if c - 1 < len(names) else f"class_{c}"
        v = "-" if np.isnan(iou[c - 1]) else pct(iou[c - 1])
        lines.append(f"{c:>4} {name:<20} {pct(freq[c - 1]):>9} {v:>8}")
    return "\n".join(lines) + "\n"


def write_metrics_csv(rows: list[dict], path) -> None:
    """One row per evaluated frame plus whatever summary rows the caller adds."""
    path = Path(path)
    if not rows:
        path.write_text("")
        return
    fields = list(rows[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
