"""Intersection-over-union and pixel accuracy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EvalResult:
    per_class_iou: np.ndarray   # NaN for classes absent from both maps
    mean_iou: float
    pixel_accuracy: float
    confusion: np.ndarray       # confusion[pred, gt] = pixel count
    foreground_iou: float

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.per_class_iou)

    def to_record(self, names: "list[str] | tuple[str, ...] | None" = None) -> dict:
        names = names or [str(k) for k in range(len(self.per_class_iou))]
        return {
            "mean_iou": self.mean_iou,
            "pixel_accuracy": self.pixel_accuracy,
            "foreground_iou": self.foreground_iou,
            "per_class_iou": {n: float(v) for n, v in zip(names, self.per_class_iou)
                              if not np.isnan(v)},
        }


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_labels: int) -> np.ndarray:
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground-truth shape {gt.shape}")
    for name, m in (("prediction", pred), ("ground truth", gt)):
        if m.size and (m.min() < 0 or m.max() >= num_labels):
            raise ValueError(f"{name} labels must lie in [0, {num_labels})")
    flat = pred.astype(np.int64).ravel() * num_labels + gt.astype(np.int64).ravel()
    return np.bincount(flat, minlength=num_labels * num_labels).reshape(num_labels, num_labels)


def iou(pred: np.ndarray, gt: np.ndarray, num_labels: int) -> EvalResult:
    """Per-class IOU; classes absent from both maps are left out of the mean.

    Pixel accuracy counts background pixels too. ``foreground_iou`` is the
    binary IOU of label != 0.
    """
    cm = confusion_matrix(pred, gt, num_labels)
    inter = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - np.diag(cm)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(union > 0, inter / union, np.nan)
    present = union > 0
    mean = float(per_class[present].mean()) if present.any() else float("nan")
    total = cm.sum()
    acc = float(np.trace(cm) / total) if total else float("nan")

    pf, gf = np.asarray(pred) != 0, np.asarray(gt) != 0
    fg_union = np.logical_or(pf, gf).sum()
    fg = float(np.logical_and(pf, gf).sum() / fg_union) if fg_union else float("nan")
    return EvalResult(per_class, mean, acc, cm, fg)


def mean_over(results: "list[EvalResult]") -> dict:
    """Aggregate by summing confusion matrices (order independent)."""
    if not results:
        raise ValueError("nothing to aggregate")
    cm = sum(r.confusion for r in results)
    inter = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - np.diag(cm)
    present = union > 0
    per_class = np.full(len(cm), np.nan)
    per_class[present] = inter[present] / union[present]
    return {
        "images": len(results),
        "mean_iou_pooled": float(per_class[present].mean()) if present.any() else float("nan"),
        "mean_iou_per_image": float(np.nanmean([r.mean_iou for r in results])),
        "pixel_accuracy": float(np.trace(cm) / cm.sum()) if cm.sum() else float("nan"),
    }
