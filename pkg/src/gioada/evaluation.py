"""Confusion-matrix metrics, label colorization and result tables."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .core import IGNORE_INDEX, ClassSet, VKITTI_CLASSES

# Reported full-scale numbers, kept for table rendering next to desk-scale results.
REFERENCE_VKITTI = {
    "Non Adapt": [79.3, 60.5, 0.0, 0.3, 9.5, 66.8, 8.3, 85.9, 59.2, 4.8],
    "Input Level Adapt": [83.2, 67.4, 10.8, 21.9, 24.5, 68.8, 6.5, 88.3, 77.8, 9.3],
    "Output Level Adapt": [81.1, 69.1, 7.1, 8.6, 28.3, 79.5, 43.3, 86.0, 79.3, 17.8],
    "Input&Output Adapt": [81.4, 71.2, 11.3, 26.6, 23.6, 82.8, 56.5, 88.4, 80.1, 12.7],
}
REFERENCE_VKITTI_MIOU = {"Non Adapt": 37.5, "Input Level Adapt": 45.9,
                         "Output Level Adapt": 50.0, "Input&Output Adapt": 53.5}
REFERENCE_INPUT_ABLATION = {"na": 37.5, "cg": 39.8, "gd": 43.5, "+d": 44.2, "+s": 44.7, "+sd": 45.9}
REFERENCE_OUTPUT_ABLATION = {"na": 37.5, "ss": 45.9, "depth": 43.8, "sep": 46.3, "joint": 50.0}
REFERENCE_SYNTHIA_MIOU = {"Non Adapt": (23.3, 26.5), "Input-level Adapt": (33.8, 39.7),
                          "Output-level Adapt": (35.3, 40.6), "Input&Output Adapt": (37.3, 43.0)}


class ConfusionMatrix:
    """C x C pixel counts, rows = ground truth, columns = prediction."""

    def __init__(self, num_classes: int, counts: np.ndarray | None = None):
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64) if counts is None else \
            np.asarray(counts, dtype=np.int64).copy()

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def pixel_accuracy(self) -> float:
        return float(np.trace(self.counts) / max(self.total, 1))


def accumulate(cm: ConfusionMatrix, pred: np.ndarray, gt: np.ndarray,
               ignore_index: int = IGNORE_INDEX) -> ConfusionMatrix:
    """Add one prediction/ground-truth pair in place and return ``cm``."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    keep = gt != ignore_index
    g, p = gt[keep].astype(np.int64), pred[keep].astype(np.int64)
    c = cm.num_classes
    if g.size and (g.min() < 0 or g.max() >= c):
        raise ValueError(f"ground-truth label out of range [0, {c})")
    if p.size and (p.min() < 0 or p.max() >= c):
        raise ValueError(f"predicted label out of range [0, {c})")
    cm.counts += np.bincount(g * c + p, minlength=c * c).reshape(c, c)
    return cm


def evaluate_samples(predict, samples, class_set: ClassSet, batch_size: int = 8) -> ConfusionMatrix:
    """Confusion matrix of ``predict(images) -> labels`` over labelled samples."""
    samples = [s for s in samples if s.labels is not None]
    if not samples:
        raise ValueError("no labelled samples to evaluate")
    cm = ConfusionMatrix(class_set.num_classes)
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        if len({s.image.shape for s in chunk}) > 1:  # e.g. KITTI frames of slightly different sizes
            preds = [predict(s.image[None])[0] for s in chunk]
        else:
            preds = predict(np.stack([s.image for s in chunk]))
        for pred, s in zip(preds, chunk):
            accumulate(cm, pred, s.labels, class_set.ignore_index)
    return cm


def per_class_iou(cm: ConfusionMatrix) -> np.ndarray:
    """IoU per class; NaN where the class never appears in prediction or ground truth."""
    tp = np.diag(cm.counts).astype(np.float64)
    union = cm.counts.sum(0) + cm.counts.sum(1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, tp / union, np.nan)


def miou(cm: ConfusionMatrix, subset: Sequence[int] | None = None) -> tuple[list[float], float]:
    iou = per_class_iou(cm)
    sel = iou if subset is None else iou[list(subset)]
    sel = sel[~np.isnan(sel)]
    return iou.tolist(), float(sel.mean()) if sel.size else float("nan")


def colorize(labels: np.ndarray, class_set: ClassSet) -> np.ndarray:
    """Palette lookup; ignored (or unknown) pixels are black."""
    lut = np.zeros((max(256, class_set.ignore_index + 1), 3), dtype=np.uint8)
    lut[: class_set.num_classes] = np.asarray(class_set.palette, dtype=np.uint8)
    lut[class_set.ignore_index] = 0
    return lut[np.asarray(labels, dtype=np.int64)]


def _fmt(v):
    return "-" if v is None or (isinstance(v, float) and np.isnan(v)) else f"{v:.1f}"


def render_table(results: Mapping[str, Sequence[float]], class_set: ClassSet = VKITTI_CLASSES,
                 scale: float = 100.0) -> str:
    """Per-class IoU columns plus mIoU (and mIoU over ``eval_subset`` when set).

    ``results`` maps method name -> per-class IoU (fractions when
    ``scale=100``). The best value in each column is wrapped in brackets.
    """
    c = class_set.num_classes
    for name, ious in results.items():
        if len(ious) != c:
            raise ValueError(f"method {name!r} has {len(ious)} IoU values for {c} classes")
    excluded = set(range(c)) - set(class_set.eval_subset or range(c))
    headers = [n + ("*" if i in excluded else "") for i, n in enumerate(class_set.names)] + ["mIoU"]
    if class_set.eval_subset is not None:
        headers.append("mIoU excl.*")

    rows = {}
    for name, ious in results.items():
        arr = np.array([np.nan if v is None else v for v in ious], dtype=np.float64) * scale
        row = list(arr)
        row.append(float(np.nanmean(arr)) if np.any(~np.isnan(arr)) else np.nan)
        if class_set.eval_subset is not None:
            sub = arr[class_set.eval_subset]
            row.append(float(np.nanmean(sub)) if np.any(~np.isnan(sub)) else np.nan)
        rows[name] = row

    best = []
    for j in range(len(headers)):
        col = [r[j] for r in rows.values() if not np.isnan(r[j])]
        best.append(max(col) if col else None)

    cells = [["method"] + headers]
    for name, row in rows.items():
        cells.append([name] + [f"[{_fmt(v)}]" if best[j] is not None and v == best[j] else _fmt(v)
                               for j, v in enumerate(row)])
    widths = [max(len(r[j]) for r in cells) for j in range(len(cells[0]))]
    lines = [" | ".join(cell.rjust(w) if j else cell.ljust(w) for j, (cell, w) in enumerate(zip(r, widths)))
             for r in cells]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines)


def render_ablation(results: Mapping[str, float], scale: float = 100.0) -> str:
    """One-row ablation table: variant label -> mean mIoU; the best is bracketed."""
    vals = {k: v * scale for k, v in results.items()}
    best = max(vals.values()) if vals else None
    cells = [(k, f"[{v:.1f}]" if v == best else f"{v:.1f}") for k, v in vals.items()]
    widths = [max(len(a), len(b)) for a, b in cells]
    head = " ".join(a.center(w) for (a, _), w in zip(cells, widths))
    body = " ".join(b.center(w) for (_, b), w in zip(cells, widths))
    return f"{head}\n{body}"
