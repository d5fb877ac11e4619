"""Segmentation and classification metrics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError


def _check(pred, truth):
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ConfigError(f"shape mismatch {pred.shape} vs {truth.shape}")
    return pred, truth


def iou_dice(pred, truth) -> tuple[float, float]:
    """Binary IoU and Dice; two empty masks score (1, 1)."""
    pred, truth = _check(pred, truth)
    p, t = pred.astype(bool), truth.astype(bool)
    inter = np.logical_and(p, t).sum()
    union = np.logical_or(p, t).sum()
    total = p.sum() + t.sum()
    if union == 0:
        return 1.0, 1.0
    return float(inter / union), float(2 * inter / total)


def confusion_counts(pred, truth):
    pred, truth = _check(pred, truth)
    p, t = pred.astype(bool), truth.astype(bool)
    tp = int(np.logical_and(p, t).sum())
    fp = int(np.logical_and(p, ~t).sum())
    fn = int(np.logical_and(~p, t).sum())
    tn = int(np.logical_and(~p, ~t).sum())
    return tp, fp, fn, tn


def classification_metrics(pred, truth) -> dict[str, float]:
    """Precision, recall, F1 and accuracy for binary labels (empty ratios read as 1)."""
    tp, fp, fn, tn = confusion_counts(pred, truth)
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    accuracy = (tp + tn) / max(tp + fp + fn + tn, 1)
    return {"precision": precision, "recall": recall, "f1": f1, "accuracy": accuracy}


METRICS = ("iou", "dice", "precision", "recall", "f1", "accuracy")


@dataclass
class MetricReport:
    """Per-class metric values for every evaluated item, with aggregates."""
    num_classes: int
    items: list = field(default_factory=list)   # each: {class_id: {metric: value}}

    def add(self, pred, truth, classes=None):
        pred, truth = _check(pred, truth)
        classes = range(1, self.num_classes) if classes is None else classes
        row = {}
        for c in classes:
            p, t = pred == c, truth == c
            iou, dice = iou_dice(p, t)
            row[c] = {"iou": iou, "dice": dice, **classification_metrics(p, t)}
        self.items.append(row)
        return row

    def values(self, cls, metric):
        return np.array([it[cls][metric] for it in self.items if cls in it])

    def mean(self, cls, metric):
        return float(self.values(cls, metric).mean())

    def std(self, cls, metric):
        return float(self.values(cls, metric).std())

    def summary(self) -> dict:
        classes = sorted({c for it in self.items for c in it})
        return {c: {m: (self.mean(c, m), self.std(c, m)) for m in METRICS} for c in classes}

    def flat(self) -> dict[str, float]:
        """Means over classes, for history rows."""
        s = self.summary()
        if not s:
            return {}
        return {m: float(np.mean([s[c][m][0] for c in s])) for m in METRICS}
