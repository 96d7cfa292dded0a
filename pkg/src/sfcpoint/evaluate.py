"""Confusion-matrix segmentation metrics and logit ensembling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import IGNORE
from .errors import ClassOutOfRange, LengthMismatch, NoValidClasses, NonFinite, ShapeMismatch


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts indexed ``[true class, predicted class]``."""

    counts: np.ndarray
    ignore_id: int = IGNORE

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ShapeMismatch(f"confusion matrix must be square, got {counts.shape}")
        if (counts < 0).any():
            raise ValueError("confusion counts must be non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def empty(cls, num_classes: int, ignore_id: int = IGNORE) -> ConfusionMatrix:
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64), ignore_id)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    def merge(self, other: ConfusionMatrix) -> ConfusionMatrix:
        if other.counts.shape != self.counts.shape:
            raise ShapeMismatch(f"cannot merge {other.counts.shape} into {self.counts.shape}")
        return ConfusionMatrix(self.counts + other.counts, self.ignore_id)


def accumulate(cm: ConfusionMatrix, predictions, labels) -> ConfusionMatrix:
    """Add one batch of (prediction, label) pairs; ignored labels are skipped."""
    pred = np.asarray(predictions).astype(np.int64).ravel()
    true = np.asarray(labels).astype(np.int64).ravel()
    if pred.shape != true.shape:
        raise LengthMismatch(f"{len(pred)} predictions for {len(true)} labels")
    k = cm.num_classes
    keep = true != cm.ignore_id
    pred, true = pred[keep], true[keep]
    for name, ids in (("label", true), ("prediction", pred)):
        bad = (ids < 0) | (ids >= k)
        if bad.any():
            raise ClassOutOfRange(f"{name} {ids[bad][0]} outside [0, {k})")
    tally = np.bincount(true * k + pred, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(cm.counts + tally, cm.ignore_id)


def miou(cm: ConfusionMatrix):
    """Per-class IoU (NaN where the class never occurs) and the mean over the rest."""
    counts = cm.counts.astype(np.float64)
    inter = np.diag(counts)
    union = counts.sum(axis=0) + counts.sum(axis=1) - inter
    valid = union > 0
    if not valid.any():
        raise NoValidClasses("every class has zero union")
    iou = np.full(cm.num_classes, np.nan)
    iou[valid] = inter[valid] / union[valid]
    return iou, float(iou[valid].mean())


def ensemble(members) -> np.ndarray:
    """Arithmetic mean of raw logits.

    Computed as ``m0 + mean(m_i - m0)`` so identical members come back unchanged.
    """
    arrs = [np.asarray(m, dtype=np.float64) for m in members]
    if not arrs:
        raise ShapeMismatch("ensemble needs at least one member")
    shape = arrs[0].shape
    if len(shape) != 2:
        raise ShapeMismatch(f"logits must be (N, K), got {shape}")
    for a in arrs:
        if a.shape != shape:
            raise ShapeMismatch(f"member shape {a.shape} differs from {shape}")
        if not np.isfinite(a).all():
            raise NonFinite("logits contain NaN or Inf")
    base = arrs[0]
    if len(arrs) == 1:
        return base.copy()
    return base + sum(a - base for a in arrs[1:]) / len(arrs)


def argmax(logits) -> np.ndarray:
    """Class with the highest score; ties go to the lowest index."""
    return np.argmax(np.asarray(logits), axis=1)
