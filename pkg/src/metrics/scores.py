"""Counting metrics and binary cross-entropy over label grids."""
from __future__ import annotations

import numpy as np

from ..errors import BadLabel, EmptyGrid, ShapeMismatch
from .models import ConfusionCounts

NUM_CLASSES = 4
BCE_CLAMP = 1e-7


def _check_grids(pred: np.ndarray, truth: np.ndarray) -> None:
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs truth {truth.shape}")
    for name, grid in (("prediction", pred), ("truth", truth)):
        if grid.size and not np.isin(grid, np.arange(NUM_CLASSES)).all():
            raise BadLabel(f"{name} holds labels outside 0..{NUM_CLASSES - 1}")


def confusion_counts(pred: np.ndarray, truth: np.ndarray, class_id: int) -> ConfusionCounts:
    pred, truth = np.asarray(pred), np.asarray(truth)
    _check_grids(pred, truth)
    if not 0 <= class_id < NUM_CLASSES:
        raise BadLabel(f"class id {class_id} outside 0..{NUM_CLASSES - 1}")
    predicted = pred == class_id
    actual = truth == class_id
    tp = int(np.count_nonzero(predicted & actual))
    fp = int(np.count_nonzero(predicted & ~actual))
    fn = int(np.count_nonzero(~predicted & actual))
    return ConfusionCounts(tp=tp, tn=int(pred.size) - tp - fp - fn, fp=fp, fn=fn)


def _ratio(numerator: int, denominator: int) -> float:
    # absent in both prediction and truth counts as a perfect score
    return 1.0 if denominator == 0 else numerator / denominator


def accuracy(counts: ConfusionCounts) -> float:
    if counts.total == 0:
        raise EmptyGrid("accuracy over zero voxels")
    return (counts.tp + counts.tn) / counts.total


def iou_from_counts(counts: ConfusionCounts) -> float:
    return _ratio(counts.tp, counts.tp + counts.fp + counts.fn)


def dice_from_counts(counts: ConfusionCounts) -> float:
    return _ratio(2 * counts.tp, 2 * counts.tp + counts.fp + counts.fn)


def iou(pred: np.ndarray, truth: np.ndarray, class_id: int) -> float:
    """|pred ∩ truth| / |pred ∪ truth| for one class."""

    return iou_from_counts(confusion_counts(pred, truth, class_id))


def dice(pred: np.ndarray, truth: np.ndarray, class_id: int) -> float:
    """2 |pred ∩ truth| / (|pred| + |truth|) for one class."""

    return dice_from_counts(confusion_counts(pred, truth, class_id))


def precision(counts: ConfusionCounts) -> float:
    return _ratio(counts.tp, counts.tp + counts.fp)


def sensitivity(counts: ConfusionCounts) -> float:
    return _ratio(counts.tp, counts.tp + counts.fn)


def specificity(counts: ConfusionCounts) -> float:
    return _ratio(counts.tn, counts.tn + counts.fp)


def bce_terms(probs: np.ndarray, truth: np.ndarray) -> float:
    """Sum of -[y log p + (1-y) log(1-p)] with p clamped to [1e-7, 1 - 1e-7]."""

    probs = np.asarray(probs, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if probs.shape != truth.shape:
        raise ShapeMismatch(f"probabilities {probs.shape} vs truth {truth.shape}")
    clamped = np.clip(probs, BCE_CLAMP, 1.0 - BCE_CLAMP)
    return float(-(truth * np.log(clamped) + (1.0 - truth) * np.log(1.0 - clamped)).sum())


def bce_loss(probs: np.ndarray, truth: np.ndarray) -> float:
    size = np.asarray(probs).size
    if size == 0:
        raise EmptyGrid("cross-entropy over zero voxels")
    return bce_terms(probs, truth) / size


__all__ = [
    "confusion_counts",
    "accuracy",
    "iou",
    "dice",
    "iou_from_counts",
    "dice_from_counts",
    "precision",
    "sensitivity",
    "specificity",
    "bce_terms",
    "bce_loss",
    "NUM_CLASSES",
]
