"""Aggregation of per-sample counts into a MetricsReport."""
from __future__ import annotations

from typing import Dict, Optional

import numpy as np

from ..autodiff.losses import DICE_SMOOTH, one_hot, soft_dice_terms
from ..errors import EmptyGrid, ShapeMismatch
from .models import CLASS_NAMES, TUMOR_CLASSES, ClassMetrics, ConfusionCounts, MetricsReport
from .scores import (
    NUM_CLASSES,
    accuracy,
    bce_terms,
    confusion_counts,
    dice_from_counts,
    iou_from_counts,
    precision,
    sensitivity,
    specificity,
)


class MetricsAccumulator:
    """Sums confusion counts and soft-Dice terms over samples; ratios are formed once in :meth:`result`."""

    def __init__(self, num_classes: int = NUM_CLASSES) -> None:
        self.num_classes = num_classes
        self.counts = [ConfusionCounts() for _ in range(num_classes)]
        self.intersection = np.zeros(num_classes, dtype=np.float64)
        self.pred_mass = np.zeros(num_classes, dtype=np.float64)
        self.true_mass = np.zeros(num_classes, dtype=np.float64)
        self.bce_sum = 0.0
        self.bce_entries = 0
        self.correct = 0
        self.voxels = 0

    def add(self, pred: np.ndarray, truth: np.ndarray, probs: Optional[np.ndarray] = None) -> "MetricsAccumulator":
        pred, truth = np.asarray(pred), np.asarray(truth)
        for class_id in range(self.num_classes):
            self.counts[class_id] = self.counts[class_id] + confusion_counts(pred, truth, class_id)
        target = one_hot(truth, self.num_classes, dtype=np.float64)
        if probs is None:
            probs = one_hot(pred, self.num_classes, dtype=np.float64)
        probs = np.asarray(probs, dtype=np.float64)
        if probs.shape != target.shape:
            raise ShapeMismatch(f"probabilities {probs.shape} vs expected {target.shape}")
        intersection, pred_mass, true_mass = soft_dice_terms(probs, target)
        self.intersection += intersection
        self.pred_mass += pred_mass
        self.true_mass += true_mass
        self.bce_sum += bce_terms(probs, target)
        self.bce_entries += probs.size
        self.correct += int(np.count_nonzero(pred == truth))
        self.voxels += int(pred.size)
        return self

    def result(self) -> MetricsReport:
        if self.voxels == 0:
            raise EmptyGrid("no voxels accumulated")
        soft = (2.0 * self.intersection + DICE_SMOOTH) / (self.pred_mass + self.true_mass + DICE_SMOOTH)
        per_class: Dict[str, ClassMetrics] = {}
        for class_id in TUMOR_CLASSES:
            counts = self.counts[class_id]
            per_class[CLASS_NAMES[class_id]] = ClassMetrics(
                accuracy=accuracy(counts),
                iou=iou_from_counts(counts),
                dice=dice_from_counts(counts),
                precision=precision(counts),
                sensitivity=sensitivity(counts),
                specificity=specificity(counts),
                soft_dice=float(soft[class_id]),
            )
        return MetricsReport(
            per_class=per_class,
            macro=ClassMetrics.mean(list(per_class.values())),
            bce_loss=self.bce_sum / self.bce_entries,
            dice_loss=float(1.0 - soft.mean()),
            voxel_accuracy=self.correct / self.voxels,
            dsc=float(np.mean([soft[class_id] for class_id in TUMOR_CLASSES])),
            voxels=self.voxels,
            counts={CLASS_NAMES[i]: self.counts[i] for i in range(self.num_classes)},
        )


def report(pred_labels: np.ndarray, truth_labels: np.ndarray, probs: Optional[np.ndarray] = None) -> MetricsReport:
    """Scores for one prediction; without ``probs`` the one-hot of ``pred_labels`` stands in."""

    return MetricsAccumulator().add(pred_labels, truth_labels, probs).result()


__all__ = ["MetricsAccumulator", "report"]
