"""Domain models for segmentation metrics."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Dict, List, Mapping

CLASS_NAMES = ("background", "necrotic", "edema", "enhancing")
TUMOR_CLASSES = (1, 2, 3)
SCORE_NAMES = ("accuracy", "iou", "dice", "precision", "sensitivity", "specificity", "soft_dice")


@dataclass(frozen=True)
class ConfusionCounts:
    """One-vs-rest voxel counts for a single class."""

    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn)


@dataclass(frozen=True)
class ClassMetrics:
    accuracy: float
    iou: float
    dice: float
    precision: float
    sensitivity: float
    specificity: float
    soft_dice: float

    @classmethod
    def mean(cls, items: List["ClassMetrics"]) -> "ClassMetrics":
        return cls(**{name: sum(getattr(item, name) for item in items) / len(items) for name in SCORE_NAMES})

    def as_dict(self) -> Dict[str, float]:
        return {item.name: getattr(self, item.name) for item in fields(self)}


@dataclass(frozen=True)
class MetricsReport:
    """Per tumor class and macro scores, plus the loss terms.

    ``dsc`` is the macro soft Dice over tumor classes and ``voxel_accuracy`` the
    fraction of voxels labelled correctly across all classes.
    """

    per_class: Mapping[str, ClassMetrics]
    macro: ClassMetrics
    bce_loss: float
    dice_loss: float
    voxel_accuracy: float
    dsc: float
    voxels: int = 0
    counts: Mapping[str, ConfusionCounts] = field(default_factory=dict)

    @staticmethod
    def csv_header() -> List[str]:
        columns = ["voxel_accuracy", "dsc", "bce_loss", "dice_loss"]
        columns += [f"macro_{name}" for name in SCORE_NAMES]
        for class_id in TUMOR_CLASSES:
            columns += [f"{CLASS_NAMES[class_id]}_{name}" for name in SCORE_NAMES]
        return columns

    def to_csv_row(self) -> List[str]:
        values = [self.voxel_accuracy, self.dsc, self.bce_loss, self.dice_loss]
        values += [getattr(self.macro, name) for name in SCORE_NAMES]
        for class_id in TUMOR_CLASSES:
            scores = self.per_class[CLASS_NAMES[class_id]]
            values += [getattr(scores, name) for name in SCORE_NAMES]
        return [f"{value:.8f}" for value in values]

    def to_text(self) -> str:
        lines = [
            f"voxels:          {self.voxels}",
            f"voxel accuracy:  {self.voxel_accuracy:.4f}",
            f"DSC (soft):      {self.dsc:.4f}",
            f"BCE loss:        {self.bce_loss:.6f}",
            f"Dice loss:       {self.dice_loss:.6f}",
            "",
            f"{'class':<12}" + "".join(f"{name:>13}" for name in SCORE_NAMES),
        ]
        rows = [(name, self.per_class[name]) for name in (CLASS_NAMES[i] for i in TUMOR_CLASSES)]
        rows.append(("macro", self.macro))
        for name, scores in rows:
            lines.append(f"{name:<12}" + "".join(f"{getattr(scores, item):>13.4f}" for item in SCORE_NAMES))
        return "\n".join(lines) + "\n"


__all__ = ["ConfusionCounts", "ClassMetrics", "MetricsReport", "CLASS_NAMES", "TUMOR_CLASSES", "SCORE_NAMES"]
