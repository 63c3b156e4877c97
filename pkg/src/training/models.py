"""Domain models for training runs."""
from __future__ import annotations

from dataclasses import astuple, dataclass, field, fields
from typing import Dict, List, Optional

import numpy as np

from ..config import TrainConfig
from ..errors import SegmentationError
from ..metrics.models import MetricsReport


@dataclass(frozen=True)
class EpochLog:
    """Metrics of one epoch; ``*_acc`` are voxel accuracies, dice columns validation Dice per tumor class."""

    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    dice_necrotic: float
    dice_edema: float
    dice_enhancing: float
    wall_seconds: float

    @classmethod
    def columns(cls) -> List[str]:
        return [item.name for item in fields(cls)]

    def to_row(self) -> List[str]:
        return [str(self.epoch)] + [f"{value:.8f}" for value in astuple(self)[1:]]


@dataclass
class RunLog:
    """Ordered epoch logs of one run plus its early-stopping outcome."""

    config: TrainConfig
    epochs: List[EpochLog] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False
    val_reports: List[MetricsReport] = field(default_factory=list, repr=False)
    best_state: Optional[Dict[str, np.ndarray]] = field(default=None, repr=False)

    def append(self, log: EpochLog, val_report: Optional[MetricsReport] = None) -> None:
        if self.epochs and log.epoch <= self.epochs[-1].epoch:
            raise SegmentationError(f"epoch {log.epoch} does not follow epoch {self.epochs[-1].epoch}")
        self.epochs.append(log)
        if val_report is not None:
            self.val_reports.append(val_report)

    @property
    def best(self) -> EpochLog:
        for log in self.epochs:
            if log.epoch == self.best_epoch:
                return log
        raise SegmentationError(f"best epoch {self.best_epoch} was never logged")

    @property
    def last_epoch(self) -> int:
        return self.epochs[-1].epoch if self.epochs else 0


__all__ = ["EpochLog", "RunLog"]
