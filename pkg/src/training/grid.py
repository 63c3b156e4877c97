"""Learning-rate x batch-size hyperparameter grid."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence

from ..config import TrainConfig
from ..errors import IoFailure
from ..model.unet import UNet3DMHA
from ..preprocessing.models import Sample
from .models import RunLog
from .trainer import train

LOGGER = logging.getLogger(__name__)

GRID_SUMMARY_FILE = "grid_summary.txt"
GRID_COLUMNS = ("lr", "batch", "train_acc", "val_acc", "train_loss", "val_loss")


@dataclass
class GridCell:
    learning_rate: float
    batch_size: int
    runlog: RunLog
    model: UNet3DMHA

    @property
    def name(self) -> str:
        return cell_name(self.learning_rate, self.batch_size)


def cell_name(learning_rate: float, batch_size: int) -> str:
    return f"lr{learning_rate:g}_bs{batch_size}"


def grid_configs(config: TrainConfig) -> List[TrainConfig]:
    """One single-run config per (batch, lr) cell, batch-major."""

    learning_rates = config.grid_learning_rates or [config.learning_rate]
    batch_sizes = config.grid_batch_sizes or [config.batch_size]
    return [
        config.model_copy(
            update={
                "learning_rate": learning_rate,
                "batch_size": batch_size,
                "grid_learning_rates": None,
                "grid_batch_sizes": None,
            }
        )
        for batch_size in batch_sizes
        for learning_rate in learning_rates
    ]


def run_grid(
    build_model: Callable[[int], UNet3DMHA],
    samples: Sequence[Sample],
    config: TrainConfig,
    on_cell: Optional[Callable[[GridCell], None]] = None,
) -> List[GridCell]:
    """Train a fresh model from ``build_model(seed)`` for every grid cell.

    Cells share nothing but the read-only samples, so each cell's RunLog
    depends only on its own (lr, batch) pair and the seed.
    """

    cells: List[GridCell] = []
    for cell_config in grid_configs(config):
        LOGGER.info(
            "Training grid cell",
            extra={"lr": cell_config.learning_rate, "batch_size": cell_config.batch_size},
        )
        model = build_model(cell_config.seed)
        cell = GridCell(cell_config.learning_rate, cell_config.batch_size, train(model, samples, cell_config), model)
        if on_cell is not None:
            on_cell(cell)
        cells.append(cell)
    return cells


def grid_summary(cells: Sequence[GridCell]) -> str:
    """Fixed-width table of best-epoch values, one row per cell."""

    lines = ["".join(f"{column:>12}" for column in GRID_COLUMNS)]
    for cell in cells:
        best = cell.runlog.best
        values = [f"{cell.learning_rate:g}", str(cell.batch_size)]
        values += [f"{value:.4f}" for value in (best.train_acc, best.val_acc, best.train_loss, best.val_loss)]
        lines.append("".join(f"{value:>12}" for value in values))
    return "\n".join(lines) + "\n"


def write_grid_summary(cells: Sequence[GridCell], out_dir: Path) -> Path:
    path = Path(out_dir) / GRID_SUMMARY_FILE
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(grid_summary(cells), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"Cannot write {path}: {exc}") from exc
    return path


__all__ = ["GridCell", "cell_name", "grid_configs", "run_grid", "grid_summary", "write_grid_summary"]
