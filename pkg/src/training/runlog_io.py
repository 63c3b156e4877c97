"""RunLog persistence: CSV, per-epoch metrics CSV and summary text."""
from __future__ import annotations

import csv
import io
import logging
from pathlib import Path
from typing import List

from ..config import dump_config
from ..errors import IoFailure, MalformedRunLog
from ..metrics.models import MetricsReport
from .models import EpochLog, RunLog

LOGGER = logging.getLogger(__name__)

RUNLOG_FILE = "runlog.csv"
EPOCH_METRICS_FILE = "epoch_metrics.csv"
SUMMARY_FILE = "summary.txt"


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8", newline="")
    except OSError as exc:
        raise IoFailure(f"Cannot write {path}: {exc}") from exc


def runlog_csv(runlog: RunLog) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(EpochLog.columns())
    for log in runlog.epochs:
        writer.writerow(log.to_row())
    return buffer.getvalue()


def epoch_metrics_csv(runlog: RunLog) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["epoch"] + MetricsReport.csv_header())
    for log, report in zip(runlog.epochs, runlog.val_reports):
        writer.writerow([str(log.epoch)] + report.to_csv_row())
    return buffer.getvalue()


def summary_text(runlog: RunLog) -> str:
    best = runlog.best
    lines = [
        f"epochs run:     {runlog.last_epoch}",
        f"best epoch:     {runlog.best_epoch}",
        f"stopped early:  {'yes' if runlog.stopped_early else 'no'}",
        f"train loss:     {best.train_loss:.6f}",
        f"train accuracy: {best.train_acc:.6f}",
        f"val loss:       {best.val_loss:.6f}",
        f"val accuracy:   {best.val_acc:.6f}",
        f"dice necrotic:  {best.dice_necrotic:.6f}",
        f"dice edema:     {best.dice_edema:.6f}",
        f"dice enhancing: {best.dice_enhancing:.6f}",
        "",
        "[train]",
        dump_config(runlog.config).rstrip("\n"),
    ]
    if len(runlog.val_reports) >= runlog.best_epoch > 0:
        lines += ["", "[best epoch validation]", runlog.val_reports[runlog.best_epoch - 1].to_text().rstrip("\n")]
    return "\n".join(lines) + "\n"


def write_runlog(runlog: RunLog, out_dir: Path) -> Path:
    """Write runlog.csv, epoch_metrics.csv and summary.txt; returns the RunLog CSV path."""

    out_dir = Path(out_dir)
    _write_text(out_dir / RUNLOG_FILE, runlog_csv(runlog))
    _write_text(out_dir / EPOCH_METRICS_FILE, epoch_metrics_csv(runlog))
    _write_text(out_dir / SUMMARY_FILE, summary_text(runlog))
    LOGGER.info("Wrote run log", extra={"path": str(out_dir), "epochs": runlog.last_epoch})
    return out_dir / RUNLOG_FILE


def read_runlog_csv(path: Path) -> List[EpochLog]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"Cannot read {path}: {exc}") from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != EpochLog.columns():
        raise MalformedRunLog(f"{path}: missing or unexpected header")
    if len(rows) == 1:
        raise MalformedRunLog(f"{path}: no epochs")
    logs = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(EpochLog.columns()):
            raise MalformedRunLog(f"{path}:{lineno}: expected {len(EpochLog.columns())} cells, got {len(row)}")
        try:
            logs.append(EpochLog(int(row[0]), *(float(cell) for cell in row[1:])))
        except ValueError as exc:
            raise MalformedRunLog(f"{path}:{lineno}: {exc}") from exc
    return logs


__all__ = [
    "runlog_csv",
    "epoch_metrics_csv",
    "summary_text",
    "write_runlog",
    "read_runlog_csv",
    "RUNLOG_FILE",
    "EPOCH_METRICS_FILE",
    "SUMMARY_FILE",
]
