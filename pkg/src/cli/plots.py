"""Metric-vs-epoch line charts emitted directly as SVG 1.1 markup."""
from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Sequence
from xml.sax.saxutils import escape

from ..errors import IoFailure
from ..training.models import EpochLog

WIDTH = 640
HEIGHT = 400
MARGIN = 50
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728")

CHARTS = {
    "accuracy.svg": ("Accuracy", ("train_acc", "val_acc")),
    "loss.svg": ("Loss", ("train_loss", "val_loss")),
    "dice.svg": ("Validation Dice", ("dice_necrotic", "dice_edema", "dice_enhancing")),
}


def _scale(values: Sequence[float], low: float, high: float, out_low: float, out_high: float) -> List[float]:
    if high == low:
        middle = (out_low + out_high) / 2.0
        return [middle for _ in values]
    return [out_low + (value - low) * (out_high - out_low) / (high - low) for value in values]


def line_chart_svg(title: str, epochs: Sequence[int], series: Dict[str, Sequence[float]]) -> str:
    """One polyline per series; larger values sit higher on the chart."""

    all_values = [value for values in series.values() for value in values]
    low, high = min(all_values), max(all_values)
    xs = _scale(epochs, min(epochs), max(epochs), MARGIN, WIDTH - MARGIN)
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" font-size="16">{escape(title)}</text>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<text x="{WIDTH / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle" font-size="12">epoch</text>',
        f'<text x="{MARGIN - 6}" y="{MARGIN}" text-anchor="end" font-size="10">{high:.4g}</text>',
        f'<text x="{MARGIN - 6}" y="{HEIGHT - MARGIN}" text-anchor="end" font-size="10">{low:.4g}</text>',
    ]
    for index, (name, values) in enumerate(series.items()):
        color = PALETTE[index % len(PALETTE)]
        ys = _scale(values, low, high, HEIGHT - MARGIN, MARGIN)
        points = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline id="{escape(name)}" fill="none" stroke="{color}" stroke-width="2" points="{points}"/>')
        parts.append(
            f'<text x="{WIDTH - MARGIN + 4}" y="{MARGIN + 14 * index}" font-size="11" fill="{color}">{escape(name)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_plots(logs: Sequence[EpochLog], out_dir: Path) -> List[Path]:
    out_dir = Path(out_dir)
    epochs = [log.epoch for log in logs]
    paths = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for filename, (title, columns) in CHARTS.items():
            series = {column: [getattr(log, column) for log in logs] for column in columns}
            path = out_dir / filename
            path.write_text(line_chart_svg(title, epochs, series), encoding="utf-8")
            paths.append(path)
    except OSError as exc:
        raise IoFailure(f"Cannot write plots under {out_dir}: {exc}") from exc
    return paths


__all__ = ["line_chart_svg", "write_plots", "CHARTS"]
