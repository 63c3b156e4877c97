"""Command handlers behind ``python -m src.main``.

Each handler takes the parsed argparse namespace and returns an exit code.
Library errors propagate to the entry point, which maps them to exit codes.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

from ..config import AppConfig, ModelConfig, build_section, dump_config, load_model_config, load_settings
from ..errors import BadConfig, IoFailure, MissingInput, ShapeMismatch
from ..metrics.models import MetricsReport
from ..metrics.report import MetricsAccumulator
from ..model.unet import UNet3DMHA, build, predict_labels
from ..preprocessing.pipeline import OutcomeStatus, preprocess_dataset
from ..preprocessing.synthetic import write_synthetic_dataset
from ..storage.checkpoint import load_checkpoint, save_checkpoint
from ..storage.sample_store import load_array, load_dataset, load_sample, read_manifest, save_array
from ..training.grid import GridCell, run_grid, write_grid_summary
from ..training.runlog_io import read_runlog_csv, write_runlog
from ..training.trainer import evaluate, split_dataset, train
from .manifest import RunManifest, recorded_run
from .overlay import write_overlays
from .plots import write_plots

LOGGER = logging.getLogger(__name__)

CHECKPOINT_FILE = "best.ckpt"
MODEL_CONFIG_FILE = "model.cfg"
PREDICTION_FILE = "prediction.smp1"
METRICS_CSV = "metrics.csv"
METRICS_TEXT = "metrics.txt"


def _overrides(args: argparse.Namespace, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    values: Dict[str, Any] = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise BadConfig(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = value.strip()
    for key, value in (extra or {}).items():
        if value is not None:
            values[key] = value
    return values


def _settings(args: argparse.Namespace, extra: Optional[Dict[str, Any]] = None) -> AppConfig:
    return load_settings(getattr(args, "config", None), _overrides(args, extra))


def _manifest(command: str, args: argparse.Namespace, inputs: Dict[str, Any], seed: Optional[int] = None) -> RunManifest:
    config = getattr(args, "config", None)
    return RunManifest(
        command=command,
        config_path=str(config) if config else None,
        input_roots={name: str(value) for name, value in inputs.items() if value is not None},
        output_root=str(args.out),
        seed=seed,
    )


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"Cannot write {path}: {exc}") from exc


def cmd_preprocess(args: argparse.Namespace) -> int:
    settings = _settings(args, {"crop_target": args.crop, "label_ratio_threshold": args.ratio, "dev": args.dev or None})
    with recorded_run(_manifest("preprocess", args, {"in": args.in_root})):
        outcomes = preprocess_dataset(args.in_root, args.out, settings.preprocess, threads=args.threads)
    failed = [outcome for outcome in outcomes if outcome.status is OutcomeStatus.FAILED]
    for outcome in failed:
        LOGGER.error("Subject not preprocessed", extra={"subject_id": outcome.subject_id, "error": outcome.detail})
    LOGGER.info(
        "Preprocessing finished",
        extra={
            "accepted": sum(outcome.status is OutcomeStatus.ACCEPTED for outcome in outcomes),
            "skipped": sum(outcome.status is OutcomeStatus.SKIPPED for outcome in outcomes),
            "failed": len(failed),
        },
    )
    return 2 if failed else 0


def cmd_synth_data(args: argparse.Namespace) -> int:
    settings = _settings(args, {"dev": args.dev or None})
    multiple = settings.preprocess.crop_multiple
    if args.extent <= 0 or args.extent % multiple:
        raise BadConfig(f"--extent {args.extent} must be a positive multiple of {multiple}")
    if args.subjects < 1:
        raise BadConfig("--subjects must be at least 1")
    with recorded_run(_manifest("synth-data", args, {}, seed=args.seed)):
        write_synthetic_dataset(
            args.out, args.subjects, args.extent, args.seed, target_ratio=args.target_ratio, tumors=args.tumors
        )
    LOGGER.info("Synthetic dataset written", extra={"subjects": args.subjects, "path": str(args.out)})
    return 0


def _dataset_model_config(settings: AppConfig, extent: tuple) -> ModelConfig:
    values = settings.model.model_dump()
    values["input_extent"] = extent
    return build_section(ModelConfig, **values)


def _save_run(out_dir: Path, runlog, model_config: ModelConfig) -> None:
    write_runlog(runlog, out_dir)
    save_checkpoint(runlog.best_state, out_dir / CHECKPOINT_FILE)
    _write_text(out_dir / MODEL_CONFIG_FILE, dump_config(model_config))


def cmd_train(args: argparse.Namespace) -> int:
    settings = _settings(args, {"seed": args.seed})
    samples = load_dataset(args.data)
    if not samples:
        raise MissingInput(f"No samples listed in {args.data}")
    model_config = _dataset_model_config(settings, samples[0].extent)
    train_config = settings.train
    out = Path(args.out)

    def builder(seed: int) -> UNet3DMHA:
        return build(model_config, seed)

    with recorded_run(_manifest("train", args, {"data": args.data}, seed=train_config.seed)):
        if train_config.is_grid:
            def on_cell(cell: GridCell) -> None:
                _save_run(out / cell.name, cell.runlog, model_config)

            cells = run_grid(builder, samples, train_config, on_cell=on_cell)
            write_grid_summary(cells, out)
        else:
            model = builder(train_config.seed)
            runlog = train(model, samples, train_config)
            _save_run(out, runlog, model_config)
            train_set, _ = split_dataset(samples, train_config.val_fraction, train_config.seed)
            final = evaluate(model, train_set)
            LOGGER.info(
                "Final training-set scores",
                extra={"dsc": final.dsc, "macro_dice": final.macro.dice, "best_epoch": runlog.best_epoch},
            )
    return 0


def _load_model(ckpt: Path) -> UNet3DMHA:
    config_path = Path(ckpt).parent / MODEL_CONFIG_FILE
    if not config_path.is_file():
        raise MissingInput(f"Model configuration {config_path} not found beside checkpoint")
    model = build(load_model_config(config_path), seed=0)
    model.load_state_dict(load_checkpoint(ckpt))
    return model


def report_csv(report: MetricsReport) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(MetricsReport.csv_header())
    writer.writerow(report.to_csv_row())
    return buffer.getvalue()


def cmd_evaluate(args: argparse.Namespace) -> int:
    with recorded_run(_manifest("evaluate", args, {"data": args.data, "ckpt": args.ckpt, "predictions": args.predictions})):
        if args.ckpt:
            model = _load_model(args.ckpt)
            report = evaluate(model, load_dataset(args.data))
        else:
            accumulator = MetricsAccumulator()
            for subject_id in read_manifest(args.data):
                sample = load_sample(args.data, subject_id)
                predicted = load_array(Path(args.predictions) / subject_id / PREDICTION_FILE)
                if predicted.shape != sample.mask.shape:
                    raise ShapeMismatch(f"{subject_id}: prediction {predicted.shape} vs mask {sample.mask.shape}")
                accumulator.add(predicted, sample.mask)
            report = accumulator.result()
        out = Path(args.out)
        _write_text(out / METRICS_CSV, report_csv(report))
        _write_text(out / METRICS_TEXT, report.to_text())
    LOGGER.info("Evaluation finished", extra={"dsc": report.dsc, "macro_dice": report.macro.dice})
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    sample_dir = Path(args.in_sample)
    with recorded_run(_manifest("predict", args, {"in": sample_dir, "ckpt": args.ckpt})):
        sample = load_sample(sample_dir.parent, sample_dir.name)
        model = _load_model(args.ckpt)
        labels = predict_labels(model.forward(sample.image))
        target = Path(args.out) / sample.subject_id
        save_array(labels, target / PREDICTION_FILE)
        slices: List[Path] = write_overlays(sample.image, labels, target)
    LOGGER.info("Prediction written", extra={"subject_id": sample.subject_id, "slices": len(slices)})
    return 0


def cmd_plot(args: argparse.Namespace) -> int:
    with recorded_run(_manifest("plot", args, {"runlog": args.runlog})):
        logs = read_runlog_csv(args.runlog)
        paths = write_plots(logs, args.out)
    LOGGER.info("Plots written", extra={"charts": len(paths), "epochs": len(logs)})
    return 0


__all__ = [
    "cmd_preprocess",
    "cmd_synth_data",
    "cmd_train",
    "cmd_evaluate",
    "cmd_predict",
    "cmd_plot",
    "report_csv",
]
