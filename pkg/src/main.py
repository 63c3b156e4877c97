"""Command-line entrypoint for the brain-tumor segmentation engine."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .cli.commands import cmd_evaluate, cmd_plot, cmd_predict, cmd_preprocess, cmd_synth_data, cmd_train
from .config import LoggingConfig, get_settings
from .errors import NonFiniteLoss, SegmentationError

LOGGER = logging.getLogger(__name__)

EXIT_INPUT = 2
EXIT_NUMERICAL = 3


def _with_config(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="Flat key=value configuration file")
    parser.add_argument(
        "--set", action="append", metavar="KEY=VALUE", help="Override one configuration field (repeatable)"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="python -m src.main", description="3D brain-tumor segmentation")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--log-level", help="Override the configured log level")
    commands = parser.add_subparsers(dest="command", required=True)

    preprocess = commands.add_parser("preprocess", help="BraTS subjects -> cropped SMP1 samples")
    preprocess.add_argument("--in", dest="in_root", type=Path, required=True)
    preprocess.add_argument("--out", type=Path, required=True)
    preprocess.add_argument("--crop", help="Crop target D,H,W")
    preprocess.add_argument("--ratio", type=float, help="Minimum nonzero-label ratio")
    preprocess.add_argument("--dev", action="store_true", help="Allow crop extents in multiples of 16")
    preprocess.add_argument("--threads", type=int, default=1)
    _with_config(preprocess)
    preprocess.set_defaults(handler=cmd_preprocess)

    synth = commands.add_parser("synth-data", help="Write synthetic BraTS-layout subjects")
    synth.add_argument("--out", type=Path, required=True)
    synth.add_argument("--subjects", type=int, default=2)
    synth.add_argument("--extent", type=int, default=64)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--target-ratio", type=float, default=0.05, help="Labelled fraction of each mask")
    synth.add_argument("--tumors", type=int, default=1)
    synth.add_argument("--dev", action="store_true", help="Allow extents in multiples of 16")
    _with_config(synth)
    synth.set_defaults(handler=cmd_synth_data)

    train = commands.add_parser("train", help="Train on preprocessed samples")
    train.add_argument("--data", type=Path, required=True)
    train.add_argument("--out", type=Path, required=True)
    train.add_argument("--seed", type=int)
    _with_config(train)
    train.set_defaults(handler=cmd_train)

    evaluate = commands.add_parser("evaluate", help="Score a checkpoint or stored predictions")
    evaluate.add_argument("--data", type=Path, required=True)
    source = evaluate.add_mutually_exclusive_group(required=True)
    source.add_argument("--ckpt", type=Path)
    source.add_argument("--predictions", type=Path, help="Directory written by the predict command")
    evaluate.add_argument("--out", type=Path, required=True)
    evaluate.set_defaults(handler=cmd_evaluate)

    predict = commands.add_parser("predict", help="Label one sample and export slice overlays")
    predict.add_argument("--in", dest="in_sample", type=Path, required=True, help="Sample directory")
    predict.add_argument("--ckpt", type=Path, required=True)
    predict.add_argument("--out", type=Path, required=True)
    predict.set_defaults(handler=cmd_predict)

    plot = commands.add_parser("plot", help="SVG charts from a RunLog CSV")
    plot.add_argument("--runlog", type=Path, required=True)
    plot.add_argument("--out", type=Path, required=True)
    plot.set_defaults(handler=cmd_plot)
    return parser


def configure_logging(level: Optional[str]) -> None:
    try:
        logging_config: LoggingConfig = get_settings().logging
    except Exception:  # unreadable environment falls back to defaults
        logging_config = LoggingConfig()
    logging.basicConfig(level=(level or logging_config.level).upper(), format=logging_config.format)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.handler(args)
    except NonFiniteLoss as exc:
        LOGGER.error(
            "Training diverged at epoch %d step %d: %s", exc.epoch, exc.step, exc,
            extra={"epoch": exc.epoch, "step": exc.step},
        )
        return EXIT_NUMERICAL
    except SegmentationError as exc:
        LOGGER.error("%s failed: %s", args.command, exc, extra={"command": args.command})
        return EXIT_INPUT
    except OSError as exc:
        LOGGER.error("%s I/O failure: %s", args.command, exc, extra={"command": args.command})
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
