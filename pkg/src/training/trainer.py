"""Mini-batch training loop, evaluation and early stopping."""
from __future__ import annotations

import logging
import math
import time
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..autodiff.losses import categorical_cross_entropy, dice_loss, one_hot
from ..autodiff.ops import add, scale
from ..autodiff.optim import AdamState, adam_step
from ..autodiff.tensor import Tape, Tensor, backward
from ..config import TrainConfig
from ..errors import EmptyGrid, NonFiniteInput, NonFiniteLoss, ShapeMismatch, TooFewSamples
from ..metrics.models import CLASS_NAMES, MetricsReport
from ..metrics.report import MetricsAccumulator
from ..model.unet import UNet3DMHA, predict_labels
from ..preprocessing.models import Sample
from .models import EpochLog, RunLog

LOGGER = logging.getLogger(__name__)


class EarlyStopping:
    """Track the best validation loss; stop after ``patience`` epochs without strict improvement."""

    def __init__(self, patience: int) -> None:
        self.patience = patience
        self.best_value = math.inf
        self.best_epoch = 0

    def update(self, epoch: int, value: float) -> bool:
        """Record ``value`` for ``epoch``; True when it is a new best."""

        if math.isfinite(value) and value < self.best_value:
            self.best_value = value
            self.best_epoch = epoch
            return True
        return False

    def should_stop(self, epoch: int) -> bool:
        return self.best_epoch > 0 and epoch - self.best_epoch >= self.patience


def split_dataset(
    samples: Sequence[Sample], val_fraction: float, seed: int
) -> Tuple[List[Sample], List[Sample]]:
    """Seeded shuffle, then the first ``round(n * val_fraction)`` samples (at least one each side) validate."""

    count = len(samples)
    if count < 2:
        raise TooFewSamples(f"need at least 2 samples to split, got {count}")
    n_val = min(max(int(math.floor(count * val_fraction + 0.5)), 1), count - 1)
    order = np.random.default_rng(seed).permutation(count)
    val = [samples[index] for index in order[:n_val]]
    train_set = [samples[index] for index in order[n_val:]]
    return train_set, val


def _batches(samples: Sequence[Sample], batch_size: int, rng: np.random.Generator) -> Iterator[List[Sample]]:
    order = rng.permutation(len(samples))
    for start in range(0, len(order), batch_size):
        yield [samples[index] for index in order[start:start + batch_size]]


def _check_samples(model: UNet3DMHA, samples: Sequence[Sample]) -> None:
    expected = (model.config.in_channels, *model.config.input_extent)
    for sample in samples:
        if sample.image.shape != expected:
            raise ShapeMismatch(f"{sample.subject_id}: image {sample.image.shape} does not fit model input {expected}")
        if sample.mask.shape != expected[1:]:
            raise ShapeMismatch(f"{sample.subject_id}: mask {sample.mask.shape} does not fit {expected[1:]}")


def _objective(probs: Tensor, target: np.ndarray, loss_mix: float) -> Tensor:
    loss = categorical_cross_entropy(probs, target)
    if loss_mix:
        loss = add(loss, scale(dice_loss(probs, target), loss_mix))
    return loss


def _forward(model: UNet3DMHA, sample: Sample, epoch: int, step: int) -> Tensor:
    try:
        return model.forward(sample.image)
    except NonFiniteInput as exc:
        raise NonFiniteLoss(f"non-finite activations on {sample.subject_id}: {exc}", epoch, step) from exc


def _train_epoch(
    model: UNet3DMHA,
    samples: Sequence[Sample],
    config: TrainConfig,
    state: AdamState,
    rng: np.random.Generator,
    epoch: int,
) -> Tuple[float, float]:
    """One pass over ``samples``; returns (mean batch loss, running voxel accuracy)."""

    num_classes = model.config.num_classes
    batch_losses: List[float] = []
    correct = 0
    voxels = 0
    for step, batch in enumerate(_batches(samples, config.batch_size, rng), start=1):
        model.zero_grad()
        batch_loss = 0.0
        for sample in batch:
            target = one_hot(sample.mask, num_classes, dtype=model.dtype)
            with Tape():
                probs = _forward(model, sample, epoch, step)
                loss = scale(_objective(probs, target, config.loss_mix), 1.0 / len(batch))
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteLoss(f"loss became {value} on {sample.subject_id}", epoch, step)
            backward(loss)
            batch_loss += value
            labels = predict_labels(probs)
            correct += int(np.count_nonzero(labels == sample.mask))
            voxels += int(sample.mask.size)
        adam_step(model.params, {name: param.grad for name, param in model.params.items()}, state)
        batch_losses.append(batch_loss)
        LOGGER.debug("Optimizer step", extra={"epoch": epoch, "step": step, "loss": batch_loss})
    return float(np.mean(batch_losses)), correct / voxels


def _validate(model: UNet3DMHA, samples: Sequence[Sample], loss_mix: float) -> Tuple[float, MetricsReport]:
    accumulator = MetricsAccumulator(model.config.num_classes)
    losses: List[float] = []
    for sample in samples:
        probs = model.forward(sample.image)
        target = one_hot(sample.mask, model.config.num_classes, dtype=model.dtype)
        losses.append(_objective(probs, target, loss_mix).item())
        accumulator.add(predict_labels(probs), sample.mask, probs.data)
    return float(np.mean(losses)), accumulator.result()


def train(
    model: UNet3DMHA,
    samples: Sequence[Sample],
    config: TrainConfig,
    val_samples: Optional[Sequence[Sample]] = None,
) -> RunLog:
    """Train ``model`` in place with Adam on CE + loss_mix * soft Dice.

    Without ``val_samples`` the dataset is split by ``config.val_fraction``.
    The returned RunLog holds the best-val-loss parameters in ``best_state``;
    with ``restore_best`` they are loaded back into ``model`` before returning.
    """

    if val_samples is None:
        train_set, val_set = split_dataset(samples, config.val_fraction, config.seed)
    else:
        train_set, val_set = list(samples), list(val_samples)
    if not train_set or not val_set:
        raise TooFewSamples("training and validation sets must both be nonempty")
    _check_samples(model, train_set)
    _check_samples(model, val_set)

    state = AdamState(
        lr=config.learning_rate, beta1=config.adam_beta1, beta2=config.adam_beta2, epsilon=config.adam_epsilon
    )
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
    stopper = EarlyStopping(config.patience)
    runlog = RunLog(config=config.model_copy())
    LOGGER.info(
        "Starting training",
        extra={"train": len(train_set), "val": len(val_set), "epochs": config.epochs, "lr": config.learning_rate},
    )
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        train_loss, train_acc = _train_epoch(model, train_set, config, state, rng, epoch)
        val_loss, val_report = _validate(model, val_set, config.loss_mix)
        wall = time.perf_counter() - started if config.log_wall_time else 0.0
        per_class = val_report.per_class
        log = EpochLog(
            epoch=epoch,
            train_loss=train_loss,
            train_acc=train_acc,
            val_loss=val_loss,
            val_acc=val_report.voxel_accuracy,
            dice_necrotic=per_class[CLASS_NAMES[1]].dice,
            dice_edema=per_class[CLASS_NAMES[2]].dice,
            dice_enhancing=per_class[CLASS_NAMES[3]].dice,
            wall_seconds=wall,
        )
        runlog.append(log, val_report)
        if stopper.update(epoch, val_loss):
            runlog.best_state = model.state_dict()
        runlog.best_epoch = stopper.best_epoch
        LOGGER.info(
            "Epoch complete",
            extra={"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "best_epoch": stopper.best_epoch},
        )
        if stopper.should_stop(epoch):
            runlog.stopped_early = True
            LOGGER.info("Early stopping", extra={"epoch": epoch, "best_epoch": stopper.best_epoch})
            break
    if runlog.best_state is None:
        # every val_loss was non-finite
        raise NonFiniteLoss("validation loss never became finite", runlog.last_epoch, 0)
    if config.restore_best:
        model.load_state_dict(runlog.best_state)
    return runlog


def evaluate(model: UNet3DMHA, samples: Sequence[Sample]) -> MetricsReport:
    """Aggregate report over ``samples``; counts are summed before any ratio is taken."""

    if not samples:
        raise EmptyGrid("evaluate needs at least one sample")
    _check_samples(model, samples)
    accumulator = MetricsAccumulator(model.config.num_classes)
    for sample in samples:
        probs = model.forward(sample.image)
        accumulator.add(predict_labels(probs), sample.mask, probs.data)
        LOGGER.debug("Evaluated sample", extra={"subject_id": sample.subject_id})
    return accumulator.result()


__all__ = ["EarlyStopping", "split_dataset", "train", "evaluate"]
