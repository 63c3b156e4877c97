from __future__ import annotations

from pathlib import Path
from typing import List

import numpy as np
import pytest

from src.config import ModelConfig, PreprocessConfig, TrainConfig
from src.errors import (
    IoFailure,
    MalformedRunLog,
    NonFiniteLoss,
    SegmentationError,
    ShapeMismatch,
    TooFewSamples,
)
from src.model.unet import build
from src.preprocessing.models import Sample
from src.preprocessing.pipeline import discover_subjects, preprocess_subject, subject_from_directory
from src.preprocessing.synthetic import write_synthetic_dataset
from src.training.grid import cell_name, grid_configs, grid_summary, run_grid, write_grid_summary
from src.training.models import EpochLog, RunLog
from src.training.runlog_io import (
    EPOCH_METRICS_FILE,
    SUMMARY_FILE,
    read_runlog_csv,
    runlog_csv,
    write_runlog,
)
from src.training.trainer import EarlyStopping, evaluate, split_dataset, train

from .helpers import make_sample


def _samples(rng: np.random.Generator, count: int, extent: int = 16) -> List[Sample]:
    return [make_sample(rng, f"s{index:02d}", extent) for index in range(count)]


def _config(**overrides) -> TrainConfig:
    values = dict(epochs=3, batch_size=1, learning_rate=1e-3, patience=5, seed=3, log_wall_time=False)
    values.update(overrides)
    return TrainConfig(**values)


class TestSplitDataset:
    def test_twenty_percent_of_ten(self, rng: np.random.Generator) -> None:
        samples = _samples(rng, 10, extent=16)
        train_set, val_set = split_dataset(samples, 0.2, seed=1)
        assert (len(train_set), len(val_set)) == (8, 2)
        train_ids = {sample.subject_id for sample in train_set}
        val_ids = {sample.subject_id for sample in val_set}
        assert not train_ids & val_ids
        assert len(train_ids | val_ids) == 10

    def test_deterministic_per_seed(self, rng: np.random.Generator) -> None:
        samples = _samples(rng, 6)
        first = [sample.subject_id for sample in split_dataset(samples, 0.5, seed=4)[1]]
        second = [sample.subject_id for sample in split_dataset(samples, 0.5, seed=4)[1]]
        assert first == second

    def test_both_sides_keep_one_sample(self, rng: np.random.Generator) -> None:
        samples = _samples(rng, 2)
        assert [len(part) for part in split_dataset(samples, 0.05, seed=0)] == [1, 1]
        assert [len(part) for part in split_dataset(samples, 0.95, seed=0)] == [1, 1]

    def test_too_few_samples(self, rng: np.random.Generator) -> None:
        with pytest.raises(TooFewSamples):
            split_dataset(_samples(rng, 1), 0.2, seed=0)


class TestEarlyStopping:
    def test_plateau_stops_after_patience(self) -> None:
        stopper = EarlyStopping(patience=3)
        assert stopper.update(1, 0.9)
        assert stopper.update(2, 0.5)
        for epoch in (3, 4):
            assert not stopper.update(epoch, 0.5)
            assert not stopper.should_stop(epoch)
        assert not stopper.update(5, 0.5)
        assert stopper.should_stop(5)
        assert stopper.best_epoch == 2

    def test_non_finite_values_never_improve(self) -> None:
        stopper = EarlyStopping(patience=2)
        assert not stopper.update(1, float("nan"))
        assert not stopper.update(2, float("inf"))
        assert not stopper.should_stop(2)
        assert stopper.update(3, 1.0)


class TestTrain:
    def test_zero_learning_rate_keeps_loss_constant(
        self, tiny_model_config: ModelConfig, rng: np.random.Generator
    ) -> None:
        model = build(tiny_model_config, seed=0)
        before = model.state_dict()
        runlog = train(model, _samples(rng, 3), _config(learning_rate=0.0, loss_mix=0.0))
        losses = [log.train_loss for log in runlog.epochs]
        assert losses == pytest.approx([losses[0]] * 3, rel=1e-5)
        assert all(np.array_equal(before[name], value) for name, value in model.state_dict().items())

    def test_best_epoch_is_the_lowest_val_loss(
        self, tiny_model_config: ModelConfig, rng: np.random.Generator
    ) -> None:
        runlog = train(build(tiny_model_config, seed=0), _samples(rng, 4), _config(epochs=4, learning_rate=5e-3))
        val_losses = [log.val_loss for log in runlog.epochs]
        assert runlog.best_epoch == int(np.argmin(val_losses)) + 1
        assert [log.epoch for log in runlog.epochs] == list(range(1, len(runlog.epochs) + 1))
        assert all(log.wall_seconds == 0.0 for log in runlog.epochs)

    def test_restored_model_reproduces_best_epoch(
        self, tiny_model_config: ModelConfig, rng: np.random.Generator
    ) -> None:
        samples = _samples(rng, 4)
        config = _config(epochs=3, learning_rate=5e-3)
        model = build(tiny_model_config, seed=0)
        runlog = train(model, samples, config)
        _, val_set = split_dataset(samples, config.val_fraction, config.seed)
        restored = evaluate(model, val_set)
        best = runlog.best
        assert restored.voxel_accuracy == pytest.approx(best.val_acc, abs=1e-6)
        assert restored.per_class["necrotic"].dice == pytest.approx(best.dice_necrotic, abs=1e-6)
        assert restored.per_class["edema"].dice == pytest.approx(best.dice_edema, abs=1e-6)
        assert restored.per_class["enhancing"].dice == pytest.approx(best.dice_enhancing, abs=1e-6)

    def test_same_seed_same_runlog(self, tiny_model_config: ModelConfig, rng: np.random.Generator) -> None:
        samples = _samples(rng, 3)
        first = train(build(tiny_model_config, seed=0), samples, _config(epochs=2))
        second = train(build(tiny_model_config, seed=0), samples, _config(epochs=2))
        assert runlog_csv(first) == runlog_csv(second)

    def test_early_stop_flag(self, tiny_model_config: ModelConfig, rng: np.random.Generator) -> None:
        runlog = train(
            build(tiny_model_config, seed=0), _samples(rng, 3), _config(epochs=4, learning_rate=0.0, patience=1)
        )
        # nothing changes, so epoch 1 stays best and epoch 2 triggers the stop
        assert runlog.best_epoch == 1
        assert runlog.last_epoch == 2
        assert runlog.stopped_early

    def test_nan_input_aborts_with_context(
        self, tiny_model_config: ModelConfig, rng: np.random.Generator
    ) -> None:
        samples = _samples(rng, 3)
        for sample in samples:
            sample.image[1, :4] = np.nan
        with pytest.raises(NonFiniteLoss) as excinfo:
            train(build(tiny_model_config, seed=0), samples, _config())
        assert (excinfo.value.epoch, excinfo.value.step) == (1, 1)
        assert isinstance(excinfo.value, SegmentationError)

    def test_sample_shape_mismatch(self, tiny_model_config: ModelConfig, rng: np.random.Generator) -> None:
        with pytest.raises(ShapeMismatch):
            train(build(tiny_model_config, seed=0), _samples(rng, 3, extent=32), _config())

    def test_evaluate_needs_samples(self, tiny_model_config: ModelConfig) -> None:
        with pytest.raises(SegmentationError):
            evaluate(build(tiny_model_config, seed=0), [])


class TestRunLogFiles:
    def _runlog(self) -> RunLog:
        runlog = RunLog(config=_config())
        for epoch in (1, 2):
            runlog.append(EpochLog(epoch, 1.0 / epoch, 0.5, 0.9 / epoch, 0.6, 0.1, 0.2, 0.3, 0.0))
        runlog.best_epoch = 2
        return runlog

    def test_columns(self) -> None:
        header = runlog_csv(self._runlog()).splitlines()[0]
        assert header == (
            "epoch,train_loss,train_acc,val_loss,val_acc,dice_necrotic,dice_edema,dice_enhancing,wall_seconds"
        )

    def test_written_csv_reads_back(self, tmp_path: Path) -> None:
        runlog = self._runlog()
        path = write_runlog(runlog, tmp_path)
        assert (tmp_path / EPOCH_METRICS_FILE).is_file()
        assert "best epoch:     2" in (tmp_path / SUMMARY_FILE).read_text(encoding="utf-8")
        assert read_runlog_csv(path) == runlog.epochs

    def test_epochs_must_increase(self) -> None:
        runlog = self._runlog()
        with pytest.raises(SegmentationError):
            runlog.append(EpochLog(2, 0, 0, 0, 0, 0, 0, 0, 0))

    @pytest.mark.parametrize(
        "text",
        [
            "",
            "epoch,train_loss\n1,0.5\n",
            "epoch,train_loss,train_acc,val_loss,val_acc,dice_necrotic,dice_edema,dice_enhancing,wall_seconds\n",
            "epoch,train_loss,train_acc,val_loss,val_acc,dice_necrotic,dice_edema,dice_enhancing,wall_seconds\n"
            "1,x,0,0,0,0,0,0,0\n",
        ],
    )
    def test_malformed(self, tmp_path: Path, text: str) -> None:
        path = tmp_path / "runlog.csv"
        path.write_text(text, encoding="utf-8")
        with pytest.raises(MalformedRunLog):
            read_runlog_csv(path)


class TestGrid:
    def test_cell_order_and_names(self) -> None:
        config = _config(grid_learning_rates=[1e-3, 1e-4], grid_batch_sizes=[1, 2])
        cells = [(cell.batch_size, cell.learning_rate) for cell in grid_configs(config)]
        assert cells == [(1, 1e-3), (1, 1e-4), (2, 1e-3), (2, 1e-4)]
        assert all(not cell.is_grid for cell in grid_configs(config))
        assert cell_name(1e-3, 2) == "lr0.001_bs2"

    def test_single_cell_matches_plain_training(
        self, tiny_model_config: ModelConfig, rng: np.random.Generator
    ) -> None:
        samples = _samples(rng, 3)
        config = _config(epochs=2, grid_learning_rates=[2e-3], grid_batch_sizes=[2])
        cells = run_grid(lambda seed: build(tiny_model_config, seed), samples, config)
        plain = train(
            build(tiny_model_config, config.seed),
            samples,
            _config(epochs=2, learning_rate=2e-3, batch_size=2),
        )
        assert len(cells) == 1
        assert cells[0].name == "lr0.002_bs2"
        assert runlog_csv(cells[0].runlog) == runlog_csv(plain)
        summary = grid_summary(cells).splitlines()
        assert summary[0].split() == ["lr", "batch", "train_acc", "val_acc", "train_loss", "val_loss"]
        assert summary[1].split()[:2] == ["0.002", "2"]

    def test_summary_write_failure(self, tmp_path: Path) -> None:
        blocker = tmp_path / "taken"
        blocker.write_text("not a directory", encoding="utf-8")
        with pytest.raises(IoFailure):
            write_grid_summary([], blocker)


def _learnable_sample(rng: np.random.Generator, subject_id: str, extent: int) -> Sample:
    """Tumor labels visible as brighter intensity bands in every channel."""

    base = make_sample(rng, subject_id, extent)
    levels = np.array([0.1, 0.4, 0.65, 0.9], dtype=np.float32)[base.mask]
    noise = rng.normal(0.0, 0.02, size=(3,) + base.mask.shape).astype(np.float32)
    image = np.clip(levels[None] + noise, 0.0, 1.0).astype(np.float32)
    return Sample(image=image, mask=base.mask, subject_id=subject_id)


@pytest.mark.slow
class TestOverfit:
    def test_two_samples_reach_high_dice(self, rng: np.random.Generator) -> None:
        config = ModelConfig(base_filters=8, levels=2, heads=2, input_extent=(32, 32, 32), attention_token_limit=64)
        samples = [_learnable_sample(rng, f"o{index}", 32) for index in range(2)]
        model = build(config, seed=0)
        train(model, samples, _config(epochs=300, patience=300, batch_size=2, learning_rate=1e-3), val_samples=samples)
        assert evaluate(model, samples).dsc > 0.95

    def test_default_model_on_synthetic_subjects(self, tmp_path: Path) -> None:
        write_synthetic_dataset(tmp_path / "raw", subjects=2, extent=32, seed=11, target_ratio=0.08)
        preprocess = PreprocessConfig(crop_target=(32, 32, 32), dev=True)
        samples = [
            preprocess_subject(subject_from_directory(directory), preprocess)
            for directory in discover_subjects(tmp_path / "raw")
        ]
        assert all(sample is not None for sample in samples)
        model = build(ModelConfig(input_extent=(32, 32, 32)), seed=0)
        # two samples at batch 2: one optimizer step per epoch
        runlog = train(
            model, samples, _config(epochs=300, patience=300, batch_size=2, learning_rate=1e-3), val_samples=samples
        )
        assert runlog.last_epoch == 300
        assert evaluate(model, samples).dsc > 0.95
