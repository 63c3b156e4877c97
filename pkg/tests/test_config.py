from __future__ import annotations

from pathlib import Path

import pytest

from src.config import (
    AppConfig,
    Modality,
    ModelConfig,
    PreprocessConfig,
    TrainConfig,
    build_section,
    dump_config,
    load_model_config,
    load_settings,
    parse_config_text,
)
from src.errors import BadConfig, IoFailure


class TestDefaults:
    def test_sections(self) -> None:
        settings = AppConfig()
        assert settings.preprocess.crop_target == (128, 128, 128)
        assert settings.preprocess.modalities == [Modality.T2, Modality.T1CE, Modality.FLAIR]
        assert settings.model.base_filters == 16
        assert settings.model.levels == 4
        assert settings.train.learning_rate == 1e-3
        assert settings.train.val_fraction == 0.2
        assert not settings.train.is_grid
        assert settings.logging.level == "INFO"

    def test_filter_ladder(self) -> None:
        config = ModelConfig()
        assert [config.filters(level) for level in range(4)] == [16, 32, 64, 128]
        assert config.bottleneck_filters == 256
        assert config.d_model(3) == 64


class TestParseConfigText:
    def test_bare_and_dotted_keys(self) -> None:
        values = parse_config_text("# comment\n\nepochs = 4\nmodel.heads=2\ncrop_target=64,64,64\n")
        assert values == {"train": {"epochs": "4"}, "model": {"heads": "2"}, "preprocess": {"crop_target": "64,64,64"}}

    def test_unknown_key(self) -> None:
        with pytest.raises(BadConfig):
            parse_config_text("no_such_key=1\n")

    def test_unknown_section(self) -> None:
        with pytest.raises(BadConfig):
            parse_config_text("network.heads=2\n")

    def test_line_without_equals(self) -> None:
        with pytest.raises(BadConfig):
            parse_config_text("epochs 4\n")


class TestLoadSettings:
    def test_precedence(self, tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setenv("BTS_TRAIN__EPOCHS", "7")
        monkeypatch.setenv("BTS_TRAIN__PATIENCE", "2")
        assert load_settings().train.epochs == 7

        path = tmp_path / "run.cfg"
        path.write_text("epochs=9\nbatch_size=4\n", encoding="utf-8")
        from_file = load_settings(path)
        assert from_file.train.epochs == 9
        assert from_file.train.patience == 2
        assert from_file.train.batch_size == 4

        overridden = load_settings(path, {"epochs": "11", "model.heads": 2})
        assert overridden.train.epochs == 11
        assert overridden.train.batch_size == 4
        assert overridden.model.heads == 2

    def test_grid_lists(self) -> None:
        settings = load_settings(overrides={"grid_learning_rates": "0.001,0.0001", "grid_batch_sizes": "2"})
        assert settings.train.grid_learning_rates == [0.001, 0.0001]
        assert settings.train.grid_batch_sizes == [2]
        assert settings.train.is_grid

    def test_invalid_value(self) -> None:
        with pytest.raises(BadConfig):
            load_settings(overrides={"val_fraction": "1.5"})

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(IoFailure):
            load_settings(tmp_path / "absent.cfg")


class TestEnvironmentLists:
    def test_comma_separated_tuples(self, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setenv("BTS_PREPROCESS__CROP_TARGET", "64,64,64")
        monkeypatch.setenv("BTS_MODEL__INPUT_EXTENT", "32,32,32")
        settings = load_settings()
        assert settings.preprocess.crop_target == (64, 64, 64)
        assert settings.model.input_extent == (32, 32, 32)

    def test_comma_separated_modalities(self, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setenv("BTS_PREPROCESS__MODALITIES", "flair,t2,t1ce")
        assert load_settings().preprocess.modalities == [Modality.FLAIR, Modality.T2, Modality.T1CE]

    def test_grid_lists(self, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setenv("BTS_TRAIN__GRID_LEARNING_RATES", "0.001,0.0001")
        monkeypatch.setenv("BTS_TRAIN__GRID_BATCH_SIZES", "4")
        train = load_settings().train
        assert train.grid_learning_rates == [1e-3, 1e-4]
        assert train.grid_batch_sizes == [4]

    def test_json_lists_still_work(self, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setenv("BTS_PREPROCESS__CROP_TARGET", "[64, 128, 64]")
        assert load_settings().preprocess.crop_target == (64, 128, 64)

    def test_file_overrides_environment_list(self, tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setenv("BTS_PREPROCESS__CROP_TARGET", "64,64,64")
        path = tmp_path / "run.cfg"
        path.write_text("crop_target=128,64,64\n", encoding="utf-8")
        assert load_settings(path).preprocess.crop_target == (128, 64, 64)

    @pytest.mark.parametrize(
        "name, value",
        [
            ("BTS_PREPROCESS__CROP_TARGET", "64,64"),
            ("BTS_PREPROCESS__CROP_TARGET", "10,64,64"),
            ("BTS_MODEL__INPUT_EXTENT", "a,b,c"),
            ("BTS_PREPROCESS__MODALITIES", "t2,t2,flair"),
            ("BTS_MODEL", "not json"),
        ],
    )
    def test_bad_values_raise_bad_config(self, monkeypatch: pytest.MonkeyPatch, name: str, value: str) -> None:
        monkeypatch.setenv(name, value)
        with pytest.raises(BadConfig):
            load_settings()


class TestValidators:
    def test_even_kernel(self) -> None:
        with pytest.raises(BadConfig):
            build_section(ModelConfig, kernel=4)

    def test_extent_must_survive_every_pool(self) -> None:
        with pytest.raises(BadConfig):
            build_section(ModelConfig, levels=4, input_extent=(40, 64, 64))

    def test_heads_must_divide_d_model(self) -> None:
        # level 0 has 16 filters, so d_model 8 cannot take 3 heads
        with pytest.raises(BadConfig):
            build_section(ModelConfig, heads=3)

    def test_crop_multiple(self) -> None:
        with pytest.raises(BadConfig):
            build_section(PreprocessConfig, crop_target=(96, 128, 128))
        assert build_section(PreprocessConfig, crop_target="48,48,48", dev=True).crop_target == (48, 48, 48)

    def test_modalities_must_be_distinct(self) -> None:
        with pytest.raises(BadConfig):
            build_section(PreprocessConfig, modalities="t2,t2,flair")


class TestDumpConfig:
    def test_model_round_trip(self, tmp_path: Path) -> None:
        config = ModelConfig(base_filters=8, levels=2, input_extent=(32, 32, 64), channel_norm=True)
        path = tmp_path / "model.cfg"
        path.write_text(dump_config(config), encoding="utf-8")
        assert load_model_config(path) == config

    def test_train_section_renders_every_set_field(self) -> None:
        text = dump_config(TrainConfig(learning_rate=0.0005, restore_best=False))
        assert "learning_rate=0.0005\n" in text
        assert "restore_best=false\n" in text
        assert "grid_learning_rates" not in text

    def test_model_file_rejects_other_sections(self, tmp_path: Path) -> None:
        path = tmp_path / "model.cfg"
        path.write_text("epochs=3\n", encoding="utf-8")
        with pytest.raises(BadConfig):
            load_model_config(path)
