from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from src.config import ModelConfig, PreprocessConfig
from src.preprocessing.synthetic import write_synthetic_dataset


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model_config() -> ModelConfig:
    """Two levels, 4 base filters, 16^3 input: small enough for finite differences."""

    return ModelConfig(
        base_filters=4,
        levels=2,
        heads=2,
        input_extent=(16, 16, 16),
        attention_token_limit=64,
    )


@pytest.fixture
def dev_preprocess_config() -> PreprocessConfig:
    return PreprocessConfig(crop_target=(16, 16, 16), dev=True)


@pytest.fixture
def synthetic_root(tmp_path: Path) -> Path:
    root = tmp_path / "raw"
    write_synthetic_dataset(root, subjects=3, extent=16, seed=7, target_ratio=0.08)
    return root
