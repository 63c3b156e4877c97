"""Application configuration module."""
from __future__ import annotations

from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Type

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic.fields import FieldInfo
from pydantic_settings import BaseSettings, SettingsConfigDict, SettingsError
from pydantic_settings.sources import (
    DotEnvSettingsSource,
    EnvSettingsSource,
    PydanticBaseSettingsSource,
)

from .errors import BadConfig, IoFailure

CROP_MULTIPLE = 64
DEV_CROP_MULTIPLE = 16


class Modality(str, Enum):
    """MRI acquisitions stacked into the model input, in BraTS file-suffix form."""

    T2 = "t2"
    T1CE = "t1ce"
    FLAIR = "flair"


def _split_csv(value: Any) -> Any:
    if isinstance(value, str):
        return [part.strip() for part in value.split(",") if part.strip()]
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        # a one-element list given in the environment arrives JSON-decoded
        return [value]
    return value


class PreprocessConfig(BaseModel):
    """Options for turning BraTS subjects into cropped, filtered samples."""

    crop_target: Tuple[int, int, int] = Field(
        (128, 128, 128), description="Center-crop extents (D,H,W); multiples of 64 (16 in dev mode)"
    )
    label_ratio_threshold: float = Field(
        0.01, ge=0.0, lt=1.0, description="Subjects are kept iff nonzero-label ratio exceeds this"
    )
    modalities: List[Modality] = Field(
        default_factory=lambda: [Modality.T2, Modality.T1CE, Modality.FLAIR],
        description="Channel order of the stacked image",
    )
    dev: bool = Field(False, description="Relax the crop multiple from 64 to 16 for small fixtures")

    @field_validator("crop_target", "modalities", mode="before")
    def _split_lists(cls, value: Any) -> Any:
        return _split_csv(value)

    @field_validator("modalities")
    def _three_distinct_modalities(cls, value: List[Modality]) -> List[Modality]:
        if len(value) != 3 or len(set(value)) != 3:
            raise ValueError("modalities must list T2, T1CE and FLAIR exactly once each")
        return value

    @property
    def crop_multiple(self) -> int:
        return DEV_CROP_MULTIPLE if self.dev else CROP_MULTIPLE

    @model_validator(mode="after")
    def _check_crop(self) -> "PreprocessConfig":
        for extent in self.crop_target:
            if extent <= 0 or extent % self.crop_multiple:
                raise ValueError(
                    f"crop_target {self.crop_target} must be positive multiples of {self.crop_multiple}"
                )
        return self


class ModelConfig(BaseModel):
    """Architecture hyperparameters of the attention-fused 3D U-Net."""

    in_channels: int = Field(3, ge=1, description="Input modalities")
    num_classes: int = Field(4, ge=2, description="Output classes (background + three tumor regions)")
    base_filters: int = Field(16, ge=1, description="Filters at the first encoder level; doubled per level")
    levels: int = Field(4, ge=1, le=6, description="Number of pooling levels")
    kernel: int = Field(3, ge=1, description="Convolution kernel extent (odd)")
    heads: int = Field(4, ge=1, description="Attention heads per fusion")
    attention_token_limit: int = Field(512, ge=1, description="Maximum tokens entering dense attention")
    input_extent: Tuple[int, int, int] = Field((128, 128, 128), description="Spatial input extents (D,H,W)")
    attention_reduction: int = Field(2, ge=1, description="d_model = level filters / attention_reduction")
    channel_norm: bool = Field(False, description="Per-channel affine normalization after block convolutions")

    @field_validator("input_extent", mode="before")
    def _split_extent(cls, value: Any) -> Any:
        return _split_csv(value)

    @field_validator("kernel")
    def _odd_kernel(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError("kernel must be odd")
        return value

    @model_validator(mode="after")
    def _check_ladder(self) -> "ModelConfig":
        factor = 2 ** self.levels
        for extent in self.input_extent:
            if extent <= 0 or extent % factor:
                raise ValueError(f"input_extent {self.input_extent} must be divisible by {factor}")
        for level in range(self.levels):
            filters = self.filters(level)
            if filters % self.attention_reduction:
                raise ValueError(f"level {level} filters {filters} not divisible by attention_reduction")
            if self.d_model(level) % self.heads:
                raise ValueError(f"d_model {self.d_model(level)} at level {level} not divisible by heads")
        return self

    def filters(self, level: int) -> int:
        """Filters at encoder/decoder ``level``; ``level == levels`` is the bottleneck."""

        return self.base_filters * 2 ** level

    @property
    def bottleneck_filters(self) -> int:
        return self.filters(self.levels)

    def d_model(self, level: int) -> int:
        return self.filters(level) // self.attention_reduction


class TrainConfig(BaseModel):
    """Optimizer, batching and stopping options for a training run."""

    learning_rate: float = Field(1e-3, ge=0.0, description="Adam learning rate")
    batch_size: int = Field(2, ge=1, description="Samples per optimizer step; the last partial batch is kept")
    epochs: int = Field(30, ge=1, description="Maximum epochs")
    patience: int = Field(5, ge=1, description="Epochs without val_loss improvement before stopping")
    val_fraction: float = Field(0.2, gt=0.0, lt=1.0, description="Validation share of the dataset")
    seed: int = Field(0, description="Seed for model init, split and shuffling")
    loss_mix: float = Field(1.0, ge=0.0, description="Weight of the soft-Dice term in CE + loss_mix * dice")
    adam_beta1: float = Field(0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_epsilon: float = Field(1e-8, gt=0.0)
    grid_learning_rates: Optional[List[float]] = Field(
        None, description="Learning rates of a hyperparameter grid run"
    )
    grid_batch_sizes: Optional[List[int]] = Field(None, description="Batch sizes of a hyperparameter grid run")
    restore_best: bool = Field(True, description="Reload the best-val-loss parameters after training")
    log_wall_time: bool = Field(True, description="Record epoch wall time in the RunLog CSV")

    @field_validator("grid_learning_rates", "grid_batch_sizes", mode="before")
    def _split_grid(cls, value: Any) -> Any:
        return _split_csv(value)

    @property
    def is_grid(self) -> bool:
        return bool(self.grid_learning_rates) or bool(self.grid_batch_sizes)


class LoggingConfig(BaseModel):
    """Simple logging configuration."""

    level: str = Field("INFO", description="Application log level")
    format: str = Field("%(asctime)s %(name)s %(levelname)s %(message)s", description="Log record format")


class _CommaListMixin:
    """Leave non-JSON values such as ``64,64,64`` to the field validators."""

    def decode_complex_value(self, field_name: str, field: FieldInfo, value: Any) -> Any:
        try:
            return super().decode_complex_value(field_name, field, value)  # type: ignore[misc]
        except ValueError:
            return value


class _EnvSource(_CommaListMixin, EnvSettingsSource):
    pass


class _DotEnvSource(_CommaListMixin, DotEnvSettingsSource):
    pass


class AppConfig(BaseSettings):
    """Top-level configuration loaded from defaults, environment and config documents."""

    model_config = SettingsConfigDict(
        env_file=".env", env_prefix="BTS_", env_nested_delimiter="__", case_sensitive=False
    )

    preprocess: PreprocessConfig = Field(default_factory=PreprocessConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    logging: LoggingConfig = Field(default_factory=LoggingConfig)

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        return init_settings, _EnvSource(settings_cls), _DotEnvSource(settings_cls), file_secret_settings


SECTIONS: Dict[str, Type[BaseModel]] = {
    "preprocess": PreprocessConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "logging": LoggingConfig,
}

FIELD_SECTIONS: Dict[str, str] = {
    name: section for section, cls in SECTIONS.items() for name in cls.model_fields
}


def _resolve_key(key: str) -> Tuple[str, str]:
    if "." in key:
        section, name = key.split(".", 1)
        if section not in SECTIONS or name not in SECTIONS[section].model_fields:
            raise BadConfig(f"Unknown configuration key: {key}")
        return section, name
    if key not in FIELD_SECTIONS:
        raise BadConfig(f"Unknown configuration key: {key}")
    return FIELD_SECTIONS[key], key


def parse_config_text(text: str) -> Dict[str, Dict[str, str]]:
    """Parse a flat ``key=value`` document into per-section raw values."""

    values: Dict[str, Dict[str, str]] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise BadConfig(f"Line {lineno}: expected key=value, got {raw_line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        section, name = _resolve_key(key)
        values.setdefault(section, {})[name] = value
    return values


def load_config_file(path: Path) -> Dict[str, Dict[str, str]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"Cannot read config file {path}: {exc}") from exc
    return parse_config_text(text)


def load_settings(
    config_path: Optional[Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> AppConfig:
    """Build the configuration: defaults < environment < config file < overrides."""

    values: Dict[str, Dict[str, Any]] = load_config_file(config_path) if config_path else {}
    for key, value in (overrides or {}).items():
        section, name = _resolve_key(key)
        values.setdefault(section, {})[name] = value
    try:
        return AppConfig(**values)
    except (ValidationError, SettingsError) as exc:
        raise BadConfig(str(exc)) from exc


def build_section(cls: Type[BaseModel], **values: Any) -> Any:
    """Instantiate one section, converting validation failures into ``BadConfig``."""

    try:
        return cls(**values)
    except ValidationError as exc:
        raise BadConfig(str(exc)) from exc


def _format_value(value: Any) -> str:
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(_format_value(item) for item in value)
    return repr(value) if isinstance(value, float) else str(value)


def dump_config(section: BaseModel) -> str:
    """Render a section as a ``key=value`` document readable by ``parse_config_text``."""

    lines = []
    for name in type(section).model_fields:
        value = getattr(section, name)
        if value is None:
            continue
        lines.append(f"{name}={_format_value(value)}")
    return "\n".join(lines) + "\n"


def load_model_config(path: Path) -> ModelConfig:
    values = load_config_file(path)
    extra = set(values) - {"model"}
    if extra:
        raise BadConfig(f"{path} holds non-model keys for sections {sorted(extra)}")
    return build_section(ModelConfig, **values.get("model", {}))


@lru_cache
def get_settings() -> AppConfig:
    """Return a cached instance of the application settings."""

    return AppConfig()


__all__ = [
    "AppConfig",
    "PreprocessConfig",
    "ModelConfig",
    "TrainConfig",
    "LoggingConfig",
    "Modality",
    "CROP_MULTIPLE",
    "DEV_CROP_MULTIPLE",
    "parse_config_text",
    "load_config_file",
    "load_settings",
    "load_model_config",
    "build_section",
    "dump_config",
    "get_settings",
]
