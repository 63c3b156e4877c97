"""3D U-Net with multi-head attention fusion on every skip connection."""
from __future__ import annotations

import logging
import math
from collections import OrderedDict
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from ..autodiff.ops import (
    channel_affine_norm,
    concat_channels,
    conv3d,
    maxpool3d,
    relu,
    softmax_channels,
    upsample_nearest3d,
)
from ..autodiff.tensor import Tensor
from ..config import ModelConfig
from ..errors import ShapeMismatch
from .fusion import mha_fusion

LOGGER = logging.getLogger(__name__)


class UNet3DMHA:
    """Parameter registry plus the forward pass of the attention-fused U-Net."""

    def __init__(self, config: ModelConfig, params: "OrderedDict[str, Tensor]") -> None:
        self.config = config
        self.params = params

    def parameter_count(self) -> int:
        return sum(param.size for param in self.params.values())

    def state_dict(self) -> Dict[str, np.ndarray]:
        return OrderedDict((name, param.data.copy()) for name, param in self.params.items())

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        unexpected = set(state) - set(self.params)
        if missing or unexpected:
            raise ShapeMismatch(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for name, param in self.params.items():
            value = np.asarray(state[name])
            if value.shape != param.shape:
                raise ShapeMismatch(f"{name}: stored shape {value.shape} != {param.shape}")
            param.data = value.astype(param.dtype).copy()

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.zero_grad()

    def _conv(self, x: Tensor, name: str) -> Tensor:
        return conv3d(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"])

    def _conv_block(self, x: Tensor, prefix: str) -> Tensor:
        for index in (1, 2):
            x = self._conv(x, f"{prefix}.conv{index}")
            if self.config.channel_norm:
                x = channel_affine_norm(
                    x, self.params[f"{prefix}.norm{index}.gamma"], self.params[f"{prefix}.norm{index}.beta"]
                )
            x = relu(x)
        return x

    def forward(self, image: Union[Tensor, np.ndarray], trace: Optional[Dict[str, Any]] = None) -> Tensor:
        """Softmax class probabilities (num_classes x D x H x W) for one image."""

        x = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=self.dtype))
        expected = (self.config.in_channels, *self.config.input_extent)
        if x.shape != expected:
            raise ShapeMismatch(f"input shape {x.shape} != {expected}")
        skips: List[Tensor] = []
        for level in range(self.config.levels):
            x = self._conv_block(x, f"enc{level}")
            _record(trace, f"enc{level}", x)
            skips.append(x)
            x = maxpool3d(x)
        x = self._conv_block(x, "bottleneck")
        _record(trace, "bottleneck", x)
        for level in reversed(range(self.config.levels)):
            x = relu(self._conv(upsample_nearest3d(x), f"dec{level}.up"))
            fused = mha_fusion(x, skips[level], self.params, self.config, f"dec{level}.fusion", trace)
            x = self._conv_block(concat_channels(x, fused), f"dec{level}")
            _record(trace, f"dec{level}", x)
        return softmax_channels(self._conv(x, "head"))

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.params.values())).dtype


def _record(trace: Optional[Dict[str, Any]], key: str, x: Tensor) -> None:
    if trace is not None:
        trace[key] = x.shape


def _he_normal(rng: np.random.Generator, shape: Tuple[int, ...], dtype: np.dtype) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)


def _glorot_uniform(rng: np.random.Generator, shape: Tuple[int, int], dtype: np.dtype) -> np.ndarray:
    limit = math.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _layer_plan(config: ModelConfig) -> List[Tuple[str, str, Tuple[int, ...]]]:
    """(name, initializer, shape) for every parameter, in registration order."""

    k = config.kernel
    plan: List[Tuple[str, str, Tuple[int, ...]]] = []

    def conv(name: str, c_in: int, c_out: int, kernel: int = k) -> None:
        plan.append((f"{name}.weight", "he", (c_out, c_in, kernel, kernel, kernel)))
        plan.append((f"{name}.bias", "zeros", (c_out,)))

    def block(prefix: str, c_in: int, c_out: int) -> None:
        conv(f"{prefix}.conv1", c_in, c_out)
        if config.channel_norm:
            plan.append((f"{prefix}.norm1.gamma", "ones", (c_out,)))
            plan.append((f"{prefix}.norm1.beta", "zeros", (c_out,)))
        conv(f"{prefix}.conv2", c_out, c_out)
        if config.channel_norm:
            plan.append((f"{prefix}.norm2.gamma", "ones", (c_out,)))
            plan.append((f"{prefix}.norm2.beta", "zeros", (c_out,)))

    channels = config.in_channels
    for level in range(config.levels):
        block(f"enc{level}", channels, config.filters(level))
        channels = config.filters(level)
    block("bottleneck", channels, config.bottleneck_filters)
    for level in reversed(range(config.levels)):
        filters, d_model = config.filters(level), config.d_model(level)
        conv(f"dec{level}.up", config.filters(level + 1), filters)
        fusion = f"dec{level}.fusion"
        conv(f"{fusion}.reduce_q", filters, d_model, kernel=1)
        conv(f"{fusion}.reduce_kv", filters, d_model, kernel=1)
        for projection in ("w_q", "w_k", "w_v", "w_o"):
            plan.append((f"{fusion}.attn.{projection}", "glorot", (d_model, d_model)))
        conv(f"{fusion}.refine", d_model, filters)
        block(f"dec{level}", 2 * filters, filters)
    conv("head", config.filters(0), config.num_classes, kernel=1)
    return plan


def build(config: ModelConfig, seed: int, dtype: np.dtype = np.float32) -> UNet3DMHA:
    """Initialize every parameter deterministically from ``seed``."""

    rng = np.random.default_rng(seed)
    params: "OrderedDict[str, Tensor]" = OrderedDict()
    for name, initializer, shape in _layer_plan(config):
        if initializer == "he":
            data = _he_normal(rng, shape, dtype)
        elif initializer == "glorot":
            data = _glorot_uniform(rng, shape, dtype)  # type: ignore[arg-type]
        elif initializer == "ones":
            data = np.ones(shape, dtype=dtype)
        else:
            data = np.zeros(shape, dtype=dtype)
        params[name] = Tensor(data, requires_grad=True, name=name)
    model = UNet3DMHA(config, params)
    LOGGER.info(
        "Built model",
        extra={"parameters": model.parameter_count(), "base_filters": config.base_filters, "seed": seed},
    )
    return model


def expected_parameter_count(config: ModelConfig) -> int:
    """Closed-form parameter count of :func:`build` for ``config``."""

    k3 = config.kernel ** 3
    norm = 4 if config.channel_norm else 0

    def conv(c_in: int, c_out: int, taps: int = k3) -> int:
        return c_in * taps * c_out + c_out

    def block(c_in: int, c_out: int) -> int:
        return conv(c_in, c_out) + conv(c_out, c_out) + norm * c_out

    total = 0
    channels = config.in_channels
    for level in range(config.levels):
        total += block(channels, config.filters(level))
        channels = config.filters(level)
    total += block(channels, config.bottleneck_filters)
    for level in range(config.levels):
        filters, d_model = config.filters(level), config.d_model(level)
        fusion = 2 * conv(filters, d_model, 1) + 4 * d_model * d_model + conv(d_model, filters)
        total += conv(config.filters(level + 1), filters) + fusion + block(2 * filters, filters)
    return total + conv(config.filters(0), config.num_classes, 1)


def predict_labels(probs: Union[Tensor, np.ndarray]) -> np.ndarray:
    """Per-voxel argmax over channels; ties resolve to the lowest class index."""

    data = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    return data.argmax(axis=0).astype(np.uint8)


__all__ = ["UNet3DMHA", "build", "expected_parameter_count", "predict_labels"]
