"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward

FD_STEP = 1e-5


def numerical_gradient(
    fn: Callable[[], Tensor],
    tensor: Tensor,
    step: float = FD_STEP,
    indices: Optional[Iterable[int]] = None,
) -> np.ndarray:
    """d fn() / d tensor by central differences, perturbing ``tensor.data`` in place.

    ``indices`` restricts the estimate to some flat positions; the rest stay 0.
    """

    flat = tensor.data.reshape(-1)
    estimate = np.zeros(flat.shape, dtype=np.float64)
    positions = range(flat.size) if indices is None else indices
    for index in positions:
        original = flat[index]
        flat[index] = original + step
        plus = float(fn().data)
        flat[index] = original - step
        minus = float(fn().data)
        flat[index] = original
        estimate[index] = (plus - minus) / (2.0 * step)
    return estimate.reshape(tensor.shape)


def analytic_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor]) -> list:
    for tensor in tensors:
        tensor.requires_grad = True
        tensor.zero_grad()
    with Tape():
        root = fn()
    backward(root)
    return [np.zeros(tensor.shape) if tensor.grad is None else tensor.grad.copy() for tensor in tensors]


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """max |a - n| / max(|a|, |n|, floor); ``floor`` keeps near-zero entries absolute."""

    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / scale).max()) if analytic.size else 0.0


def check_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor], step: float = FD_STEP) -> float:
    """Largest relative error between backward() and finite differences over ``tensors``."""

    analytic = analytic_gradients(fn, tensors)
    return max(
        max_relative_error(grad, numerical_gradient(fn, tensor, step)) for grad, tensor in zip(analytic, tensors)
    )


__all__ = ["numerical_gradient", "analytic_gradients", "max_relative_error", "check_gradients", "FD_STEP"]
