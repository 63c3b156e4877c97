"""Training losses over K x S probability maps with one-hot targets."""
from __future__ import annotations

from typing import Tuple

import numpy as np

from ..errors import NotOneHot, ShapeMismatch
from .tensor import Tensor, make_output

PROB_FLOOR = 1e-7
DICE_SMOOTH = 1e-6


def one_hot(labels: np.ndarray, num_classes: int, dtype: np.dtype = np.float32) -> np.ndarray:
    """K x S one-hot encoding of an integer label grid S."""

    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise NotOneHot(f"labels outside 0..{num_classes - 1}")
    return (np.arange(num_classes).reshape((num_classes,) + (1,) * labels.ndim) == labels).astype(dtype)


def _check_target(probs: Tensor, target: np.ndarray) -> np.ndarray:
    target = np.asarray(target)
    if target.shape != probs.shape:
        raise ShapeMismatch(f"target shape {target.shape} != probs shape {probs.shape}")
    if not np.isin(target, (0, 1)).all() or not np.all(target.sum(axis=0) == 1):
        raise NotOneHot("target is not one-hot along the channel axis")
    return target.astype(probs.dtype)


def categorical_cross_entropy(probs: Tensor, target: np.ndarray) -> Tensor:
    """-(1/N) sum over locations of log p(true class), probabilities clamped to [1e-7, 1]."""

    target = _check_target(probs, target)
    locations = int(np.prod(probs.shape[1:]))
    clamped = np.clip(probs.data, PROB_FLOOR, 1.0)
    loss = -(target * np.log(clamped)).sum() / locations
    inside = (probs.data >= PROB_FLOOR) & (probs.data <= 1.0)

    def _backward(grad: np.ndarray) -> Tuple[np.ndarray]:
        return (grad * np.where(inside, -target / (clamped * locations), 0.0).astype(probs.dtype),)

    return make_output("categorical_cross_entropy", np.asarray(loss, dtype=probs.dtype), (probs,), _backward)


def soft_dice_terms(probs: np.ndarray, target: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class (intersection, prediction mass, target mass) over spatial axes."""

    axes = tuple(range(1, probs.ndim))
    return (probs * target).sum(axis=axes), probs.sum(axis=axes), target.sum(axis=axes)


def dice_loss(probs: Tensor, target: np.ndarray) -> Tensor:
    """1 - mean over classes of (2 I_k + eps) / (P_k + T_k + eps)."""

    target = _check_target(probs, target)
    num_classes = probs.shape[0]
    intersection, pred_mass, true_mass = soft_dice_terms(probs.data, target)
    denominator = pred_mass + true_mass + DICE_SMOOTH
    numerator = 2.0 * intersection + DICE_SMOOTH
    loss = 1.0 - (numerator / denominator).mean()
    expand = (num_classes,) + (1,) * (probs.data.ndim - 1)

    def _backward(grad: np.ndarray) -> Tuple[np.ndarray]:
        d_probs = -(
            2.0 * target * denominator.reshape(expand) - numerator.reshape(expand)
        ) / (num_classes * denominator.reshape(expand) ** 2)
        return ((grad * d_probs).astype(probs.dtype),)

    return make_output("dice_loss", np.asarray(loss, dtype=probs.dtype), (probs,), _backward)


__all__ = ["one_hot", "categorical_cross_entropy", "dice_loss", "soft_dice_terms", "PROB_FLOOR", "DICE_SMOOTH"]
