"""Differentiable primitives over C x D x H x W feature maps.

Each primitive computes its forward value with numpy and registers a backward
rule returning one gradient per input (``None`` for inputs that never need one).
"""
from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np

from ..errors import EvenKernel, NonFiniteInput, OddExtent, ShapeMismatch
from .tensor import Tensor, make_output


def _require_volume(x: Tensor, op: str) -> None:
    if x.data.ndim != 4:
        raise ShapeMismatch(f"{op} expects C x D x H x W, got shape {x.shape}")


def conv3d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Stride-1, zero-padded 'same' 3D convolution.

    The kernel is applied as a sum over its k^3 offsets, each a
    (C_out x C_in) @ (C_in x DHW) product against a shifted view of the padded input.
    """

    _require_volume(x, "conv3d")
    c_out, c_in, k, k_h, k_w = weight.shape
    if not k == k_h == k_w:
        raise ShapeMismatch(f"conv3d needs a cubic kernel, got {weight.shape}")
    if k % 2 == 0:
        raise EvenKernel(f"conv3d kernel extent {k} is even")
    if x.shape[0] != c_in:
        raise ShapeMismatch(f"conv3d input has {x.shape[0]} channels, weight expects {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeMismatch(f"conv3d bias shape {bias.shape} != ({c_out},)")
    _, depth, height, width = x.shape
    pad = k // 2
    voxels = depth * height * width
    w = weight.data
    if k == 1:
        flat = x.data.reshape(c_in, voxels)
        out = w[:, :, 0, 0, 0] @ flat
    else:
        padded = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (pad, pad)))
        out = np.zeros((c_out, voxels), dtype=np.result_type(x.data, w))
        for dz in range(k):
            for dy in range(k):
                for dx in range(k):
                    patch = padded[:, dz : dz + depth, dy : dy + height, dx : dx + width].reshape(c_in, voxels)
                    out += w[:, :, dz, dy, dx] @ patch
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(c_out, depth, height, width)

    def _backward(grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        g = grad.reshape(c_out, voxels)
        grad_w = np.zeros_like(w)
        if k == 1:
            flat_in = x.data.reshape(c_in, voxels)
            grad_w[:, :, 0, 0, 0] = g @ flat_in.T
            grad_x = (w[:, :, 0, 0, 0].T @ g).reshape(x.shape)
        else:
            padded_in = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (pad, pad)))
            grad_padded = np.zeros_like(padded_in)
            for dz in range(k):
                for dy in range(k):
                    for dx in range(k):
                        window = (slice(None), slice(dz, dz + depth), slice(dy, dy + height), slice(dx, dx + width))
                        patch = padded_in[window].reshape(c_in, voxels)
                        grad_w[:, :, dz, dy, dx] = g @ patch.T
                        grad_padded[window] += (w[:, :, dz, dy, dx].T @ g).reshape(c_in, depth, height, width)
            grad_x = grad_padded[:, pad : pad + depth, pad : pad + height, pad : pad + width]
        grad_b = g.sum(axis=1) if bias is not None else None
        return grad_x, grad_w, grad_b

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_output("conv3d", out, inputs, _backward)


def relu(x: Tensor) -> Tensor:
    """max(x, 0); the derivative at exactly 0 is 0."""

    positive = x.data > 0
    out = np.where(positive, x.data, 0).astype(x.dtype)
    return make_output("relu", out, (x,), lambda grad: (grad * positive,))


def _blocks(data: np.ndarray) -> np.ndarray:
    """View C x D x H x W as C x D/2 x H/2 x W/2 x 8, last axis in (dz, dy, dx) order."""

    c, d, h, w = data.shape
    return data.reshape(c, d // 2, 2, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 5, 2, 4, 6).reshape(
        c, d // 2, h // 2, w // 2, 8
    )


def _unblocks(blocks: np.ndarray) -> np.ndarray:
    c, d2, h2, w2, _ = blocks.shape
    return blocks.reshape(c, d2, h2, w2, 2, 2, 2).transpose(0, 1, 4, 2, 5, 3, 6).reshape(c, 2 * d2, 2 * h2, 2 * w2)


def _require_even(x: Tensor, op: str) -> None:
    _require_volume(x, op)
    if any(extent % 2 for extent in x.shape[1:]):
        raise OddExtent(f"{op} needs even spatial extents, got {x.shape[1:]}")


def maxpool3d(x: Tensor) -> Tensor:
    """2x2x2 max pooling, stride 2; ties route the gradient to the lowest block offset."""

    _require_even(x, "maxpool3d")
    blocks = _blocks(x.data)
    argmax = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]

    def _backward(grad: np.ndarray) -> Tuple[np.ndarray]:
        grad_blocks = np.zeros(blocks.shape, dtype=grad.dtype)
        np.put_along_axis(grad_blocks, argmax[..., None], grad[..., None], axis=-1)
        return (_unblocks(grad_blocks),)

    return make_output("maxpool3d", np.ascontiguousarray(out), (x,), _backward)


def avg_pool3d(x: Tensor) -> Tensor:
    """2x2x2 average pooling, stride 2."""

    _require_even(x, "avg_pool3d")
    out = _blocks(x.data).mean(axis=-1)

    def _backward(grad: np.ndarray) -> Tuple[np.ndarray]:
        spread = np.repeat(grad[..., None] / 8.0, 8, axis=-1)
        return (_unblocks(spread),)

    return make_output("avg_pool3d", out, (x,), _backward)


def upsample_nearest3d(x: Tensor) -> Tensor:
    """Replicate each voxel into a 2x2x2 block."""

    _require_volume(x, "upsample_nearest3d")
    out = x.data.repeat(2, axis=1).repeat(2, axis=2).repeat(2, axis=3)

    def _backward(grad: np.ndarray) -> Tuple[np.ndarray]:
        return (_blocks(grad).sum(axis=-1),)

    return make_output("upsample_nearest3d", out, (x,), _backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1:] != b.shape[1:]:
        raise ShapeMismatch(f"concat_channels spatial extents differ: {a.shape[1:]} vs {b.shape[1:]}")
    split = a.shape[0]
    out = np.concatenate([a.data, b.data], axis=0)
    return make_output("concat_channels", out, (a, b), lambda grad: (grad[:split], grad[split:]))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"add shapes differ: {a.shape} vs {b.shape}")
    return make_output("add", a.data + b.data, (a, b), lambda grad: (grad, grad))


def scale(x: Tensor, factor: float) -> Tensor:
    return make_output("scale", x.data * factor, (x,), lambda grad: (grad * factor,))


def softmax_channels(x: Tensor) -> Tensor:
    """Softmax over axis 0 at every spatial location."""

    if not np.isfinite(x.data).all():
        raise NonFiniteInput("softmax_channels received NaN or infinite logits")
    shifted = np.exp(x.data - x.data.max(axis=0, keepdims=True))
    probs = shifted / shifted.sum(axis=0, keepdims=True)

    def _backward(grad: np.ndarray) -> Tuple[np.ndarray]:
        return (probs * (grad - (grad * probs).sum(axis=0, keepdims=True)),)

    return make_output("softmax_channels", probs, (x,), _backward)


def flatten_tokens(x: Tensor) -> Tensor:
    """C x D x H x W -> N x C tokens, voxels in row-major spatial order."""

    _require_volume(x, "flatten_tokens")
    channels = x.shape[0]
    out = x.data.reshape(channels, -1).T.copy()
    return make_output("flatten_tokens", out, (x,), lambda grad: (grad.T.reshape(x.shape),))


def unflatten_tokens(tokens: Tensor, spatial: Sequence[int]) -> Tensor:
    """N x C tokens -> C x D x H x W, inverse of :func:`flatten_tokens`."""

    count, channels = tokens.shape
    if count != int(np.prod(spatial)):
        raise ShapeMismatch(f"{count} tokens cannot fill spatial extents {tuple(spatial)}")
    out = tokens.data.T.reshape(channels, *spatial).copy()
    return make_output("unflatten_tokens", out, (tokens,), lambda grad: (grad.reshape(channels, count).T,))


def channel_affine_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each channel over its voxels, then scale by ``gamma`` and shift by ``beta``."""

    _require_volume(x, "channel_affine_norm")
    channels = x.shape[0]
    flat = x.data.reshape(channels, -1)
    count = flat.shape[1]
    mean = flat.mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(flat.var(axis=1, keepdims=True) + eps)
    normalized = (flat - mean) * inv_std
    out = (gamma.data[:, None] * normalized + beta.data[:, None]).reshape(x.shape)

    def _backward(grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        g = grad.reshape(channels, -1)
        grad_gamma = (g * normalized).sum(axis=1)
        grad_beta = g.sum(axis=1)
        g_norm = g * gamma.data[:, None]
        grad_x = (inv_std / count) * (
            count * g_norm - g_norm.sum(axis=1, keepdims=True)
            - normalized * (g_norm * normalized).sum(axis=1, keepdims=True)
        )
        return grad_x.reshape(x.shape), grad_gamma, grad_beta

    return make_output("channel_affine_norm", out, (x, gamma, beta), _backward)


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype).reshape(())
    return make_output("sum_all", out, (x,), lambda grad: (np.full(x.shape, grad, dtype=x.dtype),))


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar ``sum(x * weights)`` with constant ``weights``."""

    weights = np.asarray(weights, dtype=x.dtype)
    if weights.shape != x.shape:
        raise ShapeMismatch(f"weighted_sum weights {weights.shape} vs input {x.shape}")
    out = np.asarray((x.data * weights).sum(), dtype=x.dtype).reshape(())
    return make_output("weighted_sum", out, (x,), lambda grad: (grad * weights,))


__all__ = [
    "conv3d",
    "relu",
    "maxpool3d",
    "avg_pool3d",
    "upsample_nearest3d",
    "concat_channels",
    "add",
    "scale",
    "softmax_channels",
    "flatten_tokens",
    "unflatten_tokens",
    "channel_affine_norm",
    "sum_all",
    "weighted_sum",
]
