"""Scaled dot-product multi-head attention as a single differentiable primitive."""
from __future__ import annotations

import math
from typing import Tuple, Union

import numpy as np

from ..errors import IndivisibleHeads, ShapeMismatch
from .tensor import Tensor, make_output


def _split_heads(tokens: np.ndarray, heads: int) -> np.ndarray:
    count, width = tokens.shape
    return tokens.reshape(count, heads, width // heads).transpose(1, 0, 2)


def _merge_heads(per_head: np.ndarray) -> np.ndarray:
    heads, count, d_k = per_head.shape
    return per_head.transpose(1, 0, 2).reshape(count, heads * d_k)


def multihead_attention(
    queries: Tensor,
    keys_values: Tensor,
    w_q: Tensor,
    w_k: Tensor,
    w_v: Tensor,
    w_o: Tensor,
    heads: int,
    return_weights: bool = False,
) -> Union[Tensor, Tuple[Tensor, np.ndarray]]:
    """Cross-attention of ``queries`` (N_q x d) over ``keys_values`` (N_kv x d).

    Head ``i`` uses columns ``i*d_k:(i+1)*d_k`` of each d x d projection. The
    concatenated heads are projected by ``w_o``. With ``return_weights`` the
    h x N_q x N_kv attention weights are returned alongside the output.
    """

    n_q, d_model = queries.shape
    n_kv, d_kv = keys_values.shape
    if d_kv != d_model:
        raise ShapeMismatch(f"query width {d_model} != key/value width {d_kv}")
    for weight in (w_q, w_k, w_v, w_o):
        if weight.shape != (d_model, d_model):
            raise ShapeMismatch(f"projection shape {weight.shape} != ({d_model}, {d_model})")
    if heads < 1 or d_model % heads:
        raise IndivisibleHeads(f"d_model {d_model} is not divisible by {heads} heads")
    d_k = d_model // heads
    scale = 1.0 / math.sqrt(d_k)

    xq, xkv = queries.data, keys_values.data
    q = _split_heads(xq @ w_q.data, heads)
    k = _split_heads(xkv @ w_k.data, heads)
    v = _split_heads(xkv @ w_v.data, heads)
    scores = (q @ k.transpose(0, 2, 1)) * scale
    scores -= scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=-1, keepdims=True)
    context = _merge_heads(weights @ v)
    out = context @ w_o.data

    def _backward(grad: np.ndarray) -> Tuple[np.ndarray, ...]:
        grad_w_o = context.T @ grad
        grad_context = _split_heads(grad @ w_o.data.T, heads)
        grad_weights = grad_context @ v.transpose(0, 2, 1)
        grad_v = weights.transpose(0, 2, 1) @ grad_context
        grad_scores = weights * (grad_weights - (grad_weights * weights).sum(axis=-1, keepdims=True))
        grad_q = _merge_heads(grad_scores @ k) * scale
        grad_k = _merge_heads(grad_scores.transpose(0, 2, 1) @ q) * scale
        grad_v = _merge_heads(grad_v)
        grad_queries = grad_q @ w_q.data.T
        grad_keys_values = grad_k @ w_k.data.T + grad_v @ w_v.data.T
        return (
            grad_queries,
            grad_keys_values,
            xq.T @ grad_q,
            xkv.T @ grad_k,
            xkv.T @ grad_v,
            grad_w_o,
        )

    output = make_output(
        "multihead_attention", out, (queries, keys_values, w_q, w_k, w_v, w_o), _backward
    )
    if return_weights:
        return output, weights
    return output


__all__ = ["multihead_attention"]
