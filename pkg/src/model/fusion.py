"""Multi-head attention fusion of a decoder stage with its encoder skip."""
from __future__ import annotations

import logging
from typing import Any, Dict, Mapping, Optional

from ..config import ModelConfig
from ..errors import ShapeMismatch
from ..autodiff.attention import multihead_attention
from ..autodiff.ops import add, avg_pool3d, conv3d, flatten_tokens, relu, unflatten_tokens, upsample_nearest3d
from ..autodiff.tensor import Tensor

LOGGER = logging.getLogger(__name__)


def pooling_steps(spatial: tuple, limit: int) -> int:
    """Number of 2x2x2 average pools needed to bring the token count to ``limit`` or below."""

    steps = 0
    extents = list(spatial)
    while extents[0] * extents[1] * extents[2] > limit and all(extent % 2 == 0 for extent in extents):
        extents = [extent // 2 for extent in extents]
        steps += 1
    return steps


def mha_fusion(
    decoder_feat: Tensor,
    skip_feat: Tensor,
    params: Mapping[str, Tensor],
    config: ModelConfig,
    prefix: str,
    trace: Optional[Dict[str, Any]] = None,
) -> Tensor:
    """Decoder tokens attend over skip tokens; the refined result is added onto the skip.

    Both inputs are reduced to d_model channels by 1x1x1 convolutions and
    average-pooled until at most ``attention_token_limit`` tokens remain. The
    attended map is upsampled back, refined by a 3x3x3 convolution and ReLU to
    the skip's channel count and added to ``skip_feat``.
    """

    if decoder_feat.shape != skip_feat.shape:
        raise ShapeMismatch(f"{prefix}: decoder {decoder_feat.shape} vs skip {skip_feat.shape}")
    query_map = conv3d(decoder_feat, params[f"{prefix}.reduce_q.weight"], params[f"{prefix}.reduce_q.bias"])
    kv_map = conv3d(skip_feat, params[f"{prefix}.reduce_kv.weight"], params[f"{prefix}.reduce_kv.bias"])
    steps = pooling_steps(query_map.shape[1:], config.attention_token_limit)
    if steps:
        LOGGER.debug("Pooling fusion tokens", extra={"fusion": prefix, "steps": steps})
    for _ in range(steps):
        query_map = avg_pool3d(query_map)
        kv_map = avg_pool3d(kv_map)
    pooled_spatial = query_map.shape[1:]
    attended, weights = multihead_attention(
        flatten_tokens(query_map),
        flatten_tokens(kv_map),
        params[f"{prefix}.attn.w_q"],
        params[f"{prefix}.attn.w_k"],
        params[f"{prefix}.attn.w_v"],
        params[f"{prefix}.attn.w_o"],
        heads=config.heads,
        return_weights=True,
    )
    if trace is not None:
        trace[f"{prefix}.weights"] = weights
        trace[f"{prefix}.tokens"] = attended.shape[0]
    attended_map = unflatten_tokens(attended, pooled_spatial)
    for _ in range(steps):
        attended_map = upsample_nearest3d(attended_map)
    refined = relu(conv3d(attended_map, params[f"{prefix}.refine.weight"], params[f"{prefix}.refine.bias"]))
    return add(skip_feat, refined)


__all__ = ["mha_fusion", "pooling_steps"]
