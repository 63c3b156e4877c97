"""CKPT parameter checkpoints.

Layout: ``b"CKPT"``, u32 parameter count, then per parameter a u32 name length,
the UTF-8 name, a u32 rank, ``rank`` u32 extents and the little-endian float32
payload. All integers are little-endian.
"""
from __future__ import annotations

import logging
import math
import struct
from pathlib import Path
from typing import Dict, Mapping

import numpy as np

from ..errors import CorruptCheckpoint, IoFailure

LOGGER = logging.getLogger(__name__)

CKPT_MAGIC = b"CKPT"
_F32_LE = np.dtype("<f4")


def encode_checkpoint(params: Mapping[str, np.ndarray]) -> bytes:
    chunks = [CKPT_MAGIC, struct.pack("<I", len(params))]
    for name, value in params.items():
        encoded = name.encode("utf-8")
        array = np.asarray(value)
        chunks.append(struct.pack("<I", len(encoded)) + encoded)
        chunks.append(struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype=_F32_LE).tobytes())
    return b"".join(chunks)


def decode_checkpoint(raw: bytes, source: str = "<bytes>") -> Dict[str, np.ndarray]:
    if raw[:4] != CKPT_MAGIC:
        raise CorruptCheckpoint(f"{source}: missing CKPT magic")
    try:
        (count,) = struct.unpack_from("<I", raw, 4)
        offset = 8
        params: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_length,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            name = raw[offset : offset + name_length].decode("utf-8")
            offset += name_length
            (rank,) = struct.unpack_from("<I", raw, offset)
            extents = struct.unpack_from(f"<{rank}I", raw, offset + 4)
            offset += 4 + 4 * rank
            size = math.prod(extents) * _F32_LE.itemsize
            if offset + size > len(raw):
                raise CorruptCheckpoint(f"{source}: payload of {name!r} is truncated")
            params[name] = np.frombuffer(raw, dtype=_F32_LE, count=math.prod(extents), offset=offset).astype(
                np.float32
            ).reshape(extents)
            offset += size
    except (struct.error, UnicodeDecodeError) as exc:
        raise CorruptCheckpoint(f"{source}: malformed checkpoint: {exc}") from exc
    if offset != len(raw):
        raise CorruptCheckpoint(f"{source}: {len(raw) - offset} trailing bytes")
    return params


def save_checkpoint(params: Mapping[str, np.ndarray], path: Path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_checkpoint(params))
    except OSError as exc:
        raise IoFailure(f"Cannot write checkpoint {path}: {exc}") from exc
    LOGGER.debug("Saved checkpoint", extra={"path": str(path), "parameters": len(params)})


def load_checkpoint(path: Path) -> Dict[str, np.ndarray]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"Cannot read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(raw, source=str(path))


__all__ = ["CKPT_MAGIC", "encode_checkpoint", "decode_checkpoint", "save_checkpoint", "load_checkpoint"]
