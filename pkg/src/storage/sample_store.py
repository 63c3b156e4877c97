"""SMP1 flat binary arrays and the on-disk layout of preprocessed samples.

An SMP1 file is ``b"SMP1"``, a little-endian u32 rank, ``rank`` u32 extents, a
u8 element-kind code and the little-endian C-order payload. Each sample lives
in ``<root>/<subject_id>/`` as ``image.smp1``, ``mask.smp1`` and a one-line
``sample.txt`` holding ``subject_id=<id>``.
"""
from __future__ import annotations

import logging
import math
import struct
from pathlib import Path
from typing import Dict, List

import numpy as np

from ..errors import CorruptSample, IoFailure
from ..preprocessing.models import Sample
from .nifti import ElementKind

LOGGER = logging.getLogger(__name__)

SMP1_MAGIC = b"SMP1"
IMAGE_FILE = "image.smp1"
MASK_FILE = "mask.smp1"
META_FILE = "sample.txt"
MANIFEST_FILE = "manifest.txt"

KIND_CODES: Dict[ElementKind, int] = {
    ElementKind.UINT8: 1,
    ElementKind.INT16: 2,
    ElementKind.INT32: 3,
    ElementKind.FLOAT32: 4,
    ElementKind.FLOAT64: 5,
}
KIND_BY_SMP1_CODE: Dict[int, ElementKind] = {code: kind for kind, code in KIND_CODES.items()}


def encode_array(array: np.ndarray) -> bytes:
    kind = ElementKind.from_dtype(array.dtype)
    header = SMP1_MAGIC + struct.pack(f"<I{array.ndim}IB", array.ndim, *array.shape, KIND_CODES[kind])
    return header + np.ascontiguousarray(array).astype(kind.dtype.newbyteorder("<")).tobytes()


def decode_array(raw: bytes, source: str = "<bytes>") -> np.ndarray:
    if raw[:4] != SMP1_MAGIC:
        raise CorruptSample(f"{source}: missing SMP1 magic")
    if len(raw) < 8:
        raise CorruptSample(f"{source}: truncated header")
    (rank,) = struct.unpack_from("<I", raw, 4)
    header_size = 8 + 4 * rank + 1
    if rank > 8 or len(raw) < header_size:
        raise CorruptSample(f"{source}: bad rank {rank} or truncated header")
    extents = struct.unpack_from(f"<{rank}I", raw, 8)
    code = raw[header_size - 1]
    if code not in KIND_BY_SMP1_CODE:
        raise CorruptSample(f"{source}: unknown element-kind code {code}")
    dtype = KIND_BY_SMP1_CODE[code].dtype
    expected = math.prod(extents) * dtype.itemsize
    if len(raw) - header_size != expected:
        raise CorruptSample(
            f"{source}: payload holds {len(raw) - header_size} bytes, extents {extents} need {expected}"
        )
    flat = np.frombuffer(raw, dtype=dtype.newbyteorder("<"), offset=header_size)
    return flat.astype(dtype).reshape(extents)


def save_array(array: np.ndarray, path: Path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_array(array))
    except OSError as exc:
        raise IoFailure(f"Cannot write {path}: {exc}") from exc


def load_array(path: Path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"Cannot read {path}: {exc}") from exc
    return decode_array(raw, source=str(path))


def save_sample(sample: Sample, root: Path) -> Path:
    """Persist ``sample`` under ``root/<subject_id>/`` and return that directory."""

    directory = Path(root) / sample.subject_id
    save_array(sample.image, directory / IMAGE_FILE)
    save_array(sample.mask, directory / MASK_FILE)
    try:
        (directory / META_FILE).write_text(f"subject_id={sample.subject_id}\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"Cannot write {directory / META_FILE}: {exc}") from exc
    LOGGER.debug("Saved sample", extra={"subject_id": sample.subject_id, "path": str(directory)})
    return directory


def load_sample(root: Path, subject_id: str) -> Sample:
    directory = Path(root) / subject_id
    try:
        meta = (directory / META_FILE).read_text(encoding="utf-8").strip()
    except OSError as exc:
        raise IoFailure(f"Cannot read {directory / META_FILE}: {exc}") from exc
    if meta != f"subject_id={subject_id}":
        raise CorruptSample(f"{directory / META_FILE}: metadata {meta!r} does not name {subject_id}")
    image = load_array(directory / IMAGE_FILE)
    mask = load_array(directory / MASK_FILE)
    if image.ndim != 4 or mask.shape != image.shape[1:]:
        raise CorruptSample(f"{directory}: image {image.shape} and mask {mask.shape} disagree")
    return Sample(image=image, mask=mask, subject_id=subject_id)


def write_manifest(root: Path, subject_ids: List[str]) -> Path:
    path = Path(root) / MANIFEST_FILE
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(f"{subject_id}\n" for subject_id in subject_ids), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"Cannot write {path}: {exc}") from exc
    return path


def read_manifest(root: Path) -> List[str]:
    path = Path(root) / MANIFEST_FILE
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(f"Cannot read {path}: {exc}") from exc
    return [line.strip() for line in lines if line.strip()]


def load_dataset(root: Path) -> List[Sample]:
    """Load every sample listed in ``root/manifest.txt``, in manifest order."""

    return [load_sample(root, subject_id) for subject_id in read_manifest(root)]


__all__ = [
    "SMP1_MAGIC",
    "encode_array",
    "decode_array",
    "save_array",
    "load_array",
    "save_sample",
    "load_sample",
    "write_manifest",
    "read_manifest",
    "load_dataset",
]
