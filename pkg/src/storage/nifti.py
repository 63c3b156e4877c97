"""Single-file NIfTI-1 reader and writer.

Volumes are exposed as numpy arrays indexed ``[i, j, k(, t)]`` in the order of
the header's ``dim[1..]``; on disk the first index varies fastest, so the payload
is decoded with ``order="F"``. Orientation (qform/sform) is ignored and
extension blocks are skipped, never interpreted.
"""
from __future__ import annotations

import gzip
import logging
import math
import zlib
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from ..errors import BadDims, BadMagic, IoFailure, Truncated, UnsupportedDatatype

LOGGER = logging.getLogger(__name__)

HEADER_SIZE = 348
DATA_OFFSET = 352
SINGLE_FILE_MAGIC = b"n+1"
PAIR_MAGIC = b"ni1"
GZIP_PREFIX = b"\x1f\x8b"

header_dtd = [
    ("sizeof_hdr", "i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "i4"),
    ("session_error", "i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "i2", (8,)),
    ("intent_p1", "f4"),
    ("intent_p2", "f4"),
    ("intent_p3", "f4"),
    ("intent_code", "i2"),
    ("datatype", "i2"),
    ("bitpix", "i2"),
    ("slice_start", "i2"),
    ("pixdim", "f4", (8,)),
    ("vox_offset", "f4"),  # 108
    ("scl_slope", "f4"),
    ("scl_inter", "f4"),
    ("slice_end", "i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "f4"),
    ("cal_min", "f4"),
    ("slice_duration", "f4"),
    ("toffset", "f4"),
    ("glmax", "i4"),
    ("glmin", "i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "i2"),
    ("sform_code", "i2"),
    ("quatern_b", "f4"),
    ("quatern_c", "f4"),
    ("quatern_d", "f4"),
    ("qoffset_x", "f4"),
    ("qoffset_y", "f4"),
    ("qoffset_z", "f4"),
    ("srow_x", "f4", (4,)),
    ("srow_y", "f4", (4,)),
    ("srow_z", "f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),  # 344
]

header_dtype = np.dtype(header_dtd)
assert header_dtype.itemsize == HEADER_SIZE


class ElementKind(str, Enum):
    """Voxel element kinds the reader and writer support."""

    UINT8 = "uint8"
    INT16 = "int16"
    INT32 = "int32"
    FLOAT32 = "float32"
    FLOAT64 = "float64"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.value)

    @classmethod
    def from_dtype(cls, dtype: np.dtype) -> "ElementKind":
        try:
            return cls(np.dtype(dtype).name)
        except ValueError as exc:
            raise UnsupportedDatatype(f"Unsupported element dtype {np.dtype(dtype).name}") from exc


# kind -> (NIfTI-1 datatype code, bitpix)
NIFTI_CODES: Dict[ElementKind, Tuple[int, int]] = {
    ElementKind.UINT8: (2, 8),
    ElementKind.INT16: (4, 16),
    ElementKind.INT32: (8, 32),
    ElementKind.FLOAT32: (16, 32),
    ElementKind.FLOAT64: (64, 64),
}
KIND_BY_CODE: Dict[int, ElementKind] = {code: kind for kind, (code, _) in NIFTI_CODES.items()}


@dataclass(frozen=True)
class NiftiHeader:
    """The header fields the reader acts on."""

    sizeof_hdr: int
    dim: Tuple[int, ...]
    datatype_code: int
    bitpix: int
    pixdim: Tuple[float, ...]
    vox_offset: float
    scl_slope: float
    scl_inter: float
    magic: bytes
    byteorder: str = "<"

    @property
    def rank(self) -> int:
        return self.dim[0]

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.dim[1 : self.rank + 1])

    @property
    def element_kind(self) -> ElementKind:
        return KIND_BY_CODE[self.datatype_code]

    @property
    def applies_scaling(self) -> bool:
        slope, inter = self.scl_slope, self.scl_inter
        if not (math.isfinite(slope) and math.isfinite(inter)):
            return False
        return slope != 0 and (slope, inter) != (1.0, 0.0)


@dataclass
class Volume:
    """A decoded voxel grid.

    ``data`` has ``shape`` and is indexed in header ``dim`` order (first index
    fastest on disk). ``spacing`` holds the first three ``pixdim`` entries in mm.
    """

    data: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        ElementKind.from_dtype(self.data.dtype)
        if not 1 <= self.data.ndim <= 4:
            raise BadDims(f"Volume rank {self.data.ndim} outside 1..4")

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(int(extent) for extent in self.data.shape)

    @property
    def element_kind(self) -> ElementKind:
        return ElementKind.from_dtype(self.data.dtype)


def _decode_header_record(raw: bytes) -> np.ndarray:
    little = np.frombuffer(raw[:HEADER_SIZE], dtype=header_dtype.newbyteorder("<"), count=1)[0]
    if 1 <= int(little["dim"][0]) <= 7:
        return little
    return np.frombuffer(raw[:HEADER_SIZE], dtype=header_dtype.newbyteorder(">"), count=1)[0]


def read_header(raw: bytes) -> NiftiHeader:
    """Decode and validate the 348-byte header at the start of ``raw``."""

    if len(raw) < HEADER_SIZE:
        raise Truncated(f"Header needs {HEADER_SIZE} bytes, got {len(raw)}")
    record = _decode_header_record(raw)
    byteorder = record.dtype.fields["sizeof_hdr"][0].byteorder
    sizeof_hdr = int(record["sizeof_hdr"])
    magic = bytes(record["magic"])
    if sizeof_hdr != HEADER_SIZE:
        raise BadMagic(f"sizeof_hdr is {sizeof_hdr}, expected {HEADER_SIZE}")
    if magic == PAIR_MAGIC:
        raise UnsupportedDatatype("Dual-file NIfTI-1 ('ni1') is not supported")
    if magic != SINGLE_FILE_MAGIC:
        raise BadMagic(f"Magic {magic!r} is not 'n+1'")
    dim = tuple(int(value) for value in record["dim"])
    rank = dim[0]
    if not 1 <= rank <= 4:
        raise BadDims(f"Rank {rank} outside 1..4")
    if any(extent < 1 for extent in dim[1 : rank + 1]):
        raise BadDims(f"Extents {dim[1:rank + 1]} must all be >= 1")
    datatype_code = int(record["datatype"])
    if datatype_code not in KIND_BY_CODE:
        raise UnsupportedDatatype(f"Datatype code {datatype_code} is not supported")
    bitpix = int(record["bitpix"])
    expected_bitpix = NIFTI_CODES[KIND_BY_CODE[datatype_code]][1]
    if bitpix != expected_bitpix:
        raise UnsupportedDatatype(f"bitpix {bitpix} inconsistent with datatype code {datatype_code}")
    vox_offset = float(record["vox_offset"])
    if not math.isfinite(vox_offset) or vox_offset < DATA_OFFSET:
        raise BadMagic(f"vox_offset {vox_offset} invalid for a single-file volume")
    return NiftiHeader(
        sizeof_hdr=sizeof_hdr,
        dim=dim,
        datatype_code=datatype_code,
        bitpix=bitpix,
        pixdim=tuple(float(value) for value in record["pixdim"]),
        vox_offset=vox_offset,
        scl_slope=float(record["scl_slope"]),
        scl_inter=float(record["scl_inter"]),
        magic=magic,
        byteorder=">" if byteorder == ">" else "<",
    )


def _unwrap_gzip(raw: bytes) -> bytes:
    if not raw.startswith(GZIP_PREFIX):
        return raw
    try:
        return gzip.decompress(raw)
    except EOFError as exc:
        raise Truncated(f"Truncated gzip stream: {exc}") from exc
    except (OSError, zlib.error) as exc:
        raise BadMagic(f"Corrupt gzip container: {exc}") from exc


def decode_nifti(raw: bytes) -> Volume:
    """Parse a (possibly gzip-wrapped) single-file NIfTI-1 byte string."""

    raw = _unwrap_gzip(raw)
    header = read_header(raw)
    kind = header.element_kind
    offset = int(header.vox_offset)
    count = math.prod(header.shape)
    needed = offset + count * kind.dtype.itemsize
    if len(raw) < needed:
        raise Truncated(f"Payload needs {needed} bytes, file has {len(raw)}")
    flat = np.frombuffer(raw, dtype=kind.dtype.newbyteorder(header.byteorder), count=count, offset=offset)
    data = flat.astype(kind.dtype).reshape(header.shape, order="F")
    if header.applies_scaling:
        data = data.astype(np.float32) * np.float32(header.scl_slope) + np.float32(header.scl_inter)
    spacing = tuple(header.pixdim[1:4])
    return Volume(data=np.ascontiguousarray(data), spacing=(spacing[0], spacing[1], spacing[2]))


def encode_nifti(volume: Volume, byteorder: str = "<") -> bytes:
    """Serialize ``volume`` as an uncompressed single-file NIfTI-1 byte string."""

    if byteorder not in ("<", ">"):
        raise ValueError(f"byteorder must be '<' or '>', got {byteorder!r}")
    kind = volume.element_kind
    code, bitpix = NIFTI_CODES[kind]
    record = np.zeros((), dtype=header_dtype.newbyteorder(byteorder))
    record["sizeof_hdr"] = HEADER_SIZE
    dim = [volume.data.ndim, *volume.shape] + [1] * (7 - volume.data.ndim)
    record["dim"] = dim
    record["datatype"] = code
    record["bitpix"] = bitpix
    pixdim = [1.0, *volume.spacing] + [1.0] * 4
    record["pixdim"] = pixdim
    record["vox_offset"] = DATA_OFFSET
    record["scl_slope"] = 1.0
    record["scl_inter"] = 0.0
    record["magic"] = SINGLE_FILE_MAGIC
    payload = volume.data.astype(kind.dtype.newbyteorder(byteorder)).tobytes(order="F")
    return record.tobytes() + b"\x00" * (DATA_OFFSET - HEADER_SIZE) + payload


def read_nifti(path: Path) -> Volume:
    """Read a ``.nii`` or ``.nii.gz`` file; gzip is detected by content, not name."""

    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"Cannot read {path}: {exc}") from exc
    volume = decode_nifti(raw)
    LOGGER.debug("Read NIfTI volume", extra={"path": str(path), "shape": volume.shape})
    return volume


def write_nifti(volume: Volume, path: Path) -> None:
    """Write ``volume``; paths ending in ``.gz`` are gzip-compressed with a zero mtime."""

    path = Path(path)
    raw = encode_nifti(volume)
    if path.name.endswith(".gz"):
        raw = gzip.compress(raw, mtime=0)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(raw)
    except OSError as exc:
        raise IoFailure(f"Cannot write {path}: {exc}") from exc
    LOGGER.debug("Wrote NIfTI volume", extra={"path": str(path), "shape": volume.shape})


__all__ = [
    "ElementKind",
    "NiftiHeader",
    "Volume",
    "NIFTI_CODES",
    "read_header",
    "decode_nifti",
    "encode_nifti",
    "read_nifti",
    "write_nifti",
]
