from __future__ import annotations

import gzip
from pathlib import Path

import numpy as np
import pytest

from src.errors import BadDims, BadMagic, NiftiError, Truncated, UnsupportedDatatype
from src.storage.nifti import (
    DATA_OFFSET,
    HEADER_SIZE,
    ElementKind,
    Volume,
    decode_nifti,
    encode_nifti,
    header_dtype,
    read_header,
    read_nifti,
    write_nifti,
)


def _patch_header(raw: bytes, **fields) -> bytes:
    record = np.frombuffer(raw[:HEADER_SIZE], dtype=header_dtype.newbyteorder("<"), count=1).copy()
    for name, value in fields.items():
        record[name] = value
    return record.tobytes() + raw[HEADER_SIZE:]


def _volume(kind: ElementKind, rng: np.random.Generator, shape=(3, 4, 5)) -> Volume:
    if kind.value.startswith("float"):
        data = rng.normal(size=shape).astype(kind.dtype)
    else:
        info = np.iinfo(kind.dtype)
        data = rng.integers(info.min, info.max, size=shape, endpoint=True).astype(kind.dtype)
    return Volume(data=data, spacing=(1.0, 0.5, 2.0))


class TestReadNifti:
    def test_float32_cube(self) -> None:
        raw = encode_nifti(Volume(data=np.arange(64, dtype=np.float32).reshape(4, 4, 4)))
        header = read_header(raw)
        assert header.sizeof_hdr == 348
        assert header.magic == b"n+1"
        assert header.dim[:4] == (3, 4, 4, 4)
        volume = decode_nifti(raw)
        assert volume.shape == (4, 4, 4)
        assert volume.element_kind is ElementKind.FLOAT32

    def test_gzip_detected_by_content(self, tmp_path: Path) -> None:
        data = np.arange(24, dtype=np.int16).reshape(2, 3, 4)
        raw = encode_nifti(Volume(data=data))
        path = tmp_path / "volume.nii"  # no .gz suffix on purpose
        path.write_bytes(gzip.compress(raw))
        assert np.array_equal(read_nifti(path).data, data)

    def test_scaling_promotes_to_float32(self) -> None:
        raw = encode_nifti(Volume(data=np.array([3, 5], dtype=np.int16)))
        volume = decode_nifti(_patch_header(raw, scl_slope=2.0, scl_inter=1.0))
        assert volume.element_kind is ElementKind.FLOAT32
        assert volume.data.tolist() == [7.0, 11.0]

    def test_identity_scaling_is_not_applied(self) -> None:
        raw = encode_nifti(Volume(data=np.array([3, 5], dtype=np.int16)))
        volume = decode_nifti(_patch_header(raw, scl_slope=0.0, scl_inter=4.0))
        assert volume.element_kind is ElementKind.INT16

    def test_first_index_varies_fastest_on_disk(self) -> None:
        data = np.arange(6, dtype=np.uint8).reshape(2, 3)
        raw = encode_nifti(Volume(data=data))
        assert raw[DATA_OFFSET:] == bytes([0, 3, 1, 4, 2, 5])

    def test_byte_swapped_header_reads_identically(self, rng: np.random.Generator) -> None:
        volume = _volume(ElementKind.FLOAT32, rng)
        big = decode_nifti(encode_nifti(volume, byteorder=">"))
        little = decode_nifti(encode_nifti(volume, byteorder="<"))
        assert read_header(encode_nifti(volume, byteorder=">")).byteorder == ">"
        assert np.array_equal(big.data, little.data)
        assert big.data.dtype == little.data.dtype == np.float32


class TestReadNiftiErrors:
    @pytest.fixture
    def raw(self) -> bytes:
        return encode_nifti(Volume(data=np.zeros((2, 2, 2), dtype=np.float32)))

    def test_dual_file_magic(self, raw: bytes) -> None:
        with pytest.raises(UnsupportedDatatype):
            decode_nifti(_patch_header(raw, magic=b"ni1"))

    def test_nifti2_header_size(self, raw: bytes) -> None:
        with pytest.raises(BadMagic):
            decode_nifti(_patch_header(raw, sizeof_hdr=540))

    def test_foreign_magic(self, raw: bytes) -> None:
        with pytest.raises(BadMagic):
            decode_nifti(_patch_header(raw, magic=b"abc"))

    def test_unsupported_datatype_code(self, raw: bytes) -> None:
        with pytest.raises(UnsupportedDatatype):
            decode_nifti(_patch_header(raw, datatype=512))

    def test_bitpix_mismatch(self, raw: bytes) -> None:
        with pytest.raises(UnsupportedDatatype):
            decode_nifti(_patch_header(raw, bitpix=16))

    def test_rank_five(self, raw: bytes) -> None:
        with pytest.raises(BadDims):
            decode_nifti(_patch_header(raw, dim=[5, 2, 2, 2, 1, 1, 1, 1]))

    def test_zero_extent(self, raw: bytes) -> None:
        with pytest.raises(BadDims):
            decode_nifti(_patch_header(raw, dim=[3, 2, 0, 2, 1, 1, 1, 1]))

    def test_small_vox_offset(self, raw: bytes) -> None:
        with pytest.raises(BadMagic):
            decode_nifti(_patch_header(raw, vox_offset=100.0))

    def test_truncated_payload(self, raw: bytes) -> None:
        with pytest.raises(Truncated):
            decode_nifti(raw[:-1])

    def test_truncated_header(self, raw: bytes) -> None:
        with pytest.raises(Truncated):
            decode_nifti(raw[:100])

    def test_truncated_gzip(self, raw: bytes) -> None:
        with pytest.raises(Truncated):
            decode_nifti(gzip.compress(raw)[:15])

    def test_arbitrary_bytes_raise_only_enumerated_errors(self, raw: bytes) -> None:
        rng = np.random.default_rng(99)
        for trial in range(1000):
            if trial % 3 == 1:
                blob = rng.integers(0, 256, size=int(rng.integers(0, 4097)), dtype=np.uint8).tobytes()
            elif trial % 3 == 2:
                # valid header, random payload of up to 4 KB in total
                tail = rng.integers(0, 256, size=int(rng.integers(0, 4097 - 348)), dtype=np.uint8).tobytes()
                blob = raw[:348] + tail
            else:
                mutated = bytearray(raw)
                for position in rng.integers(0, len(mutated), size=int(rng.integers(1, 8))):
                    mutated[position] = int(rng.integers(0, 256))
                blob = bytes(mutated)
            try:
                volume = decode_nifti(blob)
            except NiftiError:
                continue
            assert isinstance(volume, Volume)


class TestWriteNifti:
    @pytest.mark.parametrize("kind", list(ElementKind))
    def test_round_trip_is_bit_exact(self, kind: ElementKind, rng: np.random.Generator, tmp_path: Path) -> None:
        volume = _volume(kind, rng)
        path = tmp_path / f"{kind.value}.nii.gz"
        write_nifti(volume, path)
        restored = read_nifti(path)
        assert restored.shape == volume.shape
        assert restored.element_kind is kind
        assert restored.data.tobytes() == volume.data.tobytes()
        assert restored.spacing == pytest.approx(volume.spacing)

    def test_uint8_zero_cube_layout(self) -> None:
        raw = encode_nifti(Volume(data=np.zeros((2, 2, 2), dtype=np.uint8)))
        assert len(raw) == 352 + 8
        assert raw[DATA_OFFSET:] == b"\x00" * 8
        header = read_header(raw)
        assert header.vox_offset == 352
        assert (header.scl_slope, header.scl_inter) == (1.0, 0.0)

    def test_float64_codes(self) -> None:
        header = read_header(encode_nifti(Volume(data=np.full((1, 1, 1), 1.5))))
        assert header.datatype_code == 64
        assert header.bitpix == 64

    def test_gzip_output_is_deterministic(self, tmp_path: Path) -> None:
        volume = Volume(data=np.arange(8, dtype=np.int32).reshape(2, 2, 2))
        write_nifti(volume, tmp_path / "a.nii.gz")
        write_nifti(volume, tmp_path / "b.nii.gz")
        first = (tmp_path / "a.nii.gz").read_bytes()
        assert first[:2] == b"\x1f\x8b"
        assert first == (tmp_path / "b.nii.gz").read_bytes()

    def test_unsupported_dtype_rejected(self) -> None:
        with pytest.raises(UnsupportedDatatype):
            Volume(data=np.zeros((2, 2), dtype=np.complex64))
