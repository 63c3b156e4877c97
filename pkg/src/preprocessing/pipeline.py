"""Data preparation: load, normalize, remap, stack, crop and filter BraTS subjects."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..config import Modality, PreprocessConfig
from ..errors import MissingInput, NonFiniteInput, SegmentationError, ShapeMismatch, TargetTooLarge, UnknownLabel
from ..storage.nifti import read_nifti
from ..storage.sample_store import save_sample, write_manifest
from .models import Sample, Subject

LOGGER = logging.getLogger(__name__)

RAW_LABELS = (0, 1, 2, 4)
ENHANCING_RAW_LABEL = 4
ENHANCING_LABEL = 3
NIFTI_SUFFIXES = (".nii.gz", ".nii")
SEGMENTATION_SUFFIX = "seg"


def minmax_normalize(volume: np.ndarray) -> np.ndarray:
    """Rescale a whole volume to [0, 1]; constant volumes become all zeros."""

    values = np.asarray(volume, dtype=np.float64)
    if not np.isfinite(values).all():
        raise NonFiniteInput("Volume holds NaN or infinite voxels")
    if values.size == 0:
        return values.astype(np.float32)
    low, high = values.min(), values.max()
    if high == low:
        return np.zeros(values.shape, dtype=np.float32)
    return ((values - low) / (high - low)).astype(np.float32)


def remap_labels(mask: np.ndarray) -> np.ndarray:
    """Map raw BraTS labels {0,1,2,4} onto contiguous classes {0,1,2,3}."""

    mask = np.asarray(mask)
    unexpected = np.setdiff1d(np.unique(mask), RAW_LABELS)
    if unexpected.size:
        raise UnknownLabel(f"Mask holds labels {unexpected.tolist()} outside {RAW_LABELS}")
    remapped = mask.astype(np.uint8)
    remapped[mask == ENHANCING_RAW_LABEL] = ENHANCING_LABEL
    return remapped


def stack_modalities(volumes: Sequence[np.ndarray]) -> np.ndarray:
    """Stack same-shaped volumes into a C x D x H x W float32 array."""

    if not volumes:
        raise ShapeMismatch("No volumes to stack")
    shape = np.shape(volumes[0])
    for index, volume in enumerate(volumes):
        if np.shape(volume) != shape:
            raise ShapeMismatch(f"Volume {index} has shape {np.shape(volume)}, expected {shape}")
    return np.stack([np.asarray(volume, dtype=np.float32) for volume in volumes], axis=0)


def crop_window(source: Sequence[int], target: Sequence[int]) -> Tuple[slice, ...]:
    window = []
    for src, tgt in zip(source, target):
        if tgt > src:
            raise TargetTooLarge(f"Crop target {tuple(target)} exceeds source extents {tuple(source)}")
        start = (src - tgt) // 2
        window.append(slice(start, start + tgt))
    return tuple(window)


def center_crop(
    image: np.ndarray, mask: np.ndarray, target: Sequence[int]
) -> Tuple[np.ndarray, np.ndarray]:
    """Crop image (C x D x H x W) and mask (D x H x W) with the same centered window."""

    if image.shape[1:] != mask.shape:
        raise ShapeMismatch(f"Image spatial extents {image.shape[1:]} differ from mask {mask.shape}")
    if len(target) != 3:
        raise ShapeMismatch(f"Crop target {tuple(target)} must have three extents")
    window = crop_window(mask.shape, target)
    return image[(slice(None), *window)].copy(), mask[window].copy()


def nonzero_label_ratio(mask: np.ndarray) -> float:
    total = int(np.size(mask))
    if total == 0:
        return 0.0
    return float(np.count_nonzero(mask)) / float(total)


def _read_modality(path: Path) -> np.ndarray:
    data = read_nifti(path).data
    if data.ndim != 3:
        raise ShapeMismatch(f"{path}: expected a 3D volume, got shape {data.shape}")
    return data


def _read_mask(path: Path) -> np.ndarray:
    data = _read_modality(path)
    if np.issubdtype(data.dtype, np.floating):
        if not np.isfinite(data).all() or not np.array_equal(data, np.round(data)):
            raise UnknownLabel(f"{path}: mask holds non-integral values")
        LOGGER.debug("Casting float-typed mask to integers", extra={"path": str(path)})
        data = data.astype(np.int32)
    return data


def preprocess_subject(subject: Subject, config: PreprocessConfig) -> Optional[Sample]:
    """Run the full pipeline for one subject; ``None`` when the ratio filter rejects it."""

    paths = {
        Modality.T2: subject.t2_path,
        Modality.T1CE: subject.t1ce_path,
        Modality.FLAIR: subject.flair_path,
    }
    channels = [minmax_normalize(_read_modality(paths[modality])) for modality in config.modalities]
    mask = remap_labels(_read_mask(subject.mask_path))
    image = stack_modalities(channels)
    if image.shape[1:] != mask.shape:
        raise ShapeMismatch(f"{subject.subject_id}: mask {mask.shape} vs modalities {image.shape[1:]}")
    image, mask = center_crop(image, mask, config.crop_target)
    ratio = nonzero_label_ratio(mask)
    if ratio <= config.label_ratio_threshold:
        LOGGER.info(
            "Skipping subject below label ratio",
            extra={"subject_id": subject.subject_id, "ratio": ratio, "threshold": config.label_ratio_threshold},
        )
        return None
    sample = Sample(image=image, mask=mask, subject_id=subject.subject_id)
    sample.validate(crop_multiple=config.crop_multiple, channels=len(config.modalities))
    LOGGER.info("Accepted subject", extra={"subject_id": subject.subject_id, "ratio": ratio})
    return sample


def _find_volume(directory: Path, subject_id: str, suffix: str) -> Path:
    for extension in NIFTI_SUFFIXES:
        candidate = directory / f"{subject_id}_{suffix}{extension}"
        if candidate.is_file():
            return candidate
    raise MissingInput(f"{directory}: no {subject_id}_{suffix}.nii(.gz)")


def subject_from_directory(directory: Path) -> Subject:
    subject_id = directory.name
    return Subject(
        subject_id=subject_id,
        t2_path=_find_volume(directory, subject_id, Modality.T2.value),
        t1ce_path=_find_volume(directory, subject_id, Modality.T1CE.value),
        flair_path=_find_volume(directory, subject_id, Modality.FLAIR.value),
        mask_path=_find_volume(directory, subject_id, SEGMENTATION_SUFFIX),
    )


def discover_subjects(root: Path) -> List[Path]:
    """Subject directories under ``root``, sorted by subject id."""

    root = Path(root)
    if not root.is_dir():
        raise MissingInput(f"Input root {root} is not a directory")
    return sorted((entry for entry in root.iterdir() if entry.is_dir()), key=lambda entry: entry.name)


class OutcomeStatus(str, Enum):
    ACCEPTED = "accepted"
    SKIPPED = "skipped"
    FAILED = "failed"


@dataclass
class SubjectOutcome:
    """Per-subject result of a dataset preprocessing run."""

    subject_id: str
    status: OutcomeStatus
    detail: str = ""


def _process_directory(directory: Path, config: PreprocessConfig, out_root: Path) -> SubjectOutcome:
    try:
        subject = subject_from_directory(directory)
        sample = preprocess_subject(subject, config)
        if sample is None:
            return SubjectOutcome(directory.name, OutcomeStatus.SKIPPED, "label ratio at or below threshold")
        save_sample(sample, out_root)
        return SubjectOutcome(directory.name, OutcomeStatus.ACCEPTED)
    except SegmentationError as exc:
        LOGGER.error("Subject failed", extra={"subject_id": directory.name, "error": str(exc)})
        return SubjectOutcome(directory.name, OutcomeStatus.FAILED, str(exc))


def preprocess_dataset(
    in_root: Path, out_root: Path, config: PreprocessConfig, threads: int = 1
) -> List[SubjectOutcome]:
    """Preprocess every subject under ``in_root`` into SMP1 samples plus a manifest.

    Subjects are independent; with ``threads > 1`` they are processed
    concurrently but outcomes and the manifest keep subject-id order.
    """

    directories = discover_subjects(in_root)
    if not directories:
        LOGGER.warning("No subjects found", extra={"path": str(in_root)})
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        outcomes = list(pool.map(lambda directory: _process_directory(directory, config, out_root), directories))
    accepted = [outcome.subject_id for outcome in outcomes if outcome.status is OutcomeStatus.ACCEPTED]
    write_manifest(out_root, accepted)
    return outcomes


__all__ = [
    "minmax_normalize",
    "remap_labels",
    "stack_modalities",
    "center_crop",
    "nonzero_label_ratio",
    "preprocess_subject",
    "subject_from_directory",
    "discover_subjects",
    "preprocess_dataset",
    "SubjectOutcome",
    "OutcomeStatus",
]
