"""Synthetic BraTS-layout subjects for desk-scale runs.

Each subject gets three smoothed-noise modalities and a mask with one or more
ellipsoidal tumors: a necrotic core (1) inside an enhancing rim (stored as the
raw BraTS label 4) inside edema (2). Modalities carry region-specific contrast
so a model can learn the labels from intensities.
"""
from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
from scipy import ndimage

from ..config import Modality
from ..storage.nifti import Volume, write_nifti
from .pipeline import SEGMENTATION_SUFFIX

LOGGER = logging.getLogger(__name__)

CORE_RADIUS = 0.4
RIM_RADIUS = 0.65
NOISE_SIGMA = 1.5

# modality -> (core, enhancing rim, edema) intensity offsets
CONTRAST: Dict[Modality, Tuple[float, float, float]] = {
    Modality.T2: (1.5, 0.8, 1.2),
    Modality.T1CE: (-0.5, 2.5, 0.0),
    Modality.FLAIR: (1.0, 1.0, 2.0),
}


def _tumor_distance(shape: Tuple[int, int, int], rng: np.random.Generator, radius: float) -> np.ndarray:
    """Normalized ellipsoid distance field of one tumor (1.0 on its boundary)."""

    center = [rng.uniform(0.35 * extent, 0.65 * extent) for extent in shape]
    stretch = rng.uniform(0.8, 1.25, size=3)
    stretch /= np.cbrt(np.prod(stretch))
    axes = radius * stretch
    grids = np.meshgrid(*[np.arange(extent, dtype=np.float64) for extent in shape], indexing="ij")
    return np.sqrt(sum(((grid - c) / a) ** 2 for grid, c, a in zip(grids, center, axes)))


def synthetic_mask(
    shape: Tuple[int, int, int], rng: np.random.Generator, target_ratio: float, tumors: int = 1
) -> np.ndarray:
    """Raw-label mask whose labelled fraction is close to ``target_ratio``."""

    voxels = math.prod(shape)
    radius = (3.0 * target_ratio * voxels / (4.0 * math.pi * max(1, tumors))) ** (1.0 / 3.0)
    mask = np.zeros(shape, dtype=np.uint8)
    for _ in range(tumors):
        distance = _tumor_distance(shape, rng, radius)
        free = mask == 0
        mask[free & (distance < 1.0)] = 2
        mask[free & (distance < RIM_RADIUS)] = 4
        mask[free & (distance < CORE_RADIUS)] = 1
    return mask


def synthetic_modalities(mask: np.ndarray, rng: np.random.Generator) -> Dict[Modality, np.ndarray]:
    core, rim, edema = mask == 1, mask == 4, mask == 2
    volumes = {}
    for modality in Modality:
        noise = ndimage.gaussian_filter(rng.normal(size=mask.shape), sigma=NOISE_SIGMA)
        noise /= noise.std() + 1e-12
        core_shift, rim_shift, edema_shift = CONTRAST[modality]
        volume = 0.5 * noise + core_shift * core + rim_shift * rim + edema_shift * edema
        volumes[modality] = (100.0 * (volume - volume.min())).astype(np.float32)
    return volumes


def write_synthetic_subject(
    out_root: Path,
    subject_id: str,
    extent: int,
    rng: np.random.Generator,
    target_ratio: float,
    tumors: int = 1,
) -> Path:
    shape = (extent, extent, extent)
    mask = synthetic_mask(shape, rng, target_ratio, tumors)
    directory = Path(out_root) / subject_id
    for modality, volume in synthetic_modalities(mask, rng).items():
        write_nifti(Volume(data=volume), directory / f"{subject_id}_{modality.value}.nii.gz")
    write_nifti(Volume(data=mask), directory / f"{subject_id}_{SEGMENTATION_SUFFIX}.nii.gz")
    LOGGER.debug(
        "Wrote synthetic subject",
        extra={"subject_id": subject_id, "ratio": float(np.count_nonzero(mask)) / mask.size},
    )
    return directory


def write_synthetic_dataset(
    out_root: Path,
    subjects: int,
    extent: int,
    seed: int,
    target_ratio: float = 0.05,
    tumors: int = 1,
) -> List[Path]:
    """Write ``subjects`` synthetic subjects; identical arguments give identical bytes."""

    rng = np.random.default_rng(seed)
    width = max(3, len(str(subjects)))
    return [
        write_synthetic_subject(out_root, f"Synth_{index:0{width}d}", extent, rng, target_ratio, tumors)
        for index in range(1, subjects + 1)
    ]


__all__ = ["synthetic_mask", "synthetic_modalities", "write_synthetic_subject", "write_synthetic_dataset"]
