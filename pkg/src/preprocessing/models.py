"""Domain models for subjects and preprocessed samples."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np

from ..config import CROP_MULTIPLE
from ..errors import ShapeMismatch, UnknownLabel

TUMOR_LABELS = (0, 1, 2, 3)


@dataclass(frozen=True)
class Subject:
    """One BraTS subject: three modality files and its segmentation."""

    subject_id: str
    t2_path: Path
    t1ce_path: Path
    flair_path: Path
    mask_path: Path

    def __post_init__(self) -> None:
        paths = {self.t2_path, self.t1ce_path, self.flair_path, self.mask_path}
        if len(paths) != 4:
            raise ValueError(f"Subject {self.subject_id} must reference four distinct files")


@dataclass
class Sample:
    """A preprocessed (image, mask) pair ready for training."""

    image: np.ndarray  # C x D x H x W float32 in [0, 1]
    mask: np.ndarray  # D x H x W uint8 labels in {0,1,2,3}
    subject_id: str

    @property
    def extent(self) -> Tuple[int, int, int]:
        return tuple(int(value) for value in self.image.shape[1:])  # type: ignore[return-value]

    def validate(self, crop_multiple: int = CROP_MULTIPLE, channels: int = 3) -> None:
        """Raise if any sample invariant is violated."""

        if self.image.ndim != 4 or self.image.shape[0] != channels:
            raise ShapeMismatch(f"{self.subject_id}: image shape {self.image.shape} is not {channels}xDxHxW")
        if self.mask.shape != self.image.shape[1:]:
            raise ShapeMismatch(f"{self.subject_id}: mask {self.mask.shape} vs image {self.image.shape}")
        if any(extent % crop_multiple for extent in self.extent):
            raise ShapeMismatch(f"{self.subject_id}: extents {self.extent} not multiples of {crop_multiple}")
        if self.image.size and (self.image.min() < 0.0 or self.image.max() > 1.0):
            raise ValueError(f"{self.subject_id}: image intensities outside [0, 1]")
        if not np.isin(self.mask, TUMOR_LABELS).all():
            raise UnknownLabel(f"{self.subject_id}: mask labels outside {TUMOR_LABELS}")


__all__ = ["Subject", "Sample", "TUMOR_LABELS"]
