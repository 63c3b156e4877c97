from __future__ import annotations

import numpy as np

from src.preprocessing.models import Sample


def make_sample(rng: np.random.Generator, subject_id: str, extent: int = 16) -> Sample:
    """Random image with a nested cubic tumor: edema around a core around an enhancing center."""

    image = rng.uniform(0.0, 1.0, size=(3, extent, extent, extent)).astype(np.float32)
    mask = np.zeros((extent, extent, extent), dtype=np.uint8)
    center = extent // 2
    mask[center - 4 : center + 4, center - 4 : center + 4, center - 4 : center + 4] = 2
    mask[center - 2 : center + 2, center - 2 : center + 2, center - 2 : center + 2] = 1
    mask[center - 1 : center + 1, center - 1 : center + 1, center - 1 : center + 1] = 3
    return Sample(image=image, mask=mask, subject_id=subject_id)
