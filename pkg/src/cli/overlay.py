"""Axial-slice overlays of predicted labels on FLAIR, as binary PPM (P6)."""
from __future__ import annotations

from pathlib import Path
from typing import List

import numpy as np

from ..errors import IoFailure, ShapeMismatch

LABEL_COLORS = {
    1: (255, 0, 0),
    2: (0, 255, 0),
    3: (255, 255, 0),
}
BLEND = 0.5
FLAIR_CHANNEL = 2


def encode_ppm(rgb: np.ndarray) -> bytes:
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ShapeMismatch(f"PPM needs H x W x 3 pixels, got {rgb.shape}")
    height, width = rgb.shape[:2]
    return f"P6\n{width} {height}\n255\n".encode("ascii") + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes()


def overlay_slice(background: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Grayscale ``background`` in [0, 1] with tumor labels blended in their palette colour."""

    if background.shape != labels.shape:
        raise ShapeMismatch(f"background {background.shape} vs labels {labels.shape}")
    gray = np.rint(np.clip(background, 0.0, 1.0) * 255.0)
    rgb = np.repeat(gray[..., None], 3, axis=2)
    for label, color in LABEL_COLORS.items():
        selected = labels == label
        rgb[selected] = np.rint((1.0 - BLEND) * rgb[selected] + BLEND * np.asarray(color, dtype=np.float64))
    return rgb.astype(np.uint8)


def write_overlays(image: np.ndarray, labels: np.ndarray, out_dir: Path, channel: int = FLAIR_CHANNEL) -> List[Path]:
    """One ``slice_XXX.ppm`` per index along D."""

    if labels.shape != image.shape[1:]:
        raise ShapeMismatch(f"labels {labels.shape} vs image {image.shape}")
    out_dir = Path(out_dir)
    paths = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for index in range(labels.shape[0]):
            path = out_dir / f"slice_{index:03d}.ppm"
            path.write_bytes(encode_ppm(overlay_slice(image[channel, index], labels[index])))
            paths.append(path)
    except OSError as exc:
        raise IoFailure(f"Cannot write overlays under {out_dir}: {exc}") from exc
    return paths


__all__ = ["encode_ppm", "overlay_slice", "write_overlays", "LABEL_COLORS"]
