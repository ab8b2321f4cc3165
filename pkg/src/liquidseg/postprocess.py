"""Segmentation mask -> fill level: opening, largest blob, bounding-box height."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imaging import BoundingBox, ImagingError, as_mask, bounding_box_of

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class FillEstimate:
    liquid_height: int  # pixels, measured up from the cup bottom
    cup_height: int
    level: float  # liquid_height / cup_height, clamped to [0, 1]
    filtered_mask: np.ndarray


def morphological_open(mask, kernel: int = 5) -> np.ndarray:
    """Erode then dilate with a ``kernel`` x ``kernel`` square."""
    mask = as_mask(mask)
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be odd and >= 1, got {kernel}")
    if kernel == 1:
        return mask.copy()
    return ndimage.binary_opening(mask, structure=np.ones((kernel, kernel), dtype=bool))


def largest_component(mask) -> np.ndarray:
    mask = as_mask(mask)
    labels, n = ndimage.label(mask, structure=FOUR_CONNECTED)
    if n == 0:
        return np.zeros_like(mask)
    sizes = np.bincount(labels.ravel())[1:]
    # labels are numbered in raster order of their first pixel, so argmax
    # resolves ties toward the component that starts first (row-major)
    return labels == (int(np.argmax(sizes)) + 1)


def estimate_fill(mask, cup_bbox: BoundingBox, kernel: int = 5) -> FillEstimate:
    mask = as_mask(mask)
    h_cup = cup_bbox.y_max - cup_bbox.y_min + 1
    if cup_bbox.y_max <= cup_bbox.y_min:
        raise ImagingError(f"degenerate cup box {cup_bbox}")
    inside = np.zeros_like(mask)
    ys, xs = cup_bbox.region()
    inside[ys, xs] = mask[ys, xs]
    filtered = largest_component(morphological_open(inside, kernel))
    box = bounding_box_of(filtered)
    if box is None:
        return FillEstimate(0, h_cup, 0.0, filtered)
    liquid_h = cup_bbox.y_max - box.y_min + 1
    level = float(np.clip(liquid_h / h_cup, 0.0, 1.0))
    return FillEstimate(min(liquid_h, h_cup), h_cup, level, filtered)
