"""Thresholded prediction blobs and their tight rectangles."""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from src.core.errors import ConfigError, ShapeError

DEFAULT_MIN_AREA = 4

# 4-connectivity structuring element
FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)

Box = tuple[int, int, int, int]


@dataclass
class Blob:
    """One connected component of a thresholded map."""
    pixels: np.ndarray   # (H, W) bool, the component alone
    box: Box             # (x, y, w, h)
    area: int

    def box_mask(self) -> np.ndarray:
        """Filled raster of the tight rectangle."""
        x, y, w, h = self.box
        filled = np.zeros(self.pixels.shape, dtype=bool)
        filled[y:y + h, x:x + w] = True
        return filled

    @property
    def centroid(self) -> tuple[float, float]:
        """(row, col) mean of the blob's pixels."""
        rows, cols = np.nonzero(self.pixels)
        return float(rows.mean()), float(cols.mean())


def label_regions(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """4-connected labeling of a boolean map; labels run 1..count in scan order."""
    if mask.ndim != 2:
        raise ShapeError(f"label_regions: expected a 2-D map, got {mask.shape}")
    labels, count = ndimage.label(mask, structure=FOUR_CONNECTED)
    return labels, int(count)


def components(mask: np.ndarray, min_area: int = 1) -> list[Blob]:
    """Connected components of a boolean map, unsorted, at least ``min_area`` pixels."""
    labels, count = label_regions(np.asarray(mask, dtype=bool))
    blobs = []
    for i, region in enumerate(ndimage.find_objects(labels), start=1):
        if region is None:
            continue
        rows, cols = region
        pixels = labels == i
        area = int(pixels.sum())
        if area < min_area:
            continue
        box = (cols.start, rows.start, cols.stop - cols.start, rows.stop - rows.start)
        blobs.append(Blob(pixels=pixels, box=box, area=area))
    return blobs


def extract_blobs(prob: np.ndarray, tau: float = 0.5, min_area: int = DEFAULT_MIN_AREA) -> list[Blob]:
    """Blobs of ``prob > tau``, largest first, ties broken by box origin (y, x).

    Args:
        prob: (H, W) probability map
        tau: Threshold in (0, 1)
        min_area: Smallest pixel count kept

    Returns:
        List of Blob
    """
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"Threshold must be in (0, 1), got {tau}")
    blobs = components(np.asarray(prob) > tau, min_area)
    blobs.sort(key=lambda b: (-b.area, b.box[1], b.box[0]))
    return blobs


def box_iou(a: np.ndarray, b: np.ndarray) -> float:
    """IoU of two boolean rasters; 0 when both are empty."""
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a, b).sum() / union)
