"""Region feature vector fed to the forest."""

import math
from dataclasses import astuple, dataclass, fields

import numpy as np

from src.core.errors import ShapeError
from src.postproc.blobs import Blob, Box


@dataclass(frozen=True)
class RegionFeatures:
    cx: float
    cy: float
    h: float
    w: float
    dist_center: float
    aspect: float

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


NUM_FEATURES = len(RegionFeatures.names())


def box_features(box: Box, image_height: int, image_width: int) -> RegionFeatures:
    """Features of an (x, y, w, h) box on an image of the given size."""
    x, y, w, h = box
    if w < 1 or h < 1:
        raise ShapeError(f"Box {box} has an empty side")
    cx = x + w / 2.0
    cy = y + h / 2.0
    dist = math.hypot(cx - image_width / 2.0, cy - image_height / 2.0)
    return RegionFeatures(cx=cx, cy=cy, h=float(h), w=float(w), dist_center=dist, aspect=w / h)


def region_features(blob: Blob, image_height: int, image_width: int) -> RegionFeatures:
    return box_features(blob.box, image_height, image_width)


def feature_matrix(features: list[RegionFeatures]) -> np.ndarray:
    """Stack into (n, 6); an empty list gives (0, 6)."""
    if not features:
        return np.zeros((0, NUM_FEATURES))
    return np.stack([f.as_array() for f in features])
