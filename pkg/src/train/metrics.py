"""Confusion-count metrics and region-level localization recall."""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from src.core.errors import ConfigError, ShapeError
from src.postproc.blobs import box_iou, components, label_regions

DEFAULT_TAU = 0.5
DEFAULT_IOU_MIN = 0.25


def f_score(precision: float, recall: float) -> float:
    """Harmonic mean; 0 when both are 0. Works on fractions or percentages."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


@dataclass
class MetricsReport:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    breakdown: dict[str, "MetricsReport"] = field(default_factory=dict)

    @classmethod
    def from_predictions(
        cls,
        predicted: Sequence[bool],
        actual: Sequence[bool],
        groups: Optional[Sequence[str]] = None,
    ) -> "MetricsReport":
        """Count outcomes; ``groups`` (e.g. cue type per item) fills ``breakdown``."""
        predicted = np.asarray(predicted, dtype=bool)
        actual = np.asarray(actual, dtype=bool)
        if predicted.shape != actual.shape:
            raise ShapeError(f"{predicted.shape[0]} predictions but {actual.shape[0]} labels")
        report = cls(
            tp=int((predicted & actual).sum()),
            fp=int((predicted & ~actual).sum()),
            tn=int((~predicted & ~actual).sum()),
            fn=int((~predicted & actual).sum()),
        )
        if groups is not None:
            groups = np.asarray(groups)
            for key in sorted(set(groups.tolist())):
                sel = groups == key
                report.breakdown[str(key)] = cls.from_predictions(predicted[sel], actual[sel])
        return report

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f_score(self) -> float:
        return f_score(self.precision, self.recall)

    @property
    def accuracy(self) -> float:
        return _ratio(self.tp + self.tn, self.total)

    def rates(self) -> dict[str, float]:
        """Each outcome as a percentage of all items."""
        return {
            name: 100.0 * _ratio(count, self.total)
            for name, count in (("fn", self.fn), ("fp", self.fp), ("tn", self.tn), ("tp", self.tp))
        }

    def merge(self, other: "MetricsReport") -> "MetricsReport":
        return MetricsReport(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    def to_dict(self) -> dict:
        out = {
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f_score": self.f_score,
        }
        if self.breakdown:
            out["breakdown"] = {k: v.to_dict() for k, v in self.breakdown.items()}
        return out


@dataclass
class LocalizationResult:
    recalled: int
    total: int

    @property
    def recall(self) -> Optional[float]:
        """None when there was nothing to find."""
        return self.recalled / self.total if self.total else None


def predicted_regions(prob: np.ndarray, tau: float, postprocess: bool, min_area: int = 1) -> list[np.ndarray]:
    """Connected regions of ``prob > tau``; with ``postprocess`` each becomes its filled tight box."""
    blobs = components(np.asarray(prob) > tau, min_area)
    if postprocess:
        return [b.box_mask() for b in blobs]
    return [b.pixels for b in blobs]


def localize_one(prob: np.ndarray, gt: np.ndarray, tau: float, iou_min: float, postprocess: bool) -> LocalizationResult:
    labels, count = label_regions(np.asarray(gt, dtype=bool))
    preds = predicted_regions(prob, tau, postprocess)
    recalled = 0
    for i in range(1, count + 1):
        region = labels == i
        if any(box_iou(region, p) >= iou_min for p in preds):
            recalled += 1
    return LocalizationResult(recalled=recalled, total=count)


def eval_localization(
    prob_maps: Sequence[np.ndarray],
    gt_masks: Sequence[np.ndarray],
    tau: float = DEFAULT_TAU,
    iou_min: float = DEFAULT_IOU_MIN,
    postprocess: bool = False,
) -> Optional[float]:
    """Fraction of ground-truth regions hit by some predicted region at IoU >= ``iou_min``.

    Args:
        prob_maps: Per scene (H, W) sigmoid probabilities
        gt_masks: Per scene (H, W) boolean missing-sign masks
        tau: Pixel threshold in (0, 1)
        iou_min: Inclusive IoU bound
        postprocess: Score the tight rectangles of the blobs instead of the blobs

    Returns:
        Recall, or None when the masks hold no region at all
    """
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"Threshold must be in (0, 1), got {tau}")
    if len(prob_maps) != len(gt_masks):
        raise ShapeError(f"{len(prob_maps)} predictions but {len(gt_masks)} ground-truth masks")

    recalled = total = 0
    for prob, gt in zip(prob_maps, gt_masks):
        if np.shape(prob) != np.shape(gt):
            raise ShapeError(f"Prediction {np.shape(prob)} and mask {np.shape(gt)} differ")
        result = localize_one(prob, gt, tau, iou_min, postprocess)
        recalled += result.recalled
        total += result.total
    return LocalizationResult(recalled, total).recall
