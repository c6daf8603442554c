"""Interval-level recognition by majority vote over frames."""

from dataclasses import dataclass, field
from typing import Sequence

from src.core.errors import ConfigError, ShapeError
from src.train.metrics import MetricsReport

MISSING = "missing"
NOT_MISSING = "not-missing"


@dataclass
class IntervalDecision:
    interval_id: str
    frame_verdicts: list[list[bool]] = field(default_factory=list)
    missing_frames: int = 0
    total_frames: int = 0
    final: str = NOT_MISSING

    @property
    def is_missing(self) -> bool:
        return self.final == MISSING

    def to_dict(self) -> dict:
        return {
            "interval_id": self.interval_id,
            "verdicts": self.frame_verdicts,
            "missing_frames": self.missing_frames,
            "total_frames": self.total_frames,
            "final": self.final,
        }


def video_decide(frames: Sequence[Sequence[bool]], interval_id: str = "0") -> IntervalDecision:
    """Missing iff strictly more than half the frames hold a missing region.

    Args:
        frames: Per frame, the forest verdict (True = missing) of each region.
            A frame with no regions counts as not missing.
        interval_id: Carried through to the decision

    Raises:
        ShapeError: If the interval has no frames
    """
    if len(frames) == 0:
        raise ShapeError(f"Interval {interval_id} has no frames")
    verdicts = [[bool(v) for v in frame] for frame in frames]
    hits = sum(1 for frame in verdicts if any(frame))
    total = len(verdicts)
    return IntervalDecision(
        interval_id=interval_id,
        frame_verdicts=verdicts,
        missing_frames=hits,
        total_frames=total,
        final=MISSING if 2 * hits > total else NOT_MISSING,
    )


def eval_video(decisions: Sequence[IntervalDecision], gt_missing: Sequence[bool]) -> MetricsReport:
    """Interval-level P/R/F with missing as the positive class."""
    if len(decisions) != len(gt_missing):
        raise ConfigError(f"{len(decisions)} decisions but {len(gt_missing)} labels")
    return MetricsReport.from_predictions(
        [d.is_missing for d in decisions], [bool(g) for g in gt_missing]
    )
