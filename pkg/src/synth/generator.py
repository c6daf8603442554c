"""Procedural road-like scenes with context cues and sign glyphs.

Four balanced subsets mirror the missing-sign training recipe:

    S1  cue present, sign present
    S2  cue present, sign removed (its box is the segmentation target)
    S3  no cue, sign present
    S4  no cue, no sign

Cues are horizontal ridges (speed-breaker stripes), a vertical median band
with a gap, or a curved band composed of horizontal and vertical runs.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from src.core.errors import ConfigError, DatasetError

Box = tuple[int, int, int, int]  # x, y, w, h


class CueType(str, Enum):
    NONE = "none"
    RIDGE = "ridge"
    MEDIAN_GAP = "median_gap"
    CURVE = "curve"


class Subset(str, Enum):
    S1 = "S1"
    S2 = "S2"
    S3 = "S3"
    S4 = "S4"

    @property
    def has_cue(self) -> bool:
        return self in (Subset.S1, Subset.S2)

    @property
    def renders_sign(self) -> bool:
        return self in (Subset.S1, Subset.S3)


SUBSETS = (Subset.S1, Subset.S2, Subset.S3, Subset.S4)
CUE_FAMILIES = (CueType.RIDGE, CueType.MEDIAN_GAP, CueType.CURVE)

# Leftover scenes go to S4 first, then S3, then S2
REMAINDER_ORDER = (Subset.S4, Subset.S3, Subset.S2, Subset.S1)

SIGN_BORDER = np.array([0.85, 0.10, 0.10])
SIGN_FACE = np.array([0.95, 0.95, 0.95])

# Smallest side the cue painters leave room for
MIN_SIZE = 64


@dataclass
class SyntheticScene:
    """One rendered scene and its ground truth."""
    image: np.ndarray               # (H, W, 3) in [0, 1]
    cue_type: CueType
    cue_mask: np.ndarray            # (H, W) bool
    sign_boxes: list[Box]           # rendered signs
    missing_mask: np.ndarray        # (H, W) bool, nonzero only for S2
    subset: Subset
    seed: int
    missing_boxes: list[Box] = field(default_factory=list)

    @property
    def cue_label(self) -> int:
        """Classifier target: 1 when a cue is present."""
        return int(self.subset.has_cue)

    @property
    def size(self) -> tuple[int, int]:
        return self.image.shape[0], self.image.shape[1]


@dataclass
class GeneratorParams:
    """Scene generator knobs; ranges are inclusive (lo, hi) pairs."""
    height: int = 64
    width: int = 64
    balanced: bool = True
    noise_sigma: float = 0.03
    ridge_count: tuple[int, int] = (2, 4)
    ridge_thickness: tuple[int, int] = (1, 3)
    band_width: tuple[int, int] = (3, 5)
    gap_height: tuple[int, int] = (8, 14)
    curve_radius: tuple[int, int] = (16, 26)
    curve_thickness: tuple[int, int] = (2, 4)
    sign_size: tuple[int, int] = (6, 9)
    sign_jitter: int = 3
    sky_brightness: tuple[float, float] = (0.55, 0.8)
    road_brightness: tuple[float, float] = (0.2, 0.4)
    cue_brightness: tuple[float, float] = (0.85, 1.0)
    subset_weights: Optional[tuple[int, int, int, int]] = None

    def validate(self) -> None:
        """Raise ConfigError on degenerate parameters."""
        if self.height < MIN_SIZE or self.width < MIN_SIZE or self.height % 32 or self.width % 32:
            raise ConfigError(
                f"Image size {self.height}x{self.width} must be multiples of 32 and at least {MIN_SIZE}"
            )
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.sign_jitter < 0:
            raise ConfigError(f"sign_jitter must be >= 0, got {self.sign_jitter}")
        for name in ("ridge_count", "ridge_thickness", "band_width", "gap_height",
                     "curve_radius", "curve_thickness", "sign_size"):
            lo, hi = getattr(self, name)
            if lo < 1 or lo > hi:
                raise ConfigError(f"{name} range ({lo}, {hi}) is degenerate")
        for name in ("sky_brightness", "road_brightness", "cue_brightness"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo <= hi <= 1.0:
                raise ConfigError(f"{name} range ({lo}, {hi}) is not inside [0, 1]")
        if self.sign_size[1] * 3 > min(self.height, self.width):
            raise ConfigError(f"sign_size {self.sign_size} too large for {self.height}x{self.width}")
        self._validate_cue_geometry()
        if self.subset_weights is not None and (
            len(self.subset_weights) != 4 or min(self.subset_weights) < 0 or sum(self.subset_weights) == 0
        ):
            raise ConfigError(f"subset_weights {self.subset_weights} must be four non-negative counts")

    def _validate_cue_geometry(self) -> None:
        """The largest cue of each family must leave the painters a non-empty placement range."""
        h, w = self.height, self.width
        count, thickness = self.ridge_count[1], self.ridge_thickness[1]
        span = count * thickness + (count - 1) * (thickness + 2)
        if h - span - 1 <= h // 2:
            raise ConfigError(f"Ridges up to {span} px tall do not fit the lower half of a {h}-px image")
        margin = self.sign_size[1] + 7
        if w - 2 * margin < 1:
            raise ConfigError(f"Ridge margins of {margin} px leave no stripe in a {w}-px image")
        if self.band_width[1] >= 16:
            raise ConfigError(f"band_width {self.band_width} must stay below 16")
        if h - self.gap_height[1] - 4 <= h // 3 + 4:
            raise ConfigError(f"gap_height {self.gap_height} does not fit below the median top of a {h}-px image")
        if self.curve_radius[1] + self.curve_thickness[1] > min(h - 1, w // 2):
            raise ConfigError(f"curve_radius {self.curve_radius} does not fit a {h}x{w} image")


def subset_counts(n: int, params: GeneratorParams) -> dict[Subset, int]:
    """Scenes per subset: n/4 each when balanced, leftovers per REMAINDER_ORDER."""
    if params.balanced or params.subset_weights is None:
        counts = {s: n // 4 for s in SUBSETS}
        for s in REMAINDER_ORDER[: n % 4]:
            counts[s] += 1
        return counts

    weights = np.asarray(params.subset_weights, dtype=np.float64)
    raw = n * weights / weights.sum()
    counts = {s: int(np.floor(r)) for s, r in zip(SUBSETS, raw)}
    leftovers = np.argsort(-(raw - np.floor(raw)), kind="stable")
    for i in leftovers[: n - sum(counts.values())]:
        counts[SUBSETS[i]] += 1
    return counts


def scene_seed(seed: int, index: int) -> int:
    """Independent per-scene stream so serial and parallel generation agree."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def generate(params: GeneratorParams, n: int, seed: int) -> list[SyntheticScene]:
    """Render ``n`` scenes deterministically from ``(params, n, seed)``.

    Raises:
        ConfigError: If n <= 0 or params are degenerate
    """
    if n <= 0:
        raise ConfigError(f"Scene count must be positive, got {n}")
    params.validate()

    counts = subset_counts(n, params)
    labels = [s for s in SUBSETS for _ in range(counts[s])]
    order = np.random.default_rng(seed).permutation(n)

    return [render_scene(params, labels[order[i]], scene_seed(seed, i)) for i in range(n)]


def render_scene(params: GeneratorParams, subset: Subset, seed: int) -> SyntheticScene:
    """Render one scene of the given subset from its own seed."""
    rng = np.random.default_rng(seed)
    h, w = params.height, params.width

    image = _background(rng, params)
    cue_mask = np.zeros((h, w), dtype=bool)
    cue_type = CueType.NONE
    anchors: list[Box] = []

    if subset.has_cue:
        cue_type = CUE_FAMILIES[int(rng.integers(len(CUE_FAMILIES)))]
        painter = {
            CueType.RIDGE: _paint_ridges,
            CueType.MEDIAN_GAP: _paint_median_gap,
            CueType.CURVE: _paint_curve,
        }[cue_type]
        cue_mask, anchors = painter(rng, params)
        shade = rng.uniform(*params.cue_brightness)
        image[cue_mask] = shade

    sign_boxes: list[Box] = []
    missing_boxes: list[Box] = []
    missing_mask = np.zeros((h, w), dtype=bool)

    if subset != Subset.S4:
        size = int(rng.integers(params.sign_size[0], params.sign_size[1] + 1))
        box = _place_sign(rng, params, cue_mask, anchors, size)
        if subset.renders_sign:
            _paint_sign(image, box)
            sign_boxes.append(box)
        else:
            x, y, bw, bh = box
            missing_mask[y:y + bh, x:x + bw] = True
            missing_boxes.append(box)

    # Noise is drawn last so geometry is identical across noise levels
    image = image + params.noise_sigma * rng.standard_normal(image.shape)
    image = np.clip(image, 0.0, 1.0)

    return SyntheticScene(
        image=image,
        cue_type=cue_type,
        cue_mask=cue_mask,
        sign_boxes=sign_boxes,
        missing_mask=missing_mask,
        subset=subset,
        seed=seed,
        missing_boxes=missing_boxes,
    )


def _background(rng: np.random.Generator, params: GeneratorParams) -> np.ndarray:
    """Sky-to-road vertical gradient with a mild random tint."""
    h, w = params.height, params.width
    sky = rng.uniform(*params.sky_brightness)
    road = rng.uniform(*params.road_brightness)
    horizon = int(rng.integers(h // 4, h // 3 + 1))
    tint = rng.uniform(-0.05, 0.05, size=3)

    rows = np.empty(h)
    rows[:horizon] = sky
    rows[horizon:] = np.linspace(road + 0.1, road, h - horizon)
    image = np.repeat(rows[:, None], w, axis=1)[:, :, None] + tint
    return np.clip(image, 0.0, 1.0)


def _uniform_int(rng: np.random.Generator, bounds: tuple[int, int]) -> int:
    return int(rng.integers(bounds[0], bounds[1] + 1))


def _paint_ridges(rng: np.random.Generator, params: GeneratorParams) -> tuple[np.ndarray, list[Box]]:
    """Horizontal stripes across the road; anchors are the roadside areas above them."""
    h, w = params.height, params.width
    mask = np.zeros((h, w), dtype=bool)
    count = _uniform_int(rng, params.ridge_count)
    thickness = _uniform_int(rng, params.ridge_thickness)
    gap = thickness + 2

    x0 = int(rng.integers(params.sign_size[1] + 3, params.sign_size[1] + 8))
    x1 = w - int(rng.integers(params.sign_size[1] + 3, params.sign_size[1] + 8))
    span = count * thickness + (count - 1) * gap
    y0 = int(rng.integers(h // 2, h - span - 1))
    for i in range(count):
        top = y0 + i * (thickness + gap)
        mask[top:top + thickness, x0:x1] = True

    # Sign stands at the roadside, before the stripes
    band_top = max(y0 - 3 * params.sign_size[1], 1)
    anchors = [(1, band_top, x0 - 2, y0 - band_top - 1), (x1 + 1, band_top, w - x1 - 2, y0 - band_top - 1)]
    return mask, anchors


def _paint_median_gap(rng: np.random.Generator, params: GeneratorParams) -> tuple[np.ndarray, list[Box]]:
    """Vertical median band with a gap; anchors flank the gap's neck."""
    h, w = params.height, params.width
    mask = np.zeros((h, w), dtype=bool)
    band = _uniform_int(rng, params.band_width)
    gap = _uniform_int(rng, params.gap_height)

    bx = int(rng.integers(w // 2 - 8, w // 2 + 8 - band))
    top = h // 3
    gy = int(rng.integers(top + 4, h - gap - 4))
    mask[top:h, bx:bx + band] = True
    mask[gy:gy + gap, bx:bx + band] = False

    # Sign beside the band at the gap's neck
    neck_top = max(gy - params.sign_size[1] // 2, 0)
    neck_h = gap + params.sign_size[1]
    anchors = [
        (bx + band + 2, neck_top, params.sign_size[1] + params.sign_jitter + 2, neck_h),
        (max(bx - params.sign_size[1] - params.sign_jitter - 4, 0), neck_top,
         params.sign_size[1] + params.sign_jitter + 2, neck_h),
    ]
    return mask, anchors


def _paint_curve(rng: np.random.Generator, params: GeneratorParams) -> tuple[np.ndarray, list[Box]]:
    """Quarter-circle band bending right; the anchor is the outer (left) side."""
    h, w = params.height, params.width
    radius = _uniform_int(rng, params.curve_radius)
    thickness = _uniform_int(rng, params.curve_thickness)
    cx = int(rng.integers(w // 2, w // 2 + radius // 2 + 1))
    cy = h - 1

    yy, xx = np.mgrid[0:h, 0:w]
    dist = np.hypot(yy - cy, xx - cx)
    mask = (np.abs(dist - radius) <= thickness / 2.0) & (xx <= cx) & (yy <= cy)

    # Outside the bend, along the 135-degree direction
    reach = radius + thickness + 3
    ax = int(round(cx - reach * np.cos(np.pi / 4))) - params.sign_size[1]
    ay = int(round(cy - reach * np.sin(np.pi / 4))) - params.sign_size[1]
    anchors = [(ax, ay, params.sign_size[1] + params.sign_jitter, params.sign_size[1] + params.sign_jitter)]
    return mask, anchors


def _box_fits(box: Box, cue_mask: np.ndarray) -> bool:
    x, y, bw, bh = box
    h, w = cue_mask.shape
    if x < 0 or y < 0 or x + bw > w or y + bh > h:
        return False
    # One-pixel clearance from the cue
    return not cue_mask[max(y - 1, 0):y + bh + 1, max(x - 1, 0):x + bw + 1].any()


def _place_sign(
    rng: np.random.Generator,
    params: GeneratorParams,
    cue_mask: np.ndarray,
    anchors: Sequence[Box],
    size: int,
) -> Box:
    """Pick a sign box inside the image and clear of the cue.

    Cue scenes draw from the cue family's anchor areas with jitter; scenes
    without a cue place the sign anywhere. A deterministic raster scan is
    the fallback when no random draw fits.
    """
    h, w = cue_mask.shape
    for _ in range(20):
        if anchors:
            ax, ay, aw, ah = anchors[int(rng.integers(len(anchors)))]
            x = ax + int(rng.integers(0, max(aw - size, 0) + 1))
            y = ay + int(rng.integers(0, max(ah - size, 0) + 1))
        else:
            x = int(rng.integers(1, w - size))
            y = int(rng.integers(1, h - size))
        box = (x, y, size, size)
        if _box_fits(box, cue_mask):
            return box

    for y in range(1, h - size):
        for x in range(1, w - size):
            if _box_fits((x, y, size, size), cue_mask):
                return (x, y, size, size)
    raise ConfigError("No room for a sign clear of the cue; enlarge the image or shrink cues")


def _paint_sign(image: np.ndarray, box: Box) -> None:
    """Red-bordered white plate."""
    x, y, bw, bh = box
    image[y:y + bh, x:x + bw] = SIGN_BORDER
    image[y + 2:y + bh - 2, x + 2:x + bw - 2] = SIGN_FACE


def split(
    scenes: Sequence[SyntheticScene],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[list[SyntheticScene], list[SyntheticScene], list[SyntheticScene]]:
    """Stratified deterministic train/val/test split.

    Each subset is shuffled on its own, the subsets are interleaved
    round-robin, and the sequence is cut at the global split sizes
    (largest-remainder rounding), so every split is balanced across subsets.

    Raises:
        DatasetError: On empty input
        ConfigError: If ratios are negative or do not sum to 1
    """
    if not scenes:
        raise DatasetError("Cannot split an empty scene list")
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"Split ratios {ratios} must be three non-negative values summing to 1")

    rng = np.random.default_rng(seed)
    strata = []
    for subset in SUBSETS:
        members = [s for s in scenes if s.subset == subset]
        strata.append([members[i] for i in rng.permutation(len(members))])

    interleaved: list[SyntheticScene] = []
    for i in range(max(len(group) for group in strata)):
        for group in strata:
            if i < len(group):
                interleaved.append(group[i])

    n = len(interleaved)
    raw = np.asarray(ratios) * n
    sizes = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - sizes), kind="stable")[: n - sizes.sum()]:
        sizes[i] += 1

    train_end = sizes[0]
    val_end = train_end + sizes[1]
    return interleaved[:train_end], interleaved[train_end:val_end], interleaved[val_end:]
