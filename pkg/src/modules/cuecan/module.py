"""CueCAn: pooled row/column context filling, subtraction, concatenation, merge."""

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from src.core import ops
from src.core.errors import ConfigError, ShapeError
from src.core.tensor import Tensor
from src.modules.base import BaseModule
from src.modules.cuecan import config
from src.modules.layers import Conv2d


class Variant(str, Enum):
    CENTER_MASKED = "center"
    EDGE_ONLY = "edge"


class Orientation(str, Enum):
    ROW_FILL = "row"
    COLUMN_FILL = "column"


def build_mask(k: int, variant: Variant, orientation: Orientation) -> np.ndarray:
    """Binary (k, k) spatial mask for a filling kernel.

    Row filling zeroes rows, column filling the transposed pattern.
    Center-masked kernels zero a central band of at most three rows;
    edge-only kernels keep only rows 0 and k-1. The two coincide for k=3
    and k=5 and differ for k=7.

    Raises:
        ConfigError: If k is even or unsupported
    """
    if k not in config.SUPPORTED_KERNELS:
        raise ConfigError(f"Unsupported filling kernel size {k} (expected one of {config.SUPPORTED_KERNELS})")

    mask = np.ones((k, k))
    if variant == Variant.EDGE_ONLY:
        mask[1:k - 1, :] = 0.0
    else:
        band = min(k - 2, config.CENTER_BAND_MAX)
        start = (k - band) // 2
        mask[start:start + band, :] = 0.0

    if orientation == Orientation.COLUMN_FILL:
        mask = mask.T.copy()
    return mask


class MaskedKernel(Conv2d):
    """Filling convolution whose masked taps stay exactly zero.

    With ``depthwise=True`` the mask is additionally channel-diagonal, so
    each channel is filled only from its own context.
    """

    def __init__(
        self,
        channels: int,
        k: int,
        variant: Variant,
        orientation: Orientation,
        rng: np.random.Generator,
        depthwise: bool = False,
    ):
        self.k = k
        self.variant = variant
        self.orientation = orientation
        self.depthwise = depthwise
        spatial = build_mask(k, variant, orientation)
        mask = spatial[:, :, None, None]
        if depthwise:
            mask = mask * np.eye(channels)[None, None, :, :]
        super().__init__(channels, channels, k, rng, mask=mask)

    @property
    def name(self) -> str:
        return f"{self.orientation.value}fill"

    @property
    def spatial_mask(self) -> np.ndarray:
        return build_mask(self.k, self.variant, self.orientation)


@dataclass(frozen=True)
class Placement:
    """One unit: encoder block, filling kernel size, edge-only flag."""
    block: int
    kernel_size: int
    edge_only: bool = False

    @property
    def variant(self) -> Variant:
        return Variant.EDGE_ONLY if self.edge_only else Variant.CENTER_MASKED

    def token(self) -> str:
        return f"{self.kernel_size}{'e' if self.edge_only else ''}"


@dataclass(frozen=True)
class CueCanConfig:
    """Where CueCAn units go and how they fill.

    String form concatenates one token per block, "3"|"5"|"7" optionally
    followed by "e": three tokens address blocks 3, 4, 5 ("5e5e3"), five
    tokens address blocks 1-5, and "" means no units.
    """
    placements: tuple[Placement, ...] = ()
    pooled_rows: int = config.POOLED_ROWS

    @classmethod
    def parse(cls, text: str, pooled_rows: int = config.POOLED_ROWS) -> "CueCanConfig":
        text = text.strip()
        if not text:
            return cls((), pooled_rows)

        if not re.fullmatch(f"(?:{config.TOKEN_PATTERN})+", text):
            raise ConfigError(f"Malformed CueCAn config string '{text}'")
        tokens = re.findall(config.TOKEN_PATTERN, text)

        if len(tokens) == len(config.DEFAULT_BLOCKS):
            blocks = config.DEFAULT_BLOCKS
        elif len(tokens) == len(config.ALL_BLOCKS):
            blocks = config.ALL_BLOCKS
        else:
            raise ConfigError(
                f"CueCAn config '{text}' has {len(tokens)} tokens; expected 3 (blocks 3-5) or 5 (blocks 1-5)"
            )

        placements = tuple(
            Placement(block=b, kernel_size=int(size), edge_only=(edge == "e"))
            for b, (size, edge) in zip(blocks, tokens)
        )
        return cls(placements, pooled_rows)

    def render(self) -> str:
        return "".join(p.token() for p in self.placements)

    def __str__(self) -> str:
        return self.render()

    def placement_for(self, block: int) -> Optional[Placement]:
        for p in self.placements:
            if p.block == block:
                return p
        return None


@dataclass
class CueCanParts:
    """Intermediate maps of one CueCAn evaluation."""
    pooled: Tensor
    f_horiz: Tensor
    f_vert: Tensor
    d_horiz: Tensor
    d_vert: Tensor
    f_concat: Tensor
    output: Tensor


class CueCanUnit(BaseModule):
    """Pool -> masked row/column filling -> upsample -> subtract -> concat -> 1x1 merge + ReLU.

    ``clamp_rows`` lets an encoder placement pool to min(N, H) rows on
    shallow deep-block maps; a standalone unit refuses H < N.
    """

    def __init__(
        self,
        channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        edge_only: bool = False,
        pooled_rows: int = config.POOLED_ROWS,
        depthwise: bool = False,
        clamp_rows: bool = False,
    ):
        if pooled_rows < 1:
            raise ConfigError(f"pooled_rows must be positive, got {pooled_rows}")
        self.channels = channels
        self.pooled_rows = pooled_rows
        self.clamp_rows = clamp_rows
        variant = Variant.EDGE_ONLY if edge_only else Variant.CENTER_MASKED
        self.rowfill = MaskedKernel(channels, kernel_size, variant, Orientation.ROW_FILL, rng, depthwise)
        self.colfill = MaskedKernel(channels, kernel_size, variant, Orientation.COLUMN_FILL, rng, depthwise)
        self.merge = Conv2d(3 * channels, channels, 1, rng)

    @property
    def name(self) -> str:
        return "cuecan"

    def forward(self, x: Tensor) -> Tensor:
        return cuecan_forward(x, self)


def cuecan_parts(features: Tensor, unit: CueCanUnit) -> CueCanParts:
    """Evaluate a unit and keep every intermediate map.

    Raises:
        ShapeError: If H < N (without row clamping), W < 2, or the channel
            count does not match the unit
    """
    if features.ndim != 4:
        raise ShapeError(f"cuecan: expected (B, H, W, C), got {features.shape}")
    _, h, w, c = features.shape
    if c != unit.channels:
        raise ShapeError(f"cuecan: input has {c} channels, unit merges {unit.channels}")

    rows = min(unit.pooled_rows, h) if unit.clamp_rows else unit.pooled_rows
    if h < rows:
        raise ShapeError(f"cuecan: feature height {h} is below pooled rows {rows}")
    if w < 2:
        raise ShapeError(f"cuecan: feature width {w} is below 2")

    pooled = ops.adaptive_avg_pool(features, rows, max(w // 2, 1))
    f_horiz = unit.rowfill(pooled)
    f_vert = unit.colfill(pooled)
    d_horiz = ops.sub(features, ops.bilinear_upsample(f_horiz, h, w))
    d_vert = ops.sub(features, ops.bilinear_upsample(f_vert, h, w))
    f_concat = ops.concat_channels([features, d_horiz, d_vert])
    output = ops.relu(unit.merge(f_concat))
    return CueCanParts(pooled, f_horiz, f_vert, d_horiz, d_vert, f_concat, output)


def cuecan_forward(features: Tensor, unit: CueCanUnit) -> Tensor:
    return cuecan_parts(features, unit).output


def attach_units(encoder, cuecan_config: CueCanConfig, rng: np.random.Generator):
    """Insert a unit after the last layer of each configured encoder block.

    Args:
        encoder: Object exposing ``num_blocks``, ``block_channels(i)`` and
            ``cuecan`` (dict of units keyed ``b<i>``)
        cuecan_config: Placements to instrument
        rng: Initializes the new units

    Returns:
        The same encoder, instrumented

    Raises:
        ConfigError: If the encoder has fewer than five blocks or a
            placement names a block outside it
    """
    if encoder.num_blocks < 5:
        raise ConfigError(f"Encoder has {encoder.num_blocks} blocks; CueCAn placement needs 5")

    for placement in cuecan_config.placements:
        if not 1 <= placement.block <= encoder.num_blocks:
            raise ConfigError(f"CueCAn placement at block {placement.block} is outside the encoder")
        encoder.cuecan[f"b{placement.block}"] = CueCanUnit(
            channels=encoder.block_channels(placement.block),
            kernel_size=placement.kernel_size,
            rng=rng,
            edge_only=placement.edge_only,
            pooled_rows=cuecan_config.pooled_rows,
            clamp_rows=True,
        )

    encoder.cuecan_config = cuecan_config
    return encoder
