"""Scaled-down VGG encoder with optional CueCAn units after blocks."""

from typing import Sequence

import numpy as np

from src.core import ops
from src.core.errors import ShapeError
from src.core.tensor import Tensor
from src.modules.base import BaseModule
from src.modules.cuecan.module import CueCanConfig, CueCanUnit, attach_units
from src.modules.encoder import config
from src.modules.layers import Conv2d


class VggBlock(BaseModule):
    """Two 3x3 conv + ReLU layers (pooling is applied by the encoder)."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        self.conv1 = Conv2d(in_channels, out_channels, 3, rng)
        self.conv2 = Conv2d(out_channels, out_channels, 3, rng)

    @property
    def name(self) -> str:
        return "vgg_block"

    def forward(self, x: Tensor) -> Tensor:
        return ops.relu(self.conv2(ops.relu(self.conv1(x))))


class MiniVggEncoder(BaseModule):
    """Five VGG blocks, each followed by 2x2 max pooling.

    A CueCAn unit, when configured for a block, runs on the block's last
    conv output before pooling.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        widths: Sequence[int] = config.BLOCK_WIDTHS,
        cuecan_config: CueCanConfig = CueCanConfig(),
    ):
        self.widths = tuple(widths)
        in_channels = config.INPUT_CHANNELS
        for i, width in enumerate(self.widths, 1):
            setattr(self, f"block{i}", VggBlock(in_channels, width, rng))
            in_channels = width
        self.cuecan: dict[str, CueCanUnit] = {}
        self.cuecan_config = CueCanConfig()
        attach_units(self, cuecan_config, rng)

    @property
    def name(self) -> str:
        return "mini_vgg"

    @property
    def num_blocks(self) -> int:
        return len(self.widths)

    @property
    def out_channels(self) -> int:
        return self.widths[-1]

    def block_channels(self, block: int) -> int:
        return self.widths[block - 1]

    def block(self, index: int) -> VggBlock:
        return getattr(self, f"block{index}")

    def check_input(self, image: Tensor) -> None:
        if image.ndim != 4 or image.shape[3] != config.INPUT_CHANNELS:
            raise ShapeError(f"Encoder expects (B, H, W, {config.INPUT_CHANNELS}), got {image.shape}")
        h, w = image.shape[1:3]
        if h % config.INPUT_MULTIPLE or w % config.INPUT_MULTIPLE or h == 0 or w == 0:
            raise ShapeError(f"Input {h}x{w} is not divisible by {config.INPUT_MULTIPLE}")

    def forward_features(self, image: Tensor) -> dict[str, Tensor]:
        """Run all blocks, returning ``block<i>`` (post-unit, pre-pool) and ``pool<i>`` maps."""
        self.check_input(image)
        features: dict[str, Tensor] = {}
        x = image
        for i in range(1, self.num_blocks + 1):
            x = self.block(i)(x)
            unit = self.cuecan.get(f"b{i}")
            if unit is not None:
                x = unit(x)
            features[f"block{i}"] = x
            x = ops.max_pool2d(x, config.POOL_SIZE)
            features[f"pool{i}"] = x
        return features

    def forward(self, image: Tensor) -> Tensor:
        return self.forward_features(image)[f"pool{self.num_blocks}"]
