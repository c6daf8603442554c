"""FCN-8 style decoder producing a one-channel missing-sign logit map."""

from typing import Sequence

import numpy as np

from src.core import ops
from src.core.errors import ShapeError
from src.core.tensor import Tensor
from src.modules.base import BaseModule
from src.modules.decoder import config
from src.modules.layers import Conv2d, ConvTranspose2d


class Fcn8Decoder(BaseModule):
    """Score the stride-8/16/32 maps, fuse them coarse-to-fine, upsample to input size.

    score5 -> up(2x) + score4 -> up(2x) + score3 -> bilinear(8x)
    """

    def __init__(self, skip_channels: Sequence[int], rng: np.random.Generator):
        if len(skip_channels) != len(config.SKIP_BLOCKS):
            raise ShapeError(
                f"Decoder needs {len(config.SKIP_BLOCKS)} skip widths, got {len(skip_channels)}"
            )
        c3, c4, c5 = skip_channels
        self.score3 = Conv2d(c3, config.NUM_CLASSES, 1, rng)
        self.score4 = Conv2d(c4, config.NUM_CLASSES, 1, rng)
        self.score5 = Conv2d(c5, config.NUM_CLASSES, 1, rng)
        self.up5 = ConvTranspose2d(
            config.NUM_CLASSES, config.UPSAMPLE_KERNEL, config.UPSAMPLE_STRIDE, config.UPSAMPLE_PADDING
        )
        self.up4 = ConvTranspose2d(
            config.NUM_CLASSES, config.UPSAMPLE_KERNEL, config.UPSAMPLE_STRIDE, config.UPSAMPLE_PADDING
        )

    @property
    def name(self) -> str:
        return "fcn8"

    def decode(self, features: dict[str, Tensor]) -> dict[str, Tensor]:
        """Return every score map plus the input-resolution ``logits``."""
        score5 = self.score5(features["pool5"])
        score4 = self.score4(features["pool4"])
        score3 = self.score3(features["pool3"])

        fused4 = ops.add(self.up5(score5), score4)
        fused3 = ops.add(self.up4(fused4), score3)
        _, h, w, _ = fused3.shape
        logits = ops.bilinear_upsample(fused3, h * config.FINAL_UPSAMPLE, w * config.FINAL_UPSAMPLE)
        return {
            "score5": score5,
            "score4": score4,
            "score3": score3,
            "fused4": fused4,
            "fused3": fused3,
            "logits": logits,
        }

    def forward(self, features: dict[str, Tensor]) -> Tensor:
        return self.decode(features)["logits"]
