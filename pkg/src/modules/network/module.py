"""Cue classifier and missing-sign segmenter built on the CueCAn encoder."""

from abc import abstractmethod
from typing import Sequence

import numpy as np

from src.core import ops
from src.core.tensor import Parameter, Tensor
from src.modules.base import BaseModule
from src.modules.cuecan.module import CueCanConfig
from src.modules.decoder.module import Fcn8Decoder
from src.modules.decoder import config as decoder_config
from src.modules.encoder import config as encoder_config
from src.modules.encoder.module import MiniVggEncoder
from src.modules.layers import Linear
from src.modules.network import config


class ClsHead(BaseModule):
    """Global average pool -> linear -> one logit per image."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.fc = Linear(channels, config.HEAD_OUTPUTS, rng)

    @property
    def name(self) -> str:
        return "cls_head"

    def forward(self, x: Tensor) -> Tensor:
        logits = self.fc(ops.global_avg_pool(x))
        return ops.reshape(logits, (logits.shape[0],))


class _EncoderNetwork(BaseModule):
    """Shared plumbing: encoder parameters are named without a prefix."""

    kind = ""

    def __init__(
        self,
        rng: np.random.Generator,
        cuecan_config: CueCanConfig,
        widths: Sequence[int],
    ):
        self.encoder = MiniVggEncoder(rng, widths, cuecan_config)

    @property
    def cuecan_config(self) -> CueCanConfig:
        return self.encoder.cuecan_config

    @abstractmethod
    def _head_parameters(self, prefix: str) -> list[tuple[str, Parameter]]:
        """Named parameters of everything after the encoder."""
        pass

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Parameter]]:
        return self.encoder.named_parameters(prefix) + self._head_parameters(prefix)

    def encoder_parameters(self) -> list[tuple[str, Parameter]]:
        return self.encoder.named_parameters()

    def manifest(self) -> dict:
        """Architecture description stored next to checkpoints."""
        return {
            "kind": self.kind,
            "cuecan": self.cuecan_config.render(),
            "pooled_rows": self.cuecan_config.pooled_rows,
            "widths": list(self.encoder.widths),
        }


class CueClassifier(_EncoderNetwork):
    """Encoder + classification head; sigmoid(logit) is the cue-presence probability."""

    kind = config.CLASSIFIER_KIND

    def __init__(
        self,
        rng: np.random.Generator,
        cuecan_config: CueCanConfig = CueCanConfig(),
        widths: Sequence[int] = encoder_config.BLOCK_WIDTHS,
    ):
        super().__init__(rng, cuecan_config, widths)
        self.head = ClsHead(self.encoder.out_channels, rng)

    @property
    def name(self) -> str:
        return "cue_classifier"

    def _head_parameters(self, prefix: str) -> list[tuple[str, Parameter]]:
        return self.head.named_parameters(f"{prefix}head.")

    def forward_with_activations(self, image: Tensor) -> tuple[dict[str, Tensor], dict[str, Tensor]]:
        features = self.encoder.forward_features(image)
        logits = self.head(features[f"pool{self.encoder.num_blocks}"])
        return {"logits": logits}, features

    def forward(self, image: Tensor) -> Tensor:
        return self.forward_with_activations(image)[0]["logits"]


class MissingSignSegmenter(_EncoderNetwork):
    """Encoder + FCN-8 decoder; per-pixel missing-sign logits at input resolution."""

    kind = config.SEGMENTER_KIND

    def __init__(
        self,
        rng: np.random.Generator,
        cuecan_config: CueCanConfig = CueCanConfig(),
        widths: Sequence[int] = encoder_config.BLOCK_WIDTHS,
    ):
        super().__init__(rng, cuecan_config, widths)
        skips = [self.encoder.block_channels(b) for b in decoder_config.SKIP_BLOCKS]
        self.decoder = Fcn8Decoder(skips, rng)

    @property
    def name(self) -> str:
        return "missing_sign_segmenter"

    def _head_parameters(self, prefix: str) -> list[tuple[str, Parameter]]:
        return self.decoder.named_parameters(f"{prefix}decoder.")

    def forward_with_activations(self, image: Tensor) -> tuple[dict[str, Tensor], dict[str, Tensor]]:
        features = self.encoder.forward_features(image)
        maps = self.decoder.decode(features)
        return {"logits": maps["logits"]}, {**features, **maps}

    def forward(self, image: Tensor) -> Tensor:
        return self.forward_with_activations(image)[0]["logits"]


def forward_classify(image: Tensor, model: CueClassifier) -> Tensor:
    """Cue-presence logits, shape (B,).

    Raises:
        ShapeError: If image height/width are not multiples of 32
    """
    return model.forward(image)


def forward_segment(image: Tensor, model: MissingSignSegmenter) -> Tensor:
    """Missing-sign logit map, shape (B, H, W, 1)."""
    return model.forward(image)
