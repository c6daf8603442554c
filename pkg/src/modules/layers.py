"""Parameterized layers: convolution, transposed convolution, linear."""

from typing import Optional

import numpy as np

from src.core import ops
from src.core.tensor import Parameter, Tensor
from src.modules.base import BaseModule


def glorot_uniform(
    shape: tuple[int, ...],
    rng: np.random.Generator,
    mask: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Uniform(+-sqrt(6 / (fan_in + fan_out))) with fans counted over unmasked taps.

    ``shape`` is (kH, kW, Cin, Cout) for kernels or (F, O) for linear weights.
    """
    cin, cout = shape[-2], shape[-1]
    if mask is None:
        live = float(np.prod(shape))
    else:
        live = float(np.count_nonzero(np.broadcast_to(mask, shape)))
    fan_in, fan_out = live / cout, live / cin
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    weights = rng.uniform(-limit, limit, size=shape)
    if mask is not None:
        weights = np.where(np.broadcast_to(mask, shape) > 0, weights, 0.0)
    return weights


def bilinear_kernel(size: int, channels: int) -> np.ndarray:
    """(size, size, C, C) kernel that makes a transposed conv upsample bilinearly per channel."""
    factor = (size + 1) // 2
    center = factor - 1 if size % 2 == 1 else factor - 0.5
    taps = 1.0 - np.abs(np.arange(size) - center) / factor
    plane = np.outer(taps, taps)
    kernel = np.zeros((size, size, channels, channels))
    for c in range(channels):
        kernel[:, :, c, c] = plane
    return kernel


class Conv2d(BaseModule):
    """Same-padded stride-1 convolution with an optional fixed kernel mask."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        mask: Optional[np.ndarray] = None,
    ):
        shape = (kernel_size, kernel_size, in_channels, out_channels)
        full_mask = None
        if mask is not None:
            mask = np.asarray(mask, dtype=np.float64)
            full_mask = mask[:, :, None, None] if mask.ndim == 2 else mask
            full_mask = np.broadcast_to(full_mask, shape)
        self.weight = Parameter(glorot_uniform(shape, rng, full_mask), mask=full_mask)
        self.bias = Parameter(np.zeros(out_channels))

    @property
    def name(self) -> str:
        return "conv2d"

    @property
    def mask(self) -> Optional[np.ndarray]:
        return self.weight.mask

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, padding="same", mask=self.weight.mask)


class ConvTranspose2d(BaseModule):
    """Learnable 2x upsampling (kernel 4, stride 2, padding 1), seeded with bilinear weights."""

    def __init__(self, channels: int, kernel_size: int = 4, stride: int = 2, padding: int = 1):
        self.stride = stride
        self.padding = padding
        self.weight = Parameter(bilinear_kernel(kernel_size, channels))
        self.bias = Parameter(np.zeros(channels))

    @property
    def name(self) -> str:
        return "conv_transpose2d"

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class Linear(BaseModule):
    """Affine layer on (B, F) inputs."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.weight = Parameter(glorot_uniform((in_features, out_features), rng))
        self.bias = Parameter(np.zeros(out_features))

    @property
    def name(self) -> str:
        return "linear"

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)
