"""Grad-CAM heat maps for the cue classifier and the segmenter."""

from typing import Callable, Union

import numpy as np

from src.core import ops
from src.core.errors import ShapeError
from src.core.tensor import Tensor

# "cls" -> classifier logit, ("seg", row, col) -> segmentation logit at a pixel,
# or any callable mapping the model outputs to a scalar tensor
Target = Union[str, tuple[str, int, int], Callable[[dict[str, Tensor]], Tensor]]


def _select_target(outputs: dict[str, Tensor], target: Target) -> Tensor:
    if callable(target):
        return target(outputs)
    logits = outputs["logits"]
    if target == "cls":
        return ops.take(logits, (0,))
    if isinstance(target, tuple) and target[0] == "seg":
        _, row, col = target
        return ops.take(logits, (0, row, col, 0))
    raise ValueError(f"Unknown Grad-CAM target {target!r}")


def grad_cam(model, image: Tensor, target: Target, layer: Union[int, str]) -> np.ndarray:
    """Class activation map of one layer for one scalar target.

    Channel weights are the spatial mean of d(target)/d(activation); the map
    is relu(sum_c w_c * A_c), scaled to [0, 1] when its maximum is positive.

    Args:
        model: Exposes ``forward_with_activations(image) -> (outputs, activations)``
        image: Batch whose first item is explained
        target: See ``Target``
        layer: Block id (``3`` -> ``"block3"``) or an activation name

    Returns:
        Heat map with the chosen layer's spatial dims
    """
    name = f"block{layer}" if isinstance(layer, int) else layer
    outputs, activations = model.forward_with_activations(image)
    if name not in activations:
        raise ShapeError(f"Grad-CAM layer '{name}' not found (have {sorted(activations)})")
    activation = activations[name]
    if activation.ndim != 4 or activation.shape[1] * activation.shape[2] * activation.shape[3] == 0:
        raise ShapeError(f"Grad-CAM layer '{name}' has zero size {activation.shape}")

    scalar = _select_target(outputs, target)
    scalar.backward()

    values = activation.data[0]
    grads = np.zeros_like(values) if activation.grad is None else activation.grad[0]
    weights = grads.mean(axis=(0, 1))
    cam = np.maximum(np.tensordot(values, weights, axes=([2], [0])), 0.0)

    model.zero_grad()

    peak = cam.max()
    if peak > 0:
        cam = cam / peak
    return cam
