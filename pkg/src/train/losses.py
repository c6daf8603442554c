"""Binary cross-entropy and focal loss on logits, in stable softplus form."""

import numpy as np

from src.core.errors import ConfigError, ShapeError
from src.core.ops import np_sigmoid, np_softplus
from src.core.tensor import Tensor

# Canonical focal-loss defaults
FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0


def _signed_logits(logits: Tensor, labels: np.ndarray, op: str) -> tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != logits.shape:
        raise ShapeError(f"{op}: labels {labels.shape} do not match logits {logits.shape}")
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise ConfigError(f"{op}: labels must be 0 or 1")
    sign = 2.0 * labels - 1.0
    return sign * logits.data, sign


def bce_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean of -[y log s(z) + (1-y) log(1-s(z))], i.e. mean softplus(-s) with s = +-z."""
    signed, sign = _signed_logits(logits, labels, "bce_loss")
    n = signed.size
    value = np_softplus(-signed).mean()

    def backward(g: np.ndarray):
        # d softplus(-s)/dz = -sign * sigmoid(-s)
        return (g * (-sign * np_sigmoid(-signed)) / n,)

    return Tensor.record(np.array(value), (logits,), backward, "bce_loss")


def focal_loss(
    logits: Tensor,
    targets: np.ndarray,
    alpha: float = FOCAL_ALPHA,
    gamma: float = FOCAL_GAMMA,
) -> Tensor:
    """Mean over pixels of -alpha_t (1 - p_t)^gamma log p_t.

    With s = z for positives and -z for negatives, p_t = sigmoid(s) and the
    per-pixel loss is alpha_t * sigmoid(-s)^gamma * softplus(-s).

    Raises:
        ConfigError: If alpha is outside (0, 1) or gamma < 0
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"focal_loss: alpha must be in (0, 1), got {alpha}")
    if gamma < 0.0:
        raise ConfigError(f"focal_loss: gamma must be >= 0, got {gamma}")

    signed, sign = _signed_logits(logits, targets, "focal_loss")
    n = signed.size
    alpha_t = np.where(sign > 0, alpha, 1.0 - alpha)
    p_miss = np_sigmoid(-signed)            # 1 - p_t
    nll = np_softplus(-signed)              # -log p_t
    modulator = p_miss ** gamma
    value = (alpha_t * modulator * nll).mean()

    def backward(g: np.ndarray):
        # dL/ds = -alpha_t * (1-p_t)^gamma * (gamma * p_t * nll + (1 - p_t))
        p_t = np_sigmoid(signed)
        d_signed = -alpha_t * modulator * (gamma * p_t * nll + p_miss)
        return (g * d_signed * sign / n,)

    return Tensor.record(np.array(value), (logits,), backward, "focal_loss")
