"""Adam with bias correction and mask re-application."""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from src.core.errors import ConfigError, ShapeError
from src.core.tensor import Parameter

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


@dataclass
class AdamState:
    """First/second moments of one parameter."""
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, data: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(data), np.zeros_like(data))


def adam_step(
    param: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = BETA1,
    beta2: float = BETA2,
    eps: float = EPSILON,
    mask: Optional[np.ndarray] = None,
) -> np.ndarray:
    """One bias-corrected Adam update; returns the new parameter values.

    ``state`` is updated in place. Masked positions of the parameter and of
    both moments are forced back to zero.
    """
    if grad.shape != param.shape or state.m.shape != param.shape:
        raise ShapeError(
            f"adam_step: param {param.shape}, grad {grad.shape}, state {state.m.shape} disagree"
        )

    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1 ** state.step)
    v_hat = state.v / (1.0 - beta2 ** state.step)
    updated = param - lr * m_hat / (np.sqrt(v_hat) + eps)

    if mask is not None:
        keep = mask > 0
        updated = np.where(keep, updated, 0.0)
        state.m = np.where(keep, state.m, 0.0)
        state.v = np.where(keep, state.v, 0.0)
    return updated


@dataclass
class Adam:
    """Adam over a fixed parameter list."""
    params: Sequence[Parameter]
    lr: float = 1e-3
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = EPSILON
    states: list[AdamState] = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"Learning rate must be positive, got {self.lr}")
        self.params = list(self.params)
        self.states = [AdamState.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        """Update every parameter; a missing gradient counts as zero."""
        for param, state in zip(self.params, self.states):
            grad = param.grad if param.grad is not None else np.zeros_like(param.data)
            param.data = adam_step(
                param.data, grad, state, self.lr, self.beta1, self.beta2, self.eps, param.mask
            )

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
