"""Central finite-difference gradient checking."""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from src.core.tensor import Tensor

STEP = 1e-5
DENOMINATOR_FLOOR = 1e-8


@dataclass
class GradCheckResult:
    """Outcome of comparing analytic and numerical gradients."""
    max_rel_error: float
    checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), DENOMINATOR_FLOOR)
    return np.abs(analytic - numeric) / denom


def check_gradients(
    loss_fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    tolerance: float = 1e-4,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    step: float = STEP,
) -> GradCheckResult:
    """Compare ``backward`` gradients against central differences.

    Args:
        loss_fn: Rebuilds the graph and returns a scalar loss each call
        inputs: Tensors whose gradients are checked (must require grad)
        tolerance: Maximum accepted relative error
        max_entries: Check at most this many randomly chosen entries per input
        rng: Chooses the sampled entries when ``max_entries`` is set
        step: Finite-difference step ``h``

    Returns:
        GradCheckResult with the worst relative error seen
    """
    for t in inputs:
        t.zero_grad()
    loss_fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    rng = rng or np.random.default_rng(0)
    worst = 0.0
    checked = 0

    for t, grad in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            indices = rng.choice(flat.size, size=max_entries, replace=False)

        for idx in indices:
            original = flat[idx]
            flat[idx] = original + step
            plus = loss_fn().item()
            flat[idx] = original - step
            minus = loss_fn().item()
            flat[idx] = original

            numeric = (plus - minus) / (2.0 * step)
            err = float(relative_error(np.array(grad.reshape(-1)[idx]), np.array(numeric)))
            worst = max(worst, err)
            checked += 1

    return GradCheckResult(max_rel_error=worst, checked=checked, tolerance=tolerance)
