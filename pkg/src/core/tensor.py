"""Dense tensors with tape-style reverse-mode automatic differentiation.

Every tensor produced by an operation records its parents and a backward
closure holding the activations it saved. ``Tensor.backward`` orders the
recorded graph topologically and visits each node exactly once.
"""

from contextlib import contextmanager
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from src.core.errors import AutodiffError, NumericError, ShapeError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_grad_enabled = True


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference, evaluation)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A float64 array that can take part in the autodiff graph.

    Attributes:
        data: The values, always a contiguous ``float64`` array
        requires_grad: Whether gradients flow into this tensor
        grad: Accumulated ``d(loss)/d(self)`` after ``backward`` (same shape as data)
    """

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple["Tensor", ...] = ()
        self._backward_fn: Optional[BackwardFn] = None
        self._op = "leaf"
        self._consumed = False

    @classmethod
    def record(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward_fn: BackwardFn,
        op: str,
    ) -> "Tensor":
        """Create the output of an operation and record it on the graph.

        Args:
            data: Forward result
            parents: Input tensors, in the order ``backward_fn`` returns gradients
            backward_fn: Maps the output gradient to one gradient per parent
            op: Operation name used in error messages

        Raises:
            NumericError: If the forward result contains NaN or Inf
        """
        if not np.all(np.isfinite(data)):
            raise NumericError(f"{op}: non-finite value in forward output")

        out = cls(data)
        out._op = op
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward_fn = backward_fn
        return out

    # Shape helpers

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    # Autodiff

    def graph_nodes(self) -> list["Tensor"]:
        """Return the recorded graph ending at this tensor in topological order.

        Every node appears after all of its inputs. The walk is iterative so
        deep graphs do not hit the recursion limit.
        """
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]

        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if id(parent) not in visited:
                    stack.append((parent, False))

        return order

    def backward(self) -> None:
        """Populate ``grad`` on every tensor reachable from this scalar.

        Raises:
            AutodiffError: If the root is not scalar, does not require grad,
                or its graph was already consumed by an earlier call
            NumericError: If a gradient contains NaN or Inf
        """
        if self.data.size != 1:
            raise AutodiffError(f"backward() needs a scalar root, got shape {self.shape}")
        if not self.requires_grad:
            raise AutodiffError("backward() on a tensor that does not require grad")

        nodes = self.graph_nodes()
        for node in nodes:
            if node._consumed:
                raise AutodiffError(
                    f"graph through '{node._op}' was already consumed; record a new forward pass"
                )

        self.grad = np.ones_like(self.data)

        for node in reversed(nodes):
            if node._backward_fn is None or node.grad is None:
                continue
            parent_grads = node._backward_fn(node.grad)
            for parent, grad in zip(node._parents, parent_grads):
                if grad is None or not parent.requires_grad:
                    continue
                if not np.all(np.isfinite(grad)):
                    raise NumericError(f"{node._op}: non-finite gradient")
                if parent.grad is None:
                    parent.grad = np.array(grad, dtype=np.float64)
                else:
                    parent.grad = parent.grad + grad

        # Release saved activations; the graph cannot be replayed
        for node in nodes:
            if node._backward_fn is not None:
                node._backward_fn = None
                node._consumed = True

    # Operator sugar (delegates to src.core.ops)

    def __add__(self, other: "Tensor") -> "Tensor":
        from src.core import ops
        return ops.add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        from src.core import ops
        return ops.sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        from src.core import ops
        return ops.mul(self, other)

    def __neg__(self) -> "Tensor":
        from src.core import ops
        return ops.scale(self, -1.0)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A trainable leaf tensor with an optional fixed binary mask.

    Masked-out positions are held at exactly zero: the mask is applied at
    construction and re-applied by the optimizer after every step.
    """

    def __init__(self, data, mask: Optional[np.ndarray] = None):
        super().__init__(data, requires_grad=True)
        self.mask: Optional[np.ndarray] = None
        if mask is not None:
            mask = np.asarray(mask, dtype=np.float64)
            try:
                full = np.broadcast_to(mask, self.data.shape)
            except ValueError as e:
                raise ShapeError(
                    f"mask shape {mask.shape} does not broadcast to parameter {self.data.shape}"
                ) from e
            self.mask = np.ascontiguousarray(full)
            self.apply_mask()

    def apply_mask(self) -> None:
        if self.mask is not None:
            self.data = np.where(self.mask > 0, self.data, 0.0)

    def trainable_count(self) -> int:
        """Number of entries the optimizer can change."""
        if self.mask is None:
            return int(self.data.size)
        return int(np.count_nonzero(self.mask))
