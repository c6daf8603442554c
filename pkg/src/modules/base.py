"""Abstract base class for network modules."""

from abc import ABC, abstractmethod

from src.core.tensor import Parameter, Tensor


class BaseModule(ABC):
    """Base class that all network modules must implement.

    Parameters and child modules are discovered from instance attributes in
    assignment order, so a module's parameter names follow its attribute
    names (``block3.conv1.weight``).
    """

    @property
    @abstractmethod
    def name(self) -> str:
        """Module name (e.g., 'conv2d', 'cuecan')."""
        pass

    @abstractmethod
    def forward(self, x: Tensor) -> Tensor:
        """Run the module on a batch."""
        pass

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Parameter]]:
        """Return ``(dotted_name, parameter)`` pairs in a stable order."""
        found: list[tuple[str, Parameter]] = []
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue
            if isinstance(value, Parameter):
                found.append((f"{prefix}{attr}", value))
            elif isinstance(value, BaseModule):
                found.extend(value.named_parameters(f"{prefix}{attr}."))
            elif isinstance(value, dict):
                for key, child in value.items():
                    if isinstance(child, BaseModule):
                        found.extend(child.named_parameters(f"{prefix}{attr}.{key}."))
        return found

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def parameter_count(self) -> int:
        """Number of trainable entries (masked kernel positions excluded)."""
        return sum(p.trainable_count() for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()
