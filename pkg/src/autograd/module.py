"""
Parameter containers.
"""
from collections import OrderedDict
from typing import Dict, Iterator, List, Tuple

import numpy as np

from utils.errors import FormatError, ShapeError
from .tensor import Tensor


class Parameter(Tensor):
    """A trainable tensor; always requires a gradient."""

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    """
    Base class for blocks holding parameters.

    Parameters and sub-modules are discovered from instance attributes in
    assignment order, including lists of modules. Names are dotted paths
    ("encoder.stages.0.conv1.weight"), which are also the checkpoint names.
    """

    def forward(self, *args, **kwargs):
        raise NotImplementedError(f"{type(self).__name__} has no forward pass")

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Parameter]]:
        result = []
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                result.append((full, value))
            else:
                result.extend(value.named_parameters(full + "."))
        return result

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters())

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> List[str]:
        """
        Copy arrays into parameters by name.

        Args:
            state: Mapping of parameter name to array
            strict: Require every parameter to be present and no extras

        Returns:
            Names of parameters that were not found in ``state``

        Raises:
            FormatError: On missing or unexpected names when strict
            ShapeError: On a shape mismatch
        """
        params = dict(self.named_parameters())
        missing = [name for name in params if name not in state]
        unexpected = [name for name in state if name not in params]
        if strict and (missing or unexpected):
            raise FormatError(f"State mismatch: missing {missing[:5]}, unexpected {unexpected[:5]}")
        for name, p in params.items():
            if name not in state:
                continue
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ShapeError(f"{name}: stored shape {value.shape} differs from {p.shape}")
            p.data = value.astype(p.data.dtype).copy()
        return missing

    def astype(self, dtype) -> "Module":
        """Cast every parameter in place (float64 for finite-difference checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self
