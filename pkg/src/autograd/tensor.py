"""
Dense tensors with tape-based reverse-mode differentiation.
"""
import threading
from contextlib import contextmanager
from typing import Any, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from utils.errors import DisconnectedError, NumericError, ShapeError
from utils.logger import logger

_state = threading.local()


def _tape_stack() -> List[Optional["Tape"]]:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = []
    return stack


def active_tape() -> Optional["Tape"]:
    """Return the innermost tape recording on this thread, if any."""
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def paused() -> Iterator[None]:
    """Run a block without recording, even inside an active tape."""
    stack = _tape_stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


class Tape:
    """
    Ordered record of executed primitive ops.

    Ops are appended as they run, so the record is already in topological
    order. A tape belongs to one thread and one forward/backward pass.
    """

    def __init__(self):
        self.records: List["Function"] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _tape_stack().pop()
        return False

    def record(self, fn: "Function") -> None:
        self.records.append(fn)

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, fn: "Function") -> bool:
        return any(r is fn for r in self.records)


def _default_dtype(data: Any) -> np.dtype:
    if isinstance(data, np.ndarray) and data.dtype == np.float64:
        return np.float64
    if isinstance(data, Tensor):
        return data.data.dtype
    return np.float32


class Tensor:
    """
    Dense N-dimensional float array that can take part in a tape.

    Model state is float32; float64 is kept when handed a float64 array so that
    finite-difference oracles can run at double precision.
    """

    __array_priority__ = 100

    def __init__(self, data: Any, requires_grad: bool = False, dtype: Optional[np.dtype] = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or _default_dtype(data))
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.creator: Optional["Function"] = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, key):
        from . import ops
        return ops.index(self, key)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    @property
    def T(self):
        return self.transpose()

    def sum(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


def as_tensor(value: Any) -> Tensor:
    """Wrap a constant as a non-differentiable tensor; tensors pass through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


class Function:
    """
    Base class for differentiable primitive operations.

    Subclasses implement ``forward`` on raw arrays and ``backward`` returning one
    gradient array (or None) per input.
    """

    def __init__(self, *inputs: Tensor):
        self.inputs = inputs
        self.output: Optional[Tensor] = None

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no forward pass")

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError(f"{type(self).__name__} has no backward pass")

    @classmethod
    def apply(cls, *inputs: Any, **kwargs: Any) -> Tensor:
        tensors = tuple(as_tensor(x) for x in inputs)
        fn = cls(*tensors)
        dtype = np.result_type(*(t.data.dtype for t in tensors)) if tensors else np.float32
        out = np.asarray(fn.forward(*(t.data for t in tensors), **kwargs))
        out = out.astype(dtype, copy=False)
        if not np.all(np.isfinite(out)):
            raise NumericError(f"{cls.__name__} produced non-finite values")
        result = Tensor(out, dtype=out.dtype)
        tape = active_tape()
        if tape is not None and any(t.requires_grad for t in tensors):
            result.requires_grad = True
            result.creator = fn
            fn.output = result
            tape.record(fn)
        return result


def backward(tape: Tape, loss: Tensor, wrt: Optional[Sequence[Tensor]] = None) -> Optional[List[np.ndarray]]:
    """
    Propagate d(loss) back through every op on the tape.

    Leaf tensors that require a gradient accumulate into ``.grad``; gradients of
    shared subexpressions add up across fan-out.

    Args:
        tape: The tape the forward pass was recorded on
        loss: Scalar tensor produced on that tape
        wrt: Optional tensors whose gradients are returned; unreached ones get
            a zero gradient and a warning

    Returns:
        Gradients for ``wrt`` in order, or None when ``wrt`` is not given

    Raises:
        ShapeError: If loss is not a scalar
        DisconnectedError: If loss does not depend on any tensor requiring a gradient
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")

    if loss.creator is None or loss.creator not in tape:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
        else:
            raise DisconnectedError("Loss is not reachable from any parameter on this tape")
    else:
        grads = {id(loss): np.ones_like(loss.data)}
        for fn in reversed(tape.records):
            grad = grads.pop(id(fn.output), None)
            if grad is None:
                continue
            input_grads = fn.backward(grad)
            for tensor, g in zip(fn.inputs, input_grads):
                if g is None or not tensor.requires_grad:
                    continue
                if g.shape != tensor.shape:
                    raise ShapeError(
                        f"{type(fn).__name__} returned gradient {g.shape} for input {tensor.shape}")
                g = g.astype(tensor.data.dtype, copy=False)
                if tensor.creator is not None:
                    key = id(tensor)
                    grads[key] = grads[key] + g if key in grads else g
                else:
                    tensor.grad = g.copy() if tensor.grad is None else tensor.grad + g

    if wrt is None:
        return None
    result = []
    for i, tensor in enumerate(wrt):
        if tensor.grad is None:
            logger.warning(f"Tensor #{i} {tensor.shape} is disconnected from the loss; gradient set to zero")
            tensor.grad = np.zeros_like(tensor.data)
        result.append(tensor.grad)
    return result
