"""
Primitive differentiable operations.

Binary ops accept equal shapes, scalars, or a per-channel vector ``[C]`` against
an ``[N, C, H, W]`` map. Anything needing mutual broadcasting is a ShapeError.
"""
from typing import Any, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from utils.errors import ShapeError
from .tensor import Function, Tensor, as_tensor


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _align(a: Any, b: Any, name: str) -> Tuple[Tensor, Tensor]:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 4 and b.ndim == 1 and b.shape[0] == a.shape[1] and b.shape[0] != 1:
        b = reshape(b, (1, b.shape[0], 1, 1))
    elif b.ndim == 4 and a.ndim == 1 and a.shape[0] == b.shape[1] and a.shape[0] != 1:
        a = reshape(a, (1, a.shape[0], 1, 1))
    try:
        out_shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}")
    if out_shape != a.shape and out_shape != b.shape:
        raise ShapeError(f"{name}: mutual broadcasting of {a.shape} and {b.shape} is not supported")
    return a, b


# -- elementwise arithmetic --------------------------------------------------

class Add(Function):
    def forward(self, a, b):
        return a + b

    def backward(self, grad):
        a, b = self.inputs
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)


class Sub(Function):
    def forward(self, a, b):
        return a - b

    def backward(self, grad):
        a, b = self.inputs
        return _unbroadcast(grad, a.shape), _unbroadcast(-grad, b.shape)


class Mul(Function):
    def forward(self, a, b):
        return a * b

    def backward(self, grad):
        a, b = self.inputs
        return _unbroadcast(grad * b.data, a.shape), _unbroadcast(grad * a.data, b.shape)


class Div(Function):
    def forward(self, a, b):
        return a / b

    def backward(self, grad):
        a, b = self.inputs
        ga = grad / b.data
        gb = -grad * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


def add(a, b) -> Tensor:
    return Add.apply(*_align(a, b, "add"))


def sub(a, b) -> Tensor:
    return Sub.apply(*_align(a, b, "sub"))


def mul(a, b) -> Tensor:
    return Mul.apply(*_align(a, b, "mul"))


def div(a, b) -> Tensor:
    return Div.apply(*_align(a, b, "div"))


class MatMul(Function):
    def forward(self, a, b):
        return a @ b

    def backward(self, grad):
        a, b = self.inputs
        return grad @ b.data.T, a.data.T @ grad


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return MatMul.apply(a, b)


class Einsum2(Function):
    """Two-operand contraction; every index of an operand must appear elsewhere."""

    def forward(self, a, b, subscripts):
        lhs, self.out_sub = subscripts.split("->")
        self.a_sub, self.b_sub = lhs.split(",")
        return np.einsum(subscripts, a, b, optimize=True)

    def backward(self, grad):
        a, b = self.inputs
        ga = np.einsum(f"{self.out_sub},{self.b_sub}->{self.a_sub}", grad, b.data, optimize=True)
        gb = np.einsum(f"{self.out_sub},{self.a_sub}->{self.b_sub}", grad, a.data, optimize=True)
        return ga, gb


def einsum(subscripts: str, a, b) -> Tensor:
    lhs, out = subscripts.replace(" ", "").split("->")
    a_sub, b_sub = lhs.split(",")
    for sub, other in ((a_sub, b_sub), (b_sub, a_sub)):
        if len(set(sub)) != len(sub) or any(ch not in out and ch not in other for ch in sub):
            raise ShapeError(f"einsum: unsupported subscripts {subscripts}")
    try:
        return Einsum2.apply(a, b, subscripts=subscripts.replace(" ", ""))
    except ValueError as e:
        raise ShapeError(f"einsum {subscripts}: {e}")


# -- unary nonlinearities ----------------------------------------------------

class Exp(Function):
    def forward(self, x):
        self.out = np.exp(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Log(Function):
    def forward(self, x):
        with np.errstate(divide='ignore', invalid='ignore'):
            return np.log(x)

    def backward(self, grad):
        return (grad / self.inputs[0].data,)


class Clamp(Function):
    def forward(self, x, lo, hi):
        self.mask = (x >= lo) & (x <= hi)
        return np.clip(x, lo, hi)

    def backward(self, grad):
        return (grad * self.mask,)


class ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0)

    def backward(self, grad):
        return (grad * self.mask,)


class LeakyReLU(Function):
    def forward(self, x, alpha):
        self.slope = np.where(x > 0, 1.0, alpha).astype(x.dtype)
        return x * self.slope

    def backward(self, grad):
        return (grad * self.slope,)


class Tanh(Function):
    def forward(self, x):
        self.out = np.tanh(x)
        return self.out

    def backward(self, grad):
        return (grad * (1 - self.out * self.out),)


class Sigmoid(Function):
    def forward(self, x):
        z = np.exp(-np.abs(x))
        self.out = np.where(x >= 0, 1 / (1 + z), z / (1 + z))
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1 - self.out),)


class Softmax(Function):
    def forward(self, x, axis):
        self.axis = axis
        shifted = x - x.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.out = e / e.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, grad):
        s = self.out
        return (s * (grad - (grad * s).sum(axis=self.axis, keepdims=True)),)


def exp(x) -> Tensor:
    return Exp.apply(x)


def log(x) -> Tensor:
    return Log.apply(x)


def clamp(x, lo: float, hi: float) -> Tensor:
    return Clamp.apply(x, lo=lo, hi=hi)


def relu(x) -> Tensor:
    return ReLU.apply(x)


def leaky_relu(x, alpha: float = 0.2) -> Tensor:
    return LeakyReLU.apply(x, alpha=alpha)


def tanh(x) -> Tensor:
    return Tanh.apply(x)


def sigmoid(x) -> Tensor:
    return Sigmoid.apply(x)


def softmax(x, axis: int = -1) -> Tensor:
    return Softmax.apply(x, axis=axis)


def minimum(a, b) -> Tensor:
    return sub(a, relu(sub(a, b)))


def maximum(a, b) -> Tensor:
    return add(b, relu(sub(a, b)))


# -- reductions and shape ops ------------------------------------------------

class Sum(Function):
    def forward(self, x, axis, keepdims):
        self.axis, self.keepdims = axis, keepdims
        return np.sum(x, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        shape = self.inputs[0].shape
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, shape).copy(),)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


class Reshape(Function):
    def forward(self, x, shape):
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.inputs[0].shape),)


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        np.broadcast_to(0, x.shape).reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}")
    return Reshape.apply(x, shape=tuple(shape))


class Transpose(Function):
    def forward(self, x, axes):
        self.axes = axes
        return np.transpose(x, axes)

    def backward(self, grad):
        if self.axes is None:
            return (np.transpose(grad),)
        return (np.transpose(grad, np.argsort(self.axes)),)


def transpose(x, axes: Optional[Sequence[int]] = None) -> Tensor:
    return Transpose.apply(x, axes=None if axes is None else tuple(axes))


class Index(Function):
    def forward(self, x, key):
        self.key = key
        return x[key]

    def backward(self, grad):
        full = np.zeros_like(self.inputs[0].data)
        full[self.key] = grad
        return (full,)


def index(x, key) -> Tensor:
    """Basic (slice/integer) indexing; fancy indexing is not differentiable here."""
    keys = key if isinstance(key, tuple) else (key,)
    for k in keys:
        if not (isinstance(k, (int, slice)) or k is Ellipsis or k is None):
            raise ShapeError(f"index: only basic slicing is supported, got {type(k).__name__}")
    return Index.apply(x, key=key)


class Concat(Function):
    def forward(self, *arrays, axis):
        self.axis = axis
        self.bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.bounds, axis=self.axis))


def concat(tensors: Sequence[Any], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: nothing to concatenate")
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(ref) or any(i != axis % len(ref) and a != b
                                         for i, (a, b) in enumerate(zip(ref, other))):
            raise ShapeError(f"concat: shapes {tensors[0].shape} and {t.shape} differ off axis {axis}")
    return Concat.apply(*tensors, axis=axis)


class GlobalAvgPool(Function):
    def forward(self, x):
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        n, c, h, w = self.inputs[0].shape
        return (np.broadcast_to(grad[:, :, None, None] / (h * w), (n, c, h, w)).copy(),)


def global_avg_pool(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects [N,C,H,W], got {x.shape}")
    return GlobalAvgPool.apply(x)


class MaxPool2d(Function):
    def forward(self, x, k, stride):
        n, c, h, w = x.shape
        windows = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
        ho, wo = windows.shape[2], windows.shape[3]
        flat = windows.reshape(n, c, ho, wo, k * k)
        arg = flat.argmax(axis=-1)
        rows = np.arange(ho)[:, None] * stride + arg // k
        cols = np.arange(wo)[None, :] * stride + arg % k
        self.index = (np.arange(n)[:, None, None, None], np.arange(c)[None, :, None, None], rows, cols)
        return np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        full = np.zeros_like(self.inputs[0].data)
        np.add.at(full, self.index, grad)
        return (full,)


def max_pool(x, k: int, stride: Optional[int] = None) -> Tensor:
    x = as_tensor(x)
    stride = stride or k
    if x.ndim != 4 or x.shape[2] < k or x.shape[3] < k:
        raise ShapeError(f"max_pool: window {k} does not fit {x.shape}")
    return MaxPool2d.apply(x, k=k, stride=stride)


class Max(Function):
    def forward(self, x, axis, keepdims):
        self.axis, self.keepdims = axis, keepdims
        self.arg = np.expand_dims(x.argmax(axis=axis), axis)
        out = np.take_along_axis(x, self.arg, axis=axis)
        return out if keepdims else np.squeeze(out, axis=axis)

    def backward(self, grad):
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        full = np.zeros_like(self.inputs[0].data)
        np.put_along_axis(full, self.arg, grad, axis=self.axis)
        return (full,)


def max(x, axis: int, keepdims: bool = False) -> Tensor:  # noqa: A001
    return Max.apply(x, axis=axis, keepdims=keepdims)


def _upsample_matrix(n: int, dtype) -> np.ndarray:
    """Half-pixel bilinear interpolation weights from n to 2n samples."""
    mat = np.zeros((2 * n, n), dtype=dtype)
    for o in range(2 * n):
        s = np.maximum((o + 0.5) / 2.0 - 0.5, 0.0)
        i0 = int(np.floor(s))
        i1 = min(i0 + 1, n - 1)
        w = s - i0
        mat[o, i0] += 1.0 - w
        mat[o, i1] += w
    return mat


class Upsample2xBilinear(Function):
    def forward(self, x):
        self.ah = _upsample_matrix(x.shape[2], x.dtype)
        self.aw = _upsample_matrix(x.shape[3], x.dtype)
        return np.einsum('ih,nchw,jw->ncij', self.ah, x, self.aw, optimize=True)

    def backward(self, grad):
        return (np.einsum('ih,ncij,jw->nchw', self.ah, grad, self.aw, optimize=True),)


def upsample2x_bilinear(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"upsample2x_bilinear expects [N,C,H,W], got {x.shape}")
    return Upsample2xBilinear.apply(x)


class UpsampleNearest(Function):
    def forward(self, x, factor):
        self.factor = factor
        return x.repeat(factor, axis=2).repeat(factor, axis=3)

    def backward(self, grad):
        n, c, h, w = self.inputs[0].shape
        f = self.factor
        return (grad.reshape(n, c, h, f, w, f).sum(axis=(3, 5)),)


def upsample_nearest(x, factor: int) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4 or factor < 1:
        raise ShapeError(f"upsample_nearest: bad input {x.shape} or factor {factor}")
    return UpsampleNearest.apply(x, factor=factor)
