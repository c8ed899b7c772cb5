"""
Convolution and bilinear sampling.

conv2d is im2col over a strided sliding-window view; deformable convolution
samples every kernel tap at its displaced location and contracts with the
weights.
"""
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from utils.errors import ShapeError
from . import ops
from .tensor import Function, Tensor, as_tensor


def _conv_out(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


class Conv2d(Function):
    def forward(self, x, w, stride, pad, groups):
        self.stride, self.pad, self.groups = stride, pad, groups
        n, c_in, h, wd = x.shape
        c_out, cg, kh, kw = w.shape
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
        cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        # cols: N, C_in, Ho, Wo, kh, kw
        self.cols = cols
        self.padded_shape = xp.shape
        og = c_out // groups
        outs = []
        for g in range(groups):
            cg_cols = cols[:, g * cg:(g + 1) * cg]
            wg = w[g * og:(g + 1) * og]
            outs.append(np.tensordot(cg_cols, wg, axes=([1, 4, 5], [1, 2, 3])))
        out = np.concatenate(outs, axis=-1) if groups > 1 else outs[0]
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(self, grad):
        x, w = self.inputs
        s, pad, groups = self.stride, self.pad, self.groups
        c_out, cg, kh, kw = w.shape
        og = c_out // groups
        _, _, ho, wo = grad.shape
        g_nhwc = grad.transpose(0, 2, 3, 1)
        dw = np.empty_like(w.data)
        dcols = np.empty(self.cols.shape, dtype=grad.dtype)
        for g in range(groups):
            gg = g_nhwc[..., g * og:(g + 1) * og]
            cg_cols = self.cols[:, g * cg:(g + 1) * cg]
            dw[g * og:(g + 1) * og] = np.tensordot(gg, cg_cols, axes=([0, 1, 2], [0, 2, 3]))
            # N,Ho,Wo,og x og,cg,kh,kw -> N,Ho,Wo,cg,kh,kw
            part = np.tensordot(gg, w.data[g * og:(g + 1) * og], axes=([3], [0]))
            dcols[:, g * cg:(g + 1) * cg] = part.transpose(0, 3, 1, 2, 4, 5)
        dxp = np.zeros(self.padded_shape, dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[..., i, j]
        dx = dxp[:, :, pad:pad + x.shape[2], pad:pad + x.shape[3]] if pad else dxp
        return dx, dw


def conv2d(x, weight, bias=None, stride: int = 1, pad: int = 0, groups: int = 1) -> Tensor:
    """
    2-D cross-correlation over an [N, C, H, W] batch.

    Args:
        x: Input tensor [N, C_in, H, W]
        weight: Kernel [C_out, C_in/groups, kH, kW]
        bias: Optional per-channel bias [C_out]
        stride: Step between output samples
        pad: Zero padding added on every side
        groups: Channel groups; both C_in and C_out must divide evenly

    Returns:
        Tensor [N, C_out, H', W']

    Raises:
        ShapeError: If shapes or hyperparameters do not line up
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c_in, h, w = x.shape
    c_out, cg, kh, kw = weight.shape
    if stride < 1 or pad < 0 or groups < 1:
        raise ShapeError(f"conv2d: invalid stride={stride} pad={pad} groups={groups}")
    if c_in % groups or c_out % groups or cg != c_in // groups:
        raise ShapeError(f"conv2d: input channels {c_in} and weight {weight.shape} do not fit groups={groups}")
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {x.shape}")
    out = Conv2d.apply(x, weight, stride=stride, pad=pad, groups=groups)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {c_out} output channels")
        out = ops.add(out, bias)
    return out


class SampleBilinear(Function):
    """
    Sample fmap [N, C, H, W] at fractional (px, py) [N, K, Ho, Wo].

    Returns [N, C, K, Ho, Wo]. Neighbours outside the map contribute zero.
    """

    def forward(self, fmap, px, py):
        n, c, h, w = fmap.shape
        x0 = np.floor(px)
        y0 = np.floor(py)
        fx = px - x0
        fy = py - y0
        x0 = x0.astype(np.int64)
        y0 = y0.astype(np.int64)
        nhwc = np.ascontiguousarray(fmap.transpose(0, 2, 3, 1))
        batch = np.arange(n).reshape(n, 1, 1, 1)
        corners = []
        for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
            yy, xx = y0 + dy, x0 + dx
            valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            yc, xc = np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)
            vals = nhwc[batch, yc, xc] * valid[..., None]
            corners.append((yc, xc, valid, vals))
        self.cache = (fx, fy, batch, corners)
        w00 = ((1 - fx) * (1 - fy))[..., None]
        w01 = (fx * (1 - fy))[..., None]
        w10 = ((1 - fx) * fy)[..., None]
        w11 = (fx * fy)[..., None]
        v00, v01, v10, v11 = (cor[3] for cor in corners)
        out = w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11
        # N, K, Ho, Wo, C -> N, C, K, Ho, Wo
        return np.ascontiguousarray(out.transpose(0, 4, 1, 2, 3))

    def backward(self, grad):
        fmap = self.inputs[0]
        n, c, h, w = fmap.shape
        fx, fy, batch, corners = self.cache
        g = grad.transpose(0, 2, 3, 4, 1)
        weights = ((1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy)
        dnhwc = np.zeros((n, h, w, c), dtype=grad.dtype)
        bidx = np.broadcast_to(batch, fx.shape)
        for (yc, xc, valid, _), wt in zip(corners, weights):
            contrib = g * (wt * valid)[..., None]
            np.add.at(dnhwc, (bidx, yc, xc), contrib)
        v00, v01, v10, v11 = (cor[3] for cor in corners)
        dvx = (1 - fy)[..., None] * (v01 - v00) + fy[..., None] * (v11 - v10)
        dvy = (1 - fx)[..., None] * (v10 - v00) + fx[..., None] * (v11 - v01)
        dpx = (g * dvx).sum(axis=-1)
        dpy = (g * dvy).sum(axis=-1)
        return dnhwc.transpose(0, 3, 1, 2), dpx, dpy


def sample_bilinear(fmap, px, py) -> Tensor:
    fmap, px, py = as_tensor(fmap), as_tensor(px), as_tensor(py)
    if fmap.ndim != 4 or px.ndim != 4 or px.shape != py.shape or px.shape[0] != fmap.shape[0]:
        raise ShapeError(f"sample_bilinear: map {fmap.shape} with coordinates {px.shape}/{py.shape}")
    return SampleBilinear.apply(fmap, px, py)


def bilinear_sample(fmap, x, y) -> Tensor:
    """
    Bilinearly interpolate a [C, H, W] map at one point.

    ``x`` indexes width and ``y`` height; neighbours outside the map count as
    zero, so far out-of-bounds points return a zero vector.

    Args:
        fmap: Feature map [C, H, W]
        x: Horizontal coordinate (float or scalar tensor)
        y: Vertical coordinate (float or scalar tensor)

    Returns:
        Tensor [C]
    """
    fmap = as_tensor(fmap)
    if fmap.ndim != 3:
        raise ShapeError(f"bilinear_sample expects [C,H,W], got {fmap.shape}")
    c, h, w = fmap.shape
    x, y = as_tensor(x), as_tensor(y)
    out = sample_bilinear(ops.reshape(fmap, (1, c, h, w)),
                          ops.reshape(x, (1, 1, 1, 1)), ops.reshape(y, (1, 1, 1, 1)))
    return ops.reshape(out, (c,))


def deform_conv2d(x, weight, offsets, bias=None, stride: int = 1, pad: int = 0,
                  groups: int = 1) -> Tensor:
    """
    Deformable convolution: each kernel tap reads the input at its grid
    location plus a learned displacement.

    Args:
        x: Input [N, C_in, H, W]
        weight: Kernel [C_out, C_in/groups, kH, kW]
        offsets: Displacements [N, 2*kH*kW, H', W']; channel 2k is the x (width)
            shift of tap k and 2k+1 its y shift, taps in row-major order
        bias: Optional [C_out]
        stride: Output stride
        pad: Virtual zero padding of the sampling grid
        groups: Channel groups

    Returns:
        Tensor [N, C_out, H', W']
    """
    x, weight, offsets = as_tensor(x), as_tensor(weight), as_tensor(offsets)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"deform_conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c_in, h, w = x.shape
    c_out, cg, kh, kw = weight.shape
    if c_in % groups or c_out % groups or cg != c_in // groups:
        raise ShapeError(f"deform_conv2d: input channels {c_in} and weight {weight.shape} do not fit groups={groups}")
    ho, wo = _conv_out(h, kh, stride, pad), _conv_out(w, kw, stride, pad)
    if ho < 1 or wo < 1:
        raise ShapeError(f"deform_conv2d: kernel {kh}x{kw} larger than padded input {x.shape}")
    k = kh * kw
    if offsets.shape != (n, 2 * k, ho, wo):
        raise ShapeError(f"deform_conv2d: offsets {offsets.shape} should be {(n, 2 * k, ho, wo)}")

    ky, kx = np.divmod(np.arange(k), kw)
    base_x = (np.arange(wo)[None, None, :] * stride - pad + kx[:, None, None]).astype(x.dtype)
    base_y = (np.arange(ho)[None, :, None] * stride - pad + ky[:, None, None]).astype(x.dtype)
    base_x = np.broadcast_to(base_x, (1, k, ho, wo))
    base_y = np.broadcast_to(base_y, (1, k, ho, wo))

    off = ops.reshape(offsets, (n, k, 2, ho, wo))
    px = ops.add(ops.index(off, (slice(None), slice(None), 0)), base_x)
    py = ops.add(ops.index(off, (slice(None), slice(None), 1)), base_y)
    sampled = sample_bilinear(x, px, py)  # N, C_in, K, Ho, Wo

    og = c_out // groups
    sampled = ops.reshape(sampled, (n, groups, cg, k, ho, wo))
    w = ops.reshape(weight, (groups, og, cg, k))
    out = ops.einsum('ngckhw,gock->ngohw', sampled, w)
    out = ops.reshape(out, (n, c_out, ho, wo))
    if bias is not None:
        out = ops.add(out, bias)
    return out
