"""
Convolution layers with their parameters.
"""
from typing import Optional

import numpy as np

from autograd import Module, Parameter, Tensor, conv2d, deform_conv2d


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / max(fan_in, 1))).astype(np.float32)


class Conv2d(Module):
    """Plain (optionally grouped) convolution with He-initialised weights."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1, pad: Optional[int] = None,
                 groups: int = 1, bias: bool = True, zero_init: bool = False):
        self.stride = stride
        self.pad = kernel_size // 2 if pad is None else pad
        self.groups = groups
        shape = (out_channels, in_channels // groups, kernel_size, kernel_size)
        if zero_init:
            self.weight = Parameter(np.zeros(shape, dtype=np.float32))
        else:
            fan_in = (in_channels // groups) * kernel_size * kernel_size
            self.weight = Parameter(he_normal(rng, shape, fan_in))
        self.bias = Parameter(np.zeros(out_channels, dtype=np.float32)) if bias else None

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad, groups=self.groups)


class DeformConvLayer(Module):
    """
    Deformable convolution whose per-tap offsets come from a plain convolution
    over the same input.

    The offset predictor starts at zero, so a fresh layer computes exactly the
    plain convolution of its weights.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1, pad: Optional[int] = None,
                 groups: int = 1):
        self.stride = stride
        self.pad = kernel_size // 2 if pad is None else pad
        self.groups = groups
        self.kernel_size = kernel_size
        shape = (out_channels, in_channels // groups, kernel_size, kernel_size)
        self.weight = Parameter(he_normal(rng, shape, (in_channels // groups) * kernel_size ** 2))
        self.bias = Parameter(np.zeros(out_channels, dtype=np.float32))
        self.offset_predictor = Conv2d(in_channels, self.offset_channels, kernel_size, rng,
                                       stride=stride, pad=self.pad, zero_init=True)

    @property
    def offset_channels(self) -> int:
        return 2 * self.kernel_size * self.kernel_size

    def forward(self, x: Tensor) -> Tensor:
        offsets = self.offset_predictor(x)
        return deform_conv2d(x, self.weight, offsets, self.bias, stride=self.stride,
                             pad=self.pad, groups=self.groups)
