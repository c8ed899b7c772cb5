"""
Unimodal feature extractor: grouped-convolution residual blocks with
deformable convolution in the configured stages.
"""
from typing import List, Union

import numpy as np

from autograd import Module, Tensor, ops
from utils.config import EncoderConfig
from utils.errors import ConfigError, ShapeError
from .layers import Conv2d, DeformConvLayer


class ResNeXtBlock(Module):
    """
    Bottleneck block: 1x1 reduce, grouped 3x3 (optionally deformable and
    strided), 1x1 expand, plus a projection shortcut when the shape changes.
    """

    def __init__(self, in_channels: int, width: int, cardinality: int, stride: int,
                 deformable: bool, rng: np.random.Generator):
        self.conv1 = Conv2d(in_channels, width, 1, rng)
        if deformable:
            self.conv2 = DeformConvLayer(width, width, 3, rng, stride=stride, groups=cardinality)
        else:
            self.conv2 = Conv2d(width, width, 3, rng, stride=stride, groups=cardinality)
        self.conv3 = Conv2d(width, width, 1, rng)
        self.shortcut = None
        if stride != 1 or in_channels != width:
            self.shortcut = Conv2d(in_channels, width, 1, rng, stride=stride, pad=0)

    def forward(self, x: Tensor) -> Tensor:
        out = ops.relu(self.conv1(x))
        out = ops.relu(self.conv2(out))
        out = self.conv3(out)
        skip = self.shortcut(x) if self.shortcut is not None else x
        return ops.relu(ops.add(out, skip))


class Encoder(Module):
    """Stem plus stages of residual blocks; returns the last stage's map."""

    def __init__(self, in_channels: int, cfg: EncoderConfig, rng: np.random.Generator):
        check_encoder_config(cfg)
        self.cfg = cfg
        self.in_channels = in_channels
        self.stem = Conv2d(in_channels, cfg.stem_width, 3, rng)
        blocks: List[ResNeXtBlock] = []
        channels = cfg.stem_width
        for stage, width in enumerate(cfg.widths):
            deformable = cfg.deformable and cfg.deformable_stages[stage]
            for b in range(cfg.blocks[stage]):
                stride = cfg.strides[stage] if b == 0 else 1
                blocks.append(ResNeXtBlock(channels, width, cfg.cardinality[stage], stride, deformable, rng))
                channels = width
        self.blocks = blocks

    @property
    def out_channels(self) -> int:
        return self.cfg.out_channels

    @property
    def total_stride(self) -> int:
        return self.cfg.total_stride

    def forward(self, image: Tensor) -> Tensor:
        if image.ndim != 4 or image.shape[1] != self.in_channels:
            raise ShapeError(f"Encoder expects [N,{self.in_channels},H,W], got {image.shape}")
        s = self.total_stride
        if image.shape[2] % s or image.shape[3] % s:
            raise ShapeError(f"Image {image.shape[2]}x{image.shape[3]} is not divisible by encoder stride {s}")
        out = ops.relu(self.stem(image))
        for block in self.blocks:
            out = block(out)
        return out


def check_encoder_config(cfg: EncoderConfig) -> None:
    """
    Raise ConfigError for an encoder layout that cannot be built.
    """
    n = len(cfg.widths)
    if n == 0:
        raise ConfigError("Encoder needs at least one stage")
    for name in ("blocks", "cardinality", "strides", "deformable_stages"):
        if len(getattr(cfg, name)) != n:
            raise ConfigError(f"Encoder {name} has {len(getattr(cfg, name))} entries for {n} stages")
    for i, (w, c) in enumerate(zip(cfg.widths, cfg.cardinality)):
        if c < 1 or w % c:
            raise ConfigError(f"Encoder stage {i}: width {w} is not divisible by cardinality {c}")
    if cfg.deformable and not any(cfg.deformable_stages):
        raise ConfigError("Deformable mode needs at least one deformable stage")


def encode(image: Tensor, encoder: Union[Encoder, EncoderConfig], seed: int = 0) -> Tensor:
    """
    Run one modality through its encoder.

    Trained weights live on an Encoder, so that is the usual second argument.
    Given only an EncoderConfig, a fresh encoder is built from ``seed`` for the
    image's channel count; this validates the layout and yields the output shape.

    Raises:
        ConfigError: If the layout cannot be built
        ShapeError: If the image does not fit the encoder
    """
    if isinstance(encoder, EncoderConfig):
        encoder = Encoder(image.shape[1], encoder, np.random.default_rng(seed))
    return encoder(image)
