"""
Full two-stream detector: encoders, MuFEm, SCoFA and the dense decoder.
"""
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from autograd import Module, Tensor
from utils.config import EvalConfig, ModelConfig
from utils.errors import ConfigError, ShapeError
from .detector import Decoder, DenseOutput, Detection, decode_detections
from .encoder import Encoder
from .mufem import MuFEm
from .scofa import SCoFA

MODES = ("multimodal", "visible", "thermal")


@dataclass
class DualFeatureState:
    """The visible and thermal feature maps moving through the fusion stages."""
    visible: Tensor
    thermal: Tensor


class MultimodalDetector(Module):
    """
    RGB + thermal pedestrian detector.

    Parameter names (and therefore checkpoint names) are rooted at the
    attribute names below: ``encoder_visible``, ``encoder_thermal``,
    ``mufem``, ``scofa`` and ``decoder``.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.encoder_visible = Encoder(3, cfg.encoder, rng)
        self.encoder_thermal = Encoder(1, cfg.encoder, rng)
        channels = cfg.encoder.out_channels
        self.mufem = MuFEm(channels, cfg.n_fusion_units, cfg.patch_size, rng)
        self.scofa = SCoFA(channels, rng, spatial=cfg.spatial_branch, contextual=cfg.contextual_branch,
                           crf_iterations=cfg.crf_iterations, crf_damping=cfg.crf_damping,
                           irnn_channels=cfg.irnn_channels)
        self.decoder = Decoder(self.scofa.out_channels, cfg.decoder_channels, cfg.encoder.total_stride,
                               rng, geometry_scale=cfg.geometry_scale)

    @property
    def output_stride(self) -> int:
        return self.decoder.stride

    @property
    def feature_stride(self) -> int:
        return self.cfg.encoder.total_stride

    @property
    def fused_channels(self) -> int:
        return self.scofa.out_channels

    def encode(self, rgb: Tensor, thermal: Tensor) -> DualFeatureState:
        return DualFeatureState(visible=self.encoder_visible(rgb), thermal=self.encoder_thermal(thermal))

    def features(self, rgb: Tensor, thermal: Tensor) -> Tensor:
        """Fused SCoFA features for one image pair."""
        state = self.encode(rgb, thermal)
        fv, ft = self.mufem(state.visible, state.thermal)
        return self.scofa(fv, ft)

    def forward(self, rgb: Tensor, thermal: Tensor) -> Tuple[DenseOutput, Tensor]:
        fused = self.features(rgb, thermal)
        return self.decoder(fused), fused

    def detect(self, rgb: Tensor, thermal: Tensor, eval_cfg: EvalConfig) -> List[Detection]:
        dense, _ = self(rgb, thermal)
        return decode_detections(dense, eval_cfg.score_thresh, eval_cfg.nms_iou, eval_cfg.max_detections)


def model_inputs(rgb: np.ndarray, thermal: np.ndarray, mode: str = "multimodal") -> Tuple[Tensor, Tensor]:
    """
    Batch one image pair for the model, zeroing the modality a unimodal mode drops.

    Args:
        rgb: [3, H, W] in [0, 1]
        thermal: [1, H, W] in [0, 1]
        mode: multimodal, visible or thermal

    Returns:
        (rgb [1,3,H,W], thermal [1,1,H,W]) tensors
    """
    if mode not in MODES:
        raise ConfigError(f"Unknown modality mode {mode!r}; expected one of {', '.join(MODES)}")
    if rgb.shape[1:] != thermal.shape[1:]:
        raise ShapeError(f"RGB {rgb.shape} and thermal {thermal.shape} differ in size")
    rgb = np.asarray(rgb, dtype=np.float32)[None]
    thermal = np.asarray(thermal, dtype=np.float32)[None]
    if mode == "thermal":
        rgb = np.zeros_like(rgb)
    elif mode == "visible":
        thermal = np.zeros_like(thermal)
    return Tensor(rgb), Tensor(thermal)


def build_model(cfg: ModelConfig, seed: int = 0, dtype: Optional[type] = None) -> MultimodalDetector:
    model = MultimodalDetector(cfg, seed)
    if dtype is not None:
        model.astype(dtype)
    return model
