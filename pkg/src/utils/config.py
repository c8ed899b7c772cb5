"""
Application configuration and run settings.
"""
import copy
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from .errors import ConfigError


class Config:
    """Application configuration manager."""

    # Application info
    APP_NAME = "multifuse"
    APP_VERSION = "1.0.0"

    # Full-scale training hyperparameters
    DEFAULT_BASE_LR = 0.01
    DEFAULT_MOMENTUM = 0.9
    DEFAULT_LR_PERIOD = 5000
    DEFAULT_LR_DECAY = 10.0
    DEFAULT_CURRICULUM_MAX = 0.7
    DEFAULT_SCALE_RANGE = (0.8, 1.2)
    DEFAULT_FLIP_PROB = 0.3
    DEFAULT_LEAKY_SLOPE = 0.2

    # Numerical guards
    LOG_EPS = 1e-7
    IOU_FLOOR = 1e-6
    MISS_RATE_FLOOR = 1e-6

    # Checkpoint format
    CHECKPOINT_MAGIC = b"MMPD"
    CHECKPOINT_VERSION = 1

    def __init__(self):
        """Locate the bundled run config."""
        self.default_run_config = Path(__file__).resolve().parents[2] / 'configs' / 'default.json'


@dataclass
class EncoderConfig:
    """Layout of one unimodal deformable ResNeXt-style encoder."""
    stem_width: int = 16
    widths: Tuple[int, ...] = (16, 32, 64)
    blocks: Tuple[int, ...] = (1, 1, 1)
    cardinality: Tuple[int, ...] = (4, 4, 4)
    strides: Tuple[int, ...] = (2, 2, 2)
    deformable_stages: Tuple[bool, ...] = (False, False, True)
    deformable: bool = True

    @property
    def total_stride(self) -> int:
        total = 1
        for s in self.strides:
            total *= s
        return total

    @property
    def out_channels(self) -> int:
        return self.widths[-1]


@dataclass
class ModelConfig:
    """Architecture switches for the full detector."""
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    n_fusion_units: int = 4
    patch_size: int = 2
    spatial_branch: bool = True
    contextual_branch: bool = True
    crf_iterations: int = 3
    crf_damping: float = 0.5
    irnn_channels: int = 32
    decoder_channels: Tuple[int, ...] = (64, 32, 16)
    geometry_scale: float = 16.0
    confidence_channels: int = 16


@dataclass
class TrainConfig:
    """Optimizer, schedule and training-strategy settings."""
    lambda_g: float = 1.0
    base_lr: float = 0.01
    momentum: float = 0.9
    lr_period: int = 5000
    steps: int = 2000
    batch_size: int = 1
    accumulate: int = 1
    simple_augment: bool = False
    mixup: bool = False
    mixup_alpha: float = 0.2
    curriculum: bool = False
    curriculum_max: float = 0.7
    curriculum_ramp: float = 0.8
    train_mode: str = "multimodal"
    log_every: int = 50
    checkpoint_every: int = 500
    prefetch: int = 4
    confidence_epochs: int = 5
    seed: int = 0


@dataclass
class EvalConfig:
    """Reasonable-setup evaluation protocol."""
    min_height: float = 50.0
    max_occlusion: float = 0.5
    match_iou: float = 0.5
    fppi_points: int = 9
    fppi_min: float = 1e-2
    fppi_max: float = 1.0
    score_thresh: float = 0.05
    nms_iou: float = 0.5
    max_detections: int = 100
    confidence_iou: float = 0.5

    def reference_fppi(self) -> Tuple[float, ...]:
        """Log-uniform FPPI sample points."""
        import numpy as np
        return tuple(float(v) for v in np.logspace(
            np.log10(self.fppi_min), np.log10(self.fppi_max), self.fppi_points))


@dataclass
class SceneSpec:
    """Parameters of one synthetic RGB/thermal scene."""
    height: int = 64
    width: int = 64
    min_pedestrians: int = 1
    max_pedestrians: int = 3
    min_ped_height: float = 24.0
    max_ped_height: float = 56.0
    day_brightness: float = 1.0
    night_brightness: float = 0.35
    night_contrast: float = 0.08
    night_fraction: float = 0.5
    time_of_day: Optional[str] = None
    shift_range: float = 2.0
    occlusion_prob: float = 0.2
    rgb_noise: float = 0.02
    thermal_noise: float = 0.02
    seed: int = 0


@dataclass
class IoConfig:
    """Filesystem locations and dataset synthesis counts."""
    dataset_dir: str = "data/synthetic"
    checkpoint_path: str = "runs/model.mmpd"
    output_dir: str = "runs"
    num_frames: int = 100
    split_fractions: Tuple[float, ...] = (0.8, 0.1, 0.1)


@dataclass
class AblationConfig:
    """Desk-scale grid for the ablation command."""
    fusion_units: Tuple[int, ...] = (1, 2, 4)
    branches: Tuple[str, ...] = ("spatial", "contextual", "both")
    lambda_g: Tuple[float, ...] = (0.1, 0.3, 0.7, 1.0)
    steps: int = 300


@dataclass
class RunConfig:
    """Everything one multifuse command needs."""
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    io: IoConfig = field(default_factory=IoConfig)
    scene: SceneSpec = field(default_factory=SceneSpec)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        """
        Build a run config from a parsed JSON document.

        Args:
            data: Nested dictionary; keys starting with "_" are comments

        Returns:
            RunConfig instance

        Raises:
            ConfigError: On unknown keys or wrongly typed sections
        """
        return _merge(cls(), data, "")

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        """
        Load a run config from a JSON file.

        Args:
            path: Path to the JSON document

        Returns:
            RunConfig instance
        """
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"Config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file is not valid JSON: {path} ({e})")
        return cls.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def save(self, path: str) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    def copy(self) -> "RunConfig":
        return copy.deepcopy(self)


def _merge(target: Any, data: Dict[str, Any], prefix: str) -> Any:
    """Overlay a dictionary on a dataclass instance, recursing into sections."""
    if not isinstance(data, dict):
        raise ConfigError(f"Section '{prefix or 'root'}' must be an object")
    known = {f.name: f for f in dataclasses.fields(target)}
    for key, value in data.items():
        if key.startswith('_'):
            continue
        name = f"{prefix}{key}"
        if key not in known:
            raise ConfigError(f"Unknown config key: {name}")
        current = getattr(target, key)
        if dataclasses.is_dataclass(current):
            _merge(current, value, name + ".")
        elif isinstance(current, tuple):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"Config key {name} must be a list")
            setattr(target, key, tuple(value))
        elif isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"Config key {name} must be true or false")
            setattr(target, key, value)
        elif isinstance(current, (int, float)) and not isinstance(current, bool):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"Config key {name} must be a number")
            if isinstance(current, int) and not isinstance(value, int):
                raise ConfigError(f"Config key {name} must be an integer")
            setattr(target, key, type(current)(value))
        else:
            setattr(target, key, value)
    return target


# Global configuration instance
config = Config()
