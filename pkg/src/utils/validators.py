"""
Run-config, dataset and path validation.
"""
import os
from pathlib import Path
from typing import List, Tuple

from .config import RunConfig
from .logger import logger


def sanitize_path(file_path: str) -> str:
    """
    Resolve a user-supplied path to an absolute one.

    Args:
        file_path: Raw file path

    Returns:
        Sanitized absolute path
    """
    path = Path(file_path).expanduser().resolve()
    path_str = str(path)
    if '..' in file_path and '..' not in path_str:
        logger.debug(f"Relative path components resolved: {file_path} -> {path_str}")
    return path_str


def _model_problems(cfg: RunConfig) -> List[str]:
    m = cfg.model
    enc = m.encoder
    problems = []
    n_stages = len(enc.widths)
    if n_stages == 0:
        problems.append("model.encoder.widths must name at least one stage")
    for name in ("blocks", "cardinality", "strides", "deformable_stages"):
        if len(getattr(enc, name)) != n_stages:
            problems.append(f"model.encoder.{name} must have {n_stages} entries")
    for i, (w, c) in enumerate(zip(enc.widths, enc.cardinality)):
        if c < 1 or w % c != 0:
            problems.append(f"model.encoder.widths[{i}]={w} not divisible by cardinality {c}")
    if any(b < 1 for b in enc.blocks):
        problems.append("model.encoder.blocks entries must be >= 1")
    if any(s not in (1, 2) for s in enc.strides):
        problems.append("model.encoder.strides entries must be 1 or 2")
    if enc.deformable and not any(enc.deformable_stages):
        problems.append("model.encoder.deformable_stages must enable at least one stage")
    if not 1 <= m.n_fusion_units <= 5:
        problems.append(f"model.n_fusion_units={m.n_fusion_units} outside [1, 5]")
    if m.patch_size < 1:
        problems.append("model.patch_size must be >= 1")
    if not (m.spatial_branch or m.contextual_branch):
        problems.append("model.spatial_branch/contextual_branch: at least one SCoFA branch required")
    if m.crf_iterations < 1:
        problems.append("model.crf_iterations must be >= 1")
    if not 0.0 < m.crf_damping <= 1.0:
        problems.append("model.crf_damping must lie in (0, 1]")
    if m.irnn_channels < 1:
        problems.append("model.irnn_channels must be >= 1")
    if len(m.decoder_channels) < 1 or any(c < 1 for c in m.decoder_channels):
        problems.append("model.decoder_channels must be a non-empty list of positive widths")
    elif enc.total_stride % (2 ** (len(m.decoder_channels) - 1)) != 0:
        problems.append("model.decoder_channels has more upsampling stages than the encoder stride allows")
    if m.geometry_scale <= 0:
        problems.append("model.geometry_scale must be positive")
    return problems


def _train_problems(cfg: RunConfig) -> List[str]:
    t = cfg.train
    problems = []
    if not 0.0 <= t.lambda_g <= 1.0:
        problems.append(f"train.lambda_g={t.lambda_g} outside [0, 1]")
    if t.base_lr <= 0:
        problems.append("train.base_lr must be positive")
    if not 0.0 <= t.momentum < 1.0:
        problems.append("train.momentum must lie in [0, 1)")
    if t.lr_period < 1:
        problems.append("train.lr_period must be >= 1")
    if t.steps < 0:
        problems.append("train.steps must be >= 0")
    if t.batch_size != 1:
        problems.append("train.batch_size must be 1 (use train.accumulate for larger effective batches)")
    if t.accumulate < 1:
        problems.append("train.accumulate must be >= 1")
    if t.mixup_alpha <= 0:
        problems.append("train.mixup_alpha must be positive")
    if not 0.0 <= t.curriculum_max <= 1.0:
        problems.append("train.curriculum_max must lie in [0, 1]")
    if not 0.0 < t.curriculum_ramp <= 1.0:
        problems.append("train.curriculum_ramp must lie in (0, 1]")
    if t.train_mode not in ("multimodal", "visible", "thermal"):
        problems.append(f"train.train_mode={t.train_mode!r} must be multimodal, visible or thermal")
    if t.log_every < 1 or t.checkpoint_every < 1:
        problems.append("train.log_every and train.checkpoint_every must be >= 1")
    if t.prefetch < 1:
        problems.append("train.prefetch must be >= 1")
    return problems


def _eval_problems(cfg: RunConfig) -> List[str]:
    e = cfg.eval
    problems = []
    if e.min_height < 0:
        problems.append("eval.min_height must be >= 0")
    if not 0.0 < e.max_occlusion <= 1.0:
        problems.append("eval.max_occlusion must lie in (0, 1]")
    if not 0.0 < e.match_iou < 1.0:
        problems.append(f"eval.match_iou={e.match_iou} outside (0, 1)")
    if e.fppi_points < 1 or not 0 < e.fppi_min < e.fppi_max:
        problems.append("eval.fppi points must be strictly increasing (fppi_min < fppi_max, fppi_points >= 1)")
    if not 0.0 < e.score_thresh < 1.0:
        problems.append("eval.score_thresh must lie in (0, 1)")
    if not 0.0 < e.nms_iou < 1.0:
        problems.append("eval.nms_iou must lie in (0, 1)")
    if not 0.0 < e.confidence_iou < 1.0:
        problems.append("eval.confidence_iou must lie in (0, 1)")
    return problems


def _scene_problems(cfg: RunConfig) -> List[str]:
    s = cfg.scene
    problems = []
    if s.height < 8 or s.width < 8:
        problems.append("scene.height and scene.width must be >= 8")
    stride = cfg.model.encoder.total_stride
    if s.height % stride or s.width % stride:
        problems.append(f"scene.height/width must be divisible by the encoder stride {stride}")
    if not 0 <= s.min_pedestrians <= s.max_pedestrians:
        problems.append("scene.min_pedestrians/max_pedestrians must form a nonempty range")
    if not 0 < s.min_ped_height <= s.max_ped_height:
        problems.append("scene.min_ped_height/max_ped_height must form a nonempty range")
    if s.max_ped_height > s.height:
        problems.append("scene.max_ped_height exceeds the image height")
    if not 0.0 <= s.night_fraction <= 1.0:
        problems.append("scene.night_fraction must lie in [0, 1]")
    if s.time_of_day not in (None, "day", "night"):
        problems.append("scene.time_of_day must be null, day or night")
    if not 0.0 <= s.night_contrast <= 0.1:
        problems.append("scene.night_contrast must lie in [0, 0.1]")
    if s.shift_range < 0:
        problems.append("scene.shift_range must be >= 0")
    if not 0.0 <= s.occlusion_prob <= 1.0:
        problems.append("scene.occlusion_prob must lie in [0, 1]")
    if s.rgb_noise < 0 or s.thermal_noise < 0:
        problems.append("scene noise levels must be >= 0")
    return problems


def _io_problems(cfg: RunConfig) -> List[str]:
    io = cfg.io
    problems = []
    if io.num_frames < 1:
        problems.append("io.num_frames must be >= 1")
    if len(io.split_fractions) != 3 or any(f < 0 for f in io.split_fractions) \
            or abs(sum(io.split_fractions) - 1.0) > 1e-9:
        problems.append("io.split_fractions must be three non-negative fractions summing to 1")
    return problems


def validate_run_config(cfg: RunConfig) -> Tuple[bool, str]:
    """
    Validate every section of a run config.

    Args:
        cfg: Run configuration

    Returns:
        Tuple of (is_valid, error_message). The message names each bad field.
    """
    problems = (_model_problems(cfg) + _train_problems(cfg) + _eval_problems(cfg)
                + _scene_problems(cfg) + _io_problems(cfg))
    if problems:
        message = "Invalid configuration:\n  " + "\n  ".join(problems)
        logger.error(message)
        return False, message
    return True, "Configuration valid"


def is_valid_dataset_dir(dir_path: str) -> Tuple[bool, str]:
    """
    Check that a directory has the dataset layout.

    Args:
        dir_path: Dataset directory

    Returns:
        Tuple of (is_valid, error_message)
    """
    path = Path(sanitize_path(dir_path))
    if not path.is_dir():
        return False, f"Dataset directory not found: {path}"
    for sub in ('rgb', 'thermal', 'ann'):
        if not (path / sub).is_dir():
            return False, f"Dataset directory {path} lacks '{sub}/'"
    if not (path / 'meta.json').is_file():
        return False, f"Dataset directory {path} lacks meta.json"
    return True, "Valid dataset directory"


def check_output_directory(dir_path: str) -> Tuple[bool, str]:
    """
    Make sure an output directory exists and is writable.

    Args:
        dir_path: Directory to create or check

    Returns:
        Tuple of (is_writable, message)
    """
    path = Path(sanitize_path(dir_path))
    try:
        path.mkdir(parents=True, exist_ok=True)
    except PermissionError:
        return False, f"Permission denied creating output directory: {path}"
    except OSError as e:
        return False, f"Cannot create output directory: {path} ({e})"
    if not os.access(path, os.W_OK):
        return False, f"Output directory is not writable: {path}"
    return True, "Output directory ready"
