"""
Shared fixtures; puts src/ on sys.path like the application does.
"""
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from utils.config import EncoderConfig, ModelConfig, RunConfig, SceneSpec  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model_config():
    """Smallest layout that still exercises every block."""
    return ModelConfig(
        encoder=EncoderConfig(stem_width=4, widths=(8, 8), blocks=(1, 1), cardinality=(2, 2),
                              strides=(2, 2), deformable_stages=(False, True)),
        n_fusion_units=2, patch_size=2, crf_iterations=2, irnn_channels=4,
        decoder_channels=(8, 4), geometry_scale=8.0, confidence_channels=4)


@pytest.fixture
def tiny_run_config(tiny_model_config, tmp_path):
    cfg = RunConfig()
    cfg.model = tiny_model_config
    cfg.scene = SceneSpec(height=32, width=32, min_ped_height=12.0, max_ped_height=28.0)
    cfg.train.steps = 3
    cfg.train.log_every = 1
    cfg.train.checkpoint_every = 2
    cfg.train.confidence_epochs = 2
    cfg.eval.min_height = 10.0
    cfg.eval.max_occlusion = 1.0
    cfg.io.dataset_dir = str(tmp_path / "dataset")
    cfg.io.checkpoint_path = str(tmp_path / "runs" / "model.mmpd")
    cfg.io.output_dir = str(tmp_path / "runs")
    cfg.io.num_frames = 10
    cfg.ablation.fusion_units = (1,)
    cfg.ablation.branches = ("both",)
    cfg.ablation.lambda_g = (1.0,)
    cfg.ablation.steps = 1
    return cfg


@pytest.fixture
def small_scene():
    return SceneSpec(height=64, width=64, seed=7)
