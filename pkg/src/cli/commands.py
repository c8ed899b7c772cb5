"""
Implementations of the multifuse sub-commands.

Every command takes a RunConfig and returns a plain result; argument parsing,
progress bars and exit codes live in ``main.py``.
"""
import csv
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from data.dataset_io import SPLITS, frame_name, load_dataset, load_pair, save_dataset, scene_to_dict, split_counts
from data.scene import SamplePair, generate_scene
from evaluation.confidence_bins import ConfidenceBins, confidence_report
from evaluation.metrics import EvalReport, split_report
from model.checkpoint import checkpoint_digest, join_state, load_checkpoint, save_checkpoint, split_state
from model.confidence import ConfidenceHead, build_confidence_head, train_confidence
from model.detector import format_detection
from model.network import MultimodalDetector, build_model
from training.inference import confidence_samples, detect_frames
from training.trainer import StepRecord, Trainer
from utils.config import RunConfig
from utils.errors import ConfigError, FormatError, IoError, NoGroundTruthError
from utils.logger import logger
from utils.validators import check_output_directory, is_valid_dataset_dir, validate_run_config
from .gradcheck_suite import GradcheckCase, GradcheckRow, run_suite

ProgressCallback = Optional[Callable[[Dict[str, Any]], None]]


def apply_seed(cfg: RunConfig, seed: Optional[int]) -> RunConfig:
    """Copy of ``cfg`` with the global seed applied to training and synthesis."""
    cfg = cfg.copy()
    if seed is not None:
        cfg.train.seed = seed
        cfg.scene.seed = seed
    return cfg


def ensure_valid(cfg: RunConfig) -> None:
    ok, message = validate_run_config(cfg)
    if not ok:
        raise ConfigError(message)


def _require_dataset(dir_path: str) -> None:
    ok, message = is_valid_dataset_dir(dir_path)
    if not ok:
        raise IoError(message)


def _load_split(dir_path: str, split: str) -> List[SamplePair]:
    _require_dataset(dir_path)
    pairs = load_dataset(dir_path, split)
    if not pairs:
        raise FormatError(f"Dataset {dir_path} has no '{split}' frames", dir_path)
    return pairs


def frame_seed(base: int, split: str, index: int) -> int:
    """Scene seed of frame ``index`` within ``split``; splits draw from disjoint streams."""
    return int(np.random.SeedSequence([base, SPLITS.index(split), index]).generate_state(1)[0])


def load_detector(cfg: RunConfig, checkpoint: str) -> Tuple[MultimodalDetector, Optional[ConfidenceHead]]:
    """
    Rebuild the detector (and the confidence head, when stored) from a checkpoint.

    Raises:
        FormatError: If the stored names or shapes do not fit ``cfg.model``
        ChecksumError: If the archive is corrupt
    """
    tensors = load_checkpoint(checkpoint)
    model = build_model(cfg.model, cfg.train.seed)
    model.load_state_dict(split_state(tensors, "detector"))
    head = None
    head_state = split_state(tensors, "confidence")
    if head_state:
        head = build_confidence_head(model, cfg.model.confidence_channels, cfg.train.seed)
        head.load_state_dict(head_state)
    return model, head


# -- synth -------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, out_dir: Optional[str] = None, progress_callback: ProgressCallback = None) -> Dict[str, int]:
    """
    Generate the train/val/test splits of a synthetic dataset.

    Args:
        cfg: Run config; ``scene`` and ``io.num_frames``/``io.split_fractions`` are used
        out_dir: Target directory, ``io.dataset_dir`` by default
        progress_callback: Called after each frame

    Returns:
        Frame count per split

    Raises:
        IoError: If the directory cannot be written
    """
    out_dir = out_dir or cfg.io.dataset_dir
    ok, message = check_output_directory(out_dir)
    if not ok:
        raise IoError(message)
    counts = split_counts(cfg.io.num_frames, cfg.io.split_fractions)
    pairs = []
    for split in SPLITS:
        for i in range(counts[split]):
            pair = generate_scene(cfg.scene, seed=frame_seed(cfg.scene.seed, split, i))
            pair.frame_id = frame_name(len(pairs))
            pair.split = split
            pairs.append(pair)
            if progress_callback:
                progress_callback({'frame': len(pairs), 'frames': cfg.io.num_frames,
                                   'percentage': 100.0 * len(pairs) / cfg.io.num_frames})
    save_dataset(pairs, out_dir, scene=scene_to_dict(cfg.scene))
    logger.info("Split counts: " + ", ".join(f"{k} {v}" for k, v in counts.items()))
    return counts


# -- train -------------------------------------------------------------------------

def training_log_path(checkpoint: str) -> str:
    return str(Path(checkpoint).with_suffix('.csv'))


def cmd_train(cfg: RunConfig, checkpoint: Optional[str] = None, dataset_dir: Optional[str] = None,
              progress_callback: ProgressCallback = None,
              cancel_check: Optional[Callable[[], bool]] = None) -> List[StepRecord]:
    """
    Train a detector on the training split and write checkpoint plus CSV log.

    Raises:
        NumericError: If a step produces a non-finite value
    """
    checkpoint = checkpoint or cfg.io.checkpoint_path
    pairs = _load_split(dataset_dir or cfg.io.dataset_dir, "train")
    model = build_model(cfg.model, cfg.train.seed)
    trainer = Trainer(model, cfg, pairs, checkpoint_path=checkpoint, log_path=training_log_path(checkpoint))
    history = trainer.run(progress_callback=progress_callback, cancel_check=cancel_check)
    if history:
        logger.info(f"Training finished: final loss {history[-1].loss:.5f} after {len(history)} steps")
    return history


# -- eval --------------------------------------------------------------------------

def cmd_eval(cfg: RunConfig, checkpoint: Optional[str] = None, dataset_dir: Optional[str] = None,
             mode: str = "multimodal", split: str = "test", out_dir: Optional[str] = None,
             progress_callback: ProgressCallback = None) -> EvalReport:
    """
    Evaluate a checkpoint on one dataset split and write the report files.

    Writes ``eval_<mode>.txt`` (key-value block) and ``eval_<mode>_curve.csv``.
    """
    model, _ = load_detector(cfg, checkpoint or cfg.io.checkpoint_path)
    pairs = _load_split(dataset_dir or cfg.io.dataset_dir, split)
    detections, _ = detect_frames(model, pairs, cfg.eval, mode, progress_callback=progress_callback)
    report = split_report(pairs, detections, cfg.eval, mode=mode)
    out = Path(out_dir or cfg.io.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / f"eval_{mode}.txt").write_text(report.to_text(), encoding='utf-8')
        (out / f"eval_{mode}_curve.csv").write_text(report.curve_csv(), encoding='utf-8')
    except OSError as e:
        raise IoError(f"Cannot write evaluation report to {out}: {e}")
    return report


# -- infer -------------------------------------------------------------------------

def cmd_infer(cfg: RunConfig, checkpoint: Optional[str], pair_paths: Sequence[Tuple[str, str]],
              out_path: str, mode: str = "multimodal") -> int:
    """
    Detect pedestrians in image pairs and write one line per detection.

    Lines carry a seventh confidence field when the checkpoint holds a head.

    Returns:
        Number of detections written
    """
    model, head = load_detector(cfg, checkpoint or cfg.io.checkpoint_path)
    pairs = [load_pair(rgb, thermal) for rgb, thermal in pair_paths]
    detections, fps = detect_frames(model, pairs, cfg.eval, mode, head=head)
    lines = [format_detection(pair.frame_id, det) for pair, dets in zip(pairs, detections) for det in dets]
    try:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, 'w', encoding='utf-8', newline='\n') as f:
            f.write("".join(line + "\n" for line in lines))
    except OSError as e:
        raise IoError(f"Cannot write detections to {out_path}: {e}")
    logger.info(f"Wrote {len(lines)} detections for {len(pairs)} pairs to {out_path} ({fps:.2f} frames/s)")
    return len(lines)


# -- gradcheck ---------------------------------------------------------------------

def cmd_gradcheck(seed: int = 0, cases: Optional[Sequence[GradcheckCase]] = None) -> List[GradcheckRow]:
    """Run the gradient-check suite; callers fail when any row does not pass."""
    rows = run_suite(cases, seed=seed)
    failed = [r.name for r in rows if not r.passed]
    if failed:
        logger.error(f"Gradient check failed for: {', '.join(failed)}")
    else:
        logger.info(f"Gradient check passed for all {len(rows)} blocks")
    return rows


# -- confcal -----------------------------------------------------------------------

@dataclass
class ConfcalResult:
    bins: ConfidenceBins
    losses: List[float]
    detector_digest: str
    checkpoint: str


def confidence_checkpoint_path(checkpoint: str) -> str:
    path = Path(checkpoint)
    return str(path.with_name(path.stem + "_conf" + path.suffix))


def cmd_confcal(cfg: RunConfig, checkpoint: Optional[str] = None, dataset_dir: Optional[str] = None,
                out_checkpoint: Optional[str] = None, out_dir: Optional[str] = None,
                progress_callback: ProgressCallback = None) -> ConfcalResult:
    """
    Train the confidence head on the frozen detector and report binned rates.

    The head learns on the training split and is reported on the validation
    split. Detector and head tensors go to a new checkpoint.

    Raises:
        RuntimeError: If the detector weights changed during head training
    """
    checkpoint = checkpoint or cfg.io.checkpoint_path
    dataset_dir = dataset_dir or cfg.io.dataset_dir
    model, _ = load_detector(cfg, checkpoint)
    before = checkpoint_digest(model.state_dict())

    train_pairs = _load_split(dataset_dir, "train")
    head = build_confidence_head(model, cfg.model.confidence_channels, cfg.train.seed)
    losses = train_confidence(head, model, confidence_samples(model, train_pairs, cfg.train.train_mode),
                              epochs=cfg.train.confidence_epochs, lr=cfg.train.base_lr,
                              momentum=cfg.train.momentum, progress_callback=progress_callback)
    after = checkpoint_digest(model.state_dict())
    if after != before:
        raise RuntimeError("Detector weights changed during confidence training")

    val_pairs = _load_split(dataset_dir, "val")
    detections, _ = detect_frames(model, val_pairs, cfg.eval, cfg.train.train_mode, head=head)
    bins = ConfidenceBins()
    for pair, dets in zip(val_pairs, detections):
        bins = bins.merge(confidence_report(dets, pair.boxes, cfg.eval.confidence_iou))

    out_checkpoint = out_checkpoint or confidence_checkpoint_path(checkpoint)
    tensors = join_state(model.state_dict(), "detector")
    tensors.update(join_state(head.state_dict(), "confidence"))
    save_checkpoint(out_checkpoint, tensors)
    out = Path(out_dir or cfg.io.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "confidence_bins.txt").write_text(bins.to_table(), encoding='utf-8')
    except OSError as e:
        raise IoError(f"Cannot write confidence report to {out}: {e}")
    logger.info(f"Confidence report over {bins.total} validation detections written to {out}")
    return ConfcalResult(bins=bins, losses=losses, detector_digest=after, checkpoint=out_checkpoint)


# -- ablate ------------------------------------------------------------------------

ABLATION_COLUMNS = ("units", "spatial", "contextual", "lambda_g", "mr_all", "mr_day", "mr_night", "ap")


def ablation_grid(cfg: RunConfig) -> List[Tuple[int, bool, bool, float]]:
    """Fusion units x SCoFA branches at the configured lambda_g, then the lambda_g sweep."""
    branch_flags = {"spatial": (True, False), "contextual": (False, True), "both": (True, True)}
    runs = []
    for units in cfg.ablation.fusion_units:
        for branch in cfg.ablation.branches:
            if branch not in branch_flags:
                raise ConfigError(f"Unknown ablation branch setting {branch!r}")
            runs.append((units, *branch_flags[branch], cfg.train.lambda_g))
    for lam in cfg.ablation.lambda_g:
        run = (cfg.model.n_fusion_units, True, True, lam)
        if run not in runs:
            runs.append(run)
    return runs


def cmd_ablate(cfg: RunConfig, dataset_dir: Optional[str] = None, out_dir: Optional[str] = None,
               progress_callback: ProgressCallback = None) -> List[Dict[str, Any]]:
    """
    Train and evaluate every ablation setting; one CSV row per run.

    Returns:
        Rows keyed by ``ABLATION_COLUMNS``; absent splits are empty strings
    """
    dataset_dir = dataset_dir or cfg.io.dataset_dir
    train_pairs = _load_split(dataset_dir, "train")
    test_pairs = _load_split(dataset_dir, "test")
    out = Path(out_dir or cfg.io.output_dir)
    grid = ablation_grid(cfg)
    rows = []
    for i, (units, spatial, contextual, lam) in enumerate(grid):
        run_cfg = cfg.copy()
        run_cfg.model.n_fusion_units = units
        run_cfg.model.spatial_branch = spatial
        run_cfg.model.contextual_branch = contextual
        run_cfg.train.lambda_g = lam
        run_cfg.train.steps = cfg.ablation.steps
        ensure_valid(run_cfg)
        logger.info(f"Ablation run {i + 1}/{len(grid)}: units={units} spatial={spatial} "
                    f"contextual={contextual} lambda_g={lam}")
        model = build_model(run_cfg.model, run_cfg.train.seed)
        Trainer(model, run_cfg, train_pairs).run()
        detections, _ = detect_frames(model, test_pairs, run_cfg.eval)
        row: Dict[str, Any] = {"units": units, "spatial": int(spatial), "contextual": int(contextual),
                               "lambda_g": lam, "mr_all": "", "mr_day": "", "mr_night": "", "ap": ""}
        try:
            report = split_report(test_pairs, detections, run_cfg.eval)
        except NoGroundTruthError as e:
            logger.warning(f"Ablation run {i + 1}: {e}")
        else:
            for name in ("all", "day", "night"):
                metrics = report.splits.get(name)
                if metrics is not None:
                    row[f"mr_{name}"] = f"{metrics.log_average_miss_rate:.6f}"
            row["ap"] = f"{report.splits['all'].average_precision:.6f}"
        rows.append(row)
        if progress_callback:
            progress_callback({'run': i + 1, 'runs': len(grid), 'percentage': 100.0 * (i + 1) / len(grid)})

    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "ablation.csv", 'w', newline='', encoding='utf-8') as f:
            writer = csv.DictWriter(f, fieldnames=ABLATION_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)
    except OSError as e:
        raise IoError(f"Cannot write ablation table to {out}: {e}")
    return rows
