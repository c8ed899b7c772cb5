"""
Reasonable-setup evaluation: matching, MR-FPPI curve, log-average miss rate
and all-point average precision.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from model.detector import BoundingBox, Detection, box_iou
from utils.config import EvalConfig, config
from utils.errors import NoGroundTruthError
from utils.logger import logger

TP, FP, IGNORED = 1, 0, -1
SPLIT_NAMES = ("all", "day", "night")


@dataclass
class ImageMatch:
    """
    Outcome of matching one image's detections.

    Attributes:
        scores: Detection scores in descending order
        labels: TP (1), FP (0) or IGNORED (-1) per detection
        n_gt: Number of reasonable ground-truth boxes
        n_ignored_gt: Number of ground-truth boxes turned into ignore regions
    """
    scores: np.ndarray
    labels: np.ndarray
    n_gt: int
    n_ignored_gt: int = 0


def is_reasonable(box: BoundingBox, cfg: EvalConfig) -> bool:
    return box.height >= cfg.min_height and box.occlusion < cfg.max_occlusion


def match_detections(dets: Sequence[Detection], gts: Sequence[BoundingBox], cfg: EvalConfig) -> ImageMatch:
    """
    Greedily assign detections to ground truth, highest score first.

    A detection takes the best-overlapping unmatched reasonable box at IoU >=
    ``cfg.match_iou``. Failing that, one overlapping an ignore region by the same
    threshold is ignored; anything else is a false positive.

    Args:
        dets: Detections of one image
        gts: Ground-truth boxes of the same image
        cfg: Evaluation protocol

    Returns:
        ImageMatch
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    scores = np.array([dets[i].score for i in order], dtype=np.float64)
    labels = np.full(len(order), FP, dtype=np.int64)
    keep = [g for g in gts if is_reasonable(g, cfg)]
    ignore = [g for g in gts if not is_reasonable(g, cfg)]
    if not order:
        return ImageMatch(scores, labels, len(keep), len(ignore))

    det_boxes = np.stack([dets[i].box.as_array() for i in order])
    keep_iou = box_iou(det_boxes, np.stack([g.as_array() for g in keep])) if keep else None
    ignore_iou = box_iou(det_boxes, np.stack([g.as_array() for g in ignore])) if ignore else None
    taken = np.zeros(len(keep), dtype=bool)
    for d in range(len(order)):
        if keep_iou is not None:
            overlaps = np.where(taken, -1.0, keep_iou[d])
            best = int(np.argmax(overlaps))
            if overlaps[best] >= cfg.match_iou:
                taken[best] = True
                labels[d] = TP
                continue
        if ignore_iou is not None and ignore_iou[d].max() >= cfg.match_iou:
            labels[d] = IGNORED
    return ImageMatch(scores, labels, len(keep), len(ignore))


def _ranked(matches: Sequence[ImageMatch]) -> Tuple[np.ndarray, np.ndarray, int]:
    n_gt = sum(m.n_gt for m in matches)
    if n_gt == 0:
        raise NoGroundTruthError("No reasonable ground-truth box to evaluate against")
    if matches:
        scores = np.concatenate([m.scores for m in matches])
        labels = np.concatenate([m.labels for m in matches])
    else:
        scores, labels = np.zeros(0), np.zeros(0, dtype=np.int64)
    counted = labels != IGNORED
    scores, labels = scores[counted], labels[counted]
    order = np.argsort(-scores, kind="stable")
    return scores[order], labels[order], n_gt


def miss_rate_curve(matches: Sequence[ImageMatch]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sweep the score threshold over every distinct detection score.

    Returns:
        (fppi, miss_rate) arrays, starting with the no-detection point (0, 1)

    Raises:
        NoGroundTruthError: If no reasonable ground truth exists
    """
    scores, labels, n_gt = _ranked(matches)
    n_images = max(len(matches), 1)
    fppi = [0.0]
    miss = [1.0]
    if scores.size:
        tp = np.cumsum(labels == TP)
        fp = np.cumsum(labels == FP)
        # last detection of each run of equal scores
        ends = np.nonzero(np.append(scores[1:] != scores[:-1], True))[0]
        fppi.extend(fp[ends] / n_images)
        miss.extend(1.0 - tp[ends] / n_gt)
    return np.asarray(fppi, dtype=np.float64), np.asarray(miss, dtype=np.float64)


def sample_miss_rates(fppi: np.ndarray, miss: np.ndarray, references: Sequence[float]) -> np.ndarray:
    """Miss rate at the lowest achieved FPPI >= each reference (the last point if none)."""
    sampled = []
    for ref in references:
        above = np.nonzero(fppi >= ref)[0]
        if above.size:
            lowest = fppi[above].min()
            sampled.append(miss[above[fppi[above] == lowest]].min())
        else:
            sampled.append(miss[-1])
    return np.asarray(sampled, dtype=np.float64)


def log_average_miss_rate(matches: Sequence[ImageMatch], cfg: EvalConfig) -> float:
    """
    Geometric mean of the miss rate sampled at the reference FPPI points.

    Args:
        matches: One ImageMatch per image
        cfg: Evaluation protocol

    Returns:
        Log-average miss rate in [0, 1]

    Raises:
        NoGroundTruthError: If no reasonable ground truth exists
    """
    fppi, miss = miss_rate_curve(matches)
    sampled = sample_miss_rates(fppi, miss, cfg.reference_fppi())
    return float(np.exp(np.mean(np.log(np.maximum(sampled, config.MISS_RATE_FLOOR)))))


def average_precision(matches: Sequence[ImageMatch], cfg: EvalConfig) -> float:
    """
    All-point interpolated average precision.

    Raises:
        NoGroundTruthError: If no reasonable ground truth exists
    """
    _, labels, n_gt = _ranked(matches)
    if labels.size == 0:
        return 0.0
    tp = np.cumsum(labels == TP).astype(np.float64)
    fp = np.cumsum(labels == FP).astype(np.float64)
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, np.finfo(np.float64).eps)

    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    # precision envelope
    for i in range(mpre.size - 1, 0, -1):
        mpre[i - 1] = max(mpre[i - 1], mpre[i])
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


# -- reports ----------------------------------------------------------------------

@dataclass
class SplitMetrics:
    log_average_miss_rate: float
    average_precision: float
    n_images: int
    n_gt: int
    n_ignored_gt: int
    n_detections: int
    curve: List[Tuple[float, float]] = field(default_factory=list)


@dataclass
class EvalReport:
    """Metrics per split; a split without frames is ``None`` (absent, not zero)."""
    splits: Dict[str, Optional[SplitMetrics]]
    cfg: EvalConfig
    mode: str = "multimodal"

    def to_text(self) -> str:
        """Flat ``key: value`` block."""
        c = self.cfg
        lines = [
            f"protocol: reasonable min_height={c.min_height:g} max_occlusion={c.max_occlusion:g} "
            f"match_iou={c.match_iou:g}",
            f"fppi_points: {c.fppi_points} log-uniform in [{c.fppi_min:g}, {c.fppi_max:g}]",
            "ap_convention: all-point interpolated",
            f"mode: {self.mode}",
        ]
        for name in SPLIT_NAMES:
            m = self.splits.get(name)
            if m is None:
                lines.append(f"{name}: absent")
                continue
            lines.extend([
                f"{name}.mr: {m.log_average_miss_rate:.6f}",
                f"{name}.ap: {m.average_precision:.6f}",
                f"{name}.images: {m.n_images}",
                f"{name}.gt: {m.n_gt}",
                f"{name}.ignored_gt: {m.n_ignored_gt}",
                f"{name}.detections: {m.n_detections}",
            ])
        return "\n".join(lines) + "\n"

    def curve_csv(self) -> str:
        rows = ["split,fppi,miss_rate"]
        for name in SPLIT_NAMES:
            m = self.splits.get(name)
            if m is not None:
                rows.extend(f"{name},{f!r},{mr!r}" for f, mr in m.curve)
        return "\n".join(rows) + "\n"


def _split_metrics(matches: List[ImageMatch], n_detections: int, cfg: EvalConfig) -> SplitMetrics:
    fppi, miss = miss_rate_curve(matches)
    return SplitMetrics(
        log_average_miss_rate=log_average_miss_rate(matches, cfg),
        average_precision=average_precision(matches, cfg),
        n_images=len(matches),
        n_gt=sum(m.n_gt for m in matches),
        n_ignored_gt=sum(m.n_ignored_gt for m in matches),
        n_detections=n_detections,
        curve=[(float(f), float(r)) for f, r in zip(fppi, miss)],
    )


def split_report(dataset: Sequence, model_outputs: Sequence[Sequence[Detection]], cfg: EvalConfig,
                 mode: str = "multimodal") -> EvalReport:
    """
    Evaluate on all frames and on the day and night subsets.

    Each subset is evaluated from its own frames, never averaged from others.

    Args:
        dataset: Frames with ``boxes`` and ``time_of_day``
        model_outputs: Detections per frame, aligned with ``dataset``
        cfg: Evaluation protocol
        mode: Modality mode recorded in the report

    Returns:
        EvalReport

    Raises:
        NoGroundTruthError: If the whole set has no reasonable ground truth
    """
    if len(dataset) != len(model_outputs):
        raise ValueError(f"{len(dataset)} frames but {len(model_outputs)} detection lists")
    matches = [match_detections(dets, frame.boxes, cfg) for frame, dets in zip(dataset, model_outputs)]
    counts = [len(dets) for dets in model_outputs]

    splits: Dict[str, Optional[SplitMetrics]] = {
        "all": _split_metrics(matches, sum(counts), cfg)}
    for name in ("day", "night"):
        idx = [i for i, frame in enumerate(dataset) if frame.time_of_day == name]
        if not idx:
            splits[name] = None
            continue
        try:
            splits[name] = _split_metrics([matches[i] for i in idx], sum(counts[i] for i in idx), cfg)
        except NoGroundTruthError:
            logger.warning(f"Split '{name}' has {len(idx)} frames but no reasonable ground truth; reported absent")
            splits[name] = None

    report = EvalReport(splits=splits, cfg=cfg, mode=mode)
    summary = ", ".join(f"{k}: MR {v.log_average_miss_rate:.4f} AP {v.average_precision:.4f}"
                        for k, v in splits.items() if v is not None)
    logger.info(f"Evaluation ({mode}) - {summary}")
    return report
