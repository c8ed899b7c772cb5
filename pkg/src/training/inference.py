"""
Running a trained detector over frames, with or without the confidence head.
"""
import time
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from autograd import Tensor, paused
from data.scene import SamplePair
from model.confidence import ConfidenceHead, attach_confidence
from model.detector import DenseOutput, Detection, decode_detections, rasterize_gt
from model.network import MultimodalDetector, model_inputs
from utils.config import EvalConfig
from utils.logger import logger


@dataclass
class ConfidenceSample:
    """Model-ready inputs with the dense target the head learns against."""
    rgb: Tensor
    thermal: Tensor
    target: DenseOutput


def confidence_samples(model: MultimodalDetector, pairs: Sequence[SamplePair],
                       mode: str = "multimodal") -> List[ConfidenceSample]:
    stride = model.output_stride
    samples = []
    for pair in pairs:
        rgb, thermal = model_inputs(pair.rgb, pair.thermal, mode)
        target = rasterize_gt(pair.boxes, pair.height // stride, pair.width // stride, stride)
        samples.append(ConfidenceSample(rgb=rgb, thermal=thermal, target=target))
    return samples


def detect_frames(model: MultimodalDetector, pairs: Sequence[SamplePair], eval_cfg: EvalConfig,
                  mode: str = "multimodal", head: Optional[ConfidenceHead] = None,
                  progress_callback: Optional[Callable[[Dict[str, Any]], None]] = None
                  ) -> Tuple[List[List[Detection]], float]:
    """
    Detect pedestrians in every pair.

    Args:
        model: Trained detector
        pairs: Frames to process
        eval_cfg: Score threshold, NMS overlap and detection cap
        mode: Modality mode; unimodal modes zero the other input
        head: Optional confidence head; fills ``Detection.confidence``
        progress_callback: Called after each frame with frame/frames/percentage

    Returns:
        (detections per frame, frames per second)
    """
    results = []
    start = time.perf_counter()
    with paused():
        for i, pair in enumerate(pairs):
            rgb, thermal = model_inputs(pair.rgb, pair.thermal, mode)
            dense, fused = model(rgb, thermal)
            dets = decode_detections(dense, eval_cfg.score_thresh, eval_cfg.nms_iou, eval_cfg.max_detections)
            if head is not None:
                attach_confidence(dets, head(fused))
            results.append(dets)
            if progress_callback:
                progress_callback({'frame': i + 1, 'frames': len(pairs),
                                   'percentage': 100.0 * (i + 1) / len(pairs)})
    elapsed = time.perf_counter() - start
    fps = len(pairs) / elapsed if elapsed > 0 else float('inf')
    logger.info(f"Processed {len(pairs)} frames at {fps:.2f} frames/s ({mode})")
    return results, fps
