"""
Auxiliary confidence head trained to predict the detector's true-class
probability while the detector stays frozen.
"""
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from autograd import Module, OptimState, Tape, Tensor, backward, ops, paused, sgd_momentum_step
from utils.errors import ShapeError
from utils.logger import logger
from .detector import DenseOutput, Detection
from .layers import Conv2d


class ConfidenceHead(Module):
    """3x3 conv, ReLU, bilinear upsampling to the score resolution, 3x3 conv, sigmoid."""

    def __init__(self, in_channels: int, hidden: int, upsample_steps: int, rng: np.random.Generator):
        self.upsample_steps = upsample_steps
        self.conv1 = Conv2d(in_channels, hidden, 3, rng)
        self.conv2 = Conv2d(hidden, 1, 3, rng)

    def forward(self, fused: Tensor) -> Tensor:
        x = ops.relu(self.conv1(fused))
        for _ in range(self.upsample_steps):
            x = ops.upsample2x_bilinear(x)
        return ops.sigmoid(self.conv2(x))


def build_confidence_head(model, hidden: int, seed: int = 0) -> ConfidenceHead:
    """Size a head for a detector's fused features and score resolution."""
    steps = int(round(np.log2(model.feature_stride // model.output_stride)))
    return ConfidenceHead(model.fused_channels, hidden, steps, np.random.default_rng(seed + 7919))


def tcp_target(dense_pred: DenseOutput, gt_dense: DenseOutput) -> Tensor:
    """
    Probability the detector gave the true class: S_P on positives, 1 - S_P elsewhere.
    """
    pred = dense_pred.score.data
    gt = gt_dense.score.data
    if pred.shape != gt.shape:
        raise ShapeError(f"Prediction {pred.shape} and target {gt.shape} differ")
    return Tensor(np.where(gt >= 0.5, pred, 1.0 - pred).astype(pred.dtype))


def train_confidence(head: ConfidenceHead, model, samples: Sequence[Any], epochs: int,
                     lr: float = 0.01, momentum: float = 0.9,
                     progress_callback: Optional[Callable[[Dict[str, Any]], None]] = None,
                     cancel_check: Optional[Callable[[], bool]] = None) -> List[float]:
    """
    Fit the head to the frozen detector's true-class probability by MSE.

    The detector runs with recording paused, so none of its parameters can
    receive a gradient.

    Args:
        head: Confidence head to train
        model: Trained detector (left untouched)
        samples: Items with ``rgb``, ``thermal`` (model-ready tensors) and ``target`` (DenseOutput)
        epochs: Passes over ``samples``
        lr: Learning rate
        momentum: Momentum coefficient
        progress_callback: Called after every epoch with epoch/loss
        cancel_check: Returns True to stop early

    Returns:
        Mean loss per completed epoch
    """
    state = OptimState(base_lr=lr, momentum=momentum, lr_period=10 ** 9)
    params = head.parameters()
    cached = []
    with paused():
        for s in samples:
            dense, fused = model(s.rgb, s.thermal)
            cached.append((fused, tcp_target(dense, s.target)))

    history = []
    for epoch in range(epochs):
        if cancel_check and cancel_check():
            logger.info("Confidence training cancelled")
            break
        total = 0.0
        for fused, target in cached:
            head.zero_grad()
            with Tape() as tape:
                diff = ops.sub(head(fused), target)
                loss = ops.mean(ops.mul(diff, diff))
            grads = backward(tape, loss, wrt=params)
            sgd_momentum_step(params, grads, state)
            total += loss.item()
        mean_loss = total / max(len(cached), 1)
        history.append(mean_loss)
        logger.info(f"Confidence epoch {epoch + 1}/{epochs}: mse={mean_loss:.5f}")
        if progress_callback:
            progress_callback({'epoch': epoch + 1, 'epochs': epochs, 'loss': mean_loss})
    return history


def attach_confidence(detections: List[Detection], confidence_map: Tensor) -> List[Detection]:
    """Copy the head's value at each detection's source pixel into ``confidence``."""
    cmap = confidence_map.data[0, 0]
    for det in detections:
        if det.source is None:
            raise ShapeError("Detection has no source pixel to read confidence from")
        r, c = det.source
        det.confidence = float(cmap[r, c])
    return detections
