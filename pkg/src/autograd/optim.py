"""
SGD with momentum and the step-decay learning-rate schedule.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from utils.config import config
from utils.errors import ShapeError
from .tensor import Tensor


def lr_schedule(step: int, base_lr: float, period: int = config.DEFAULT_LR_PERIOD,
                decay: float = config.DEFAULT_LR_DECAY) -> float:
    """
    Step decay: divide the base rate by ``decay`` after every ``period`` steps.

    Args:
        step: Zero-based update count
        base_lr: Learning rate at step 0
        period: Steps per decay
        decay: Division factor per period

    Returns:
        Learning rate for this step
    """
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    return base_lr / decay ** (step // period)


@dataclass
class OptimState:
    """Momentum buffers and step counter for one parameter list."""
    base_lr: float = config.DEFAULT_BASE_LR
    momentum: float = config.DEFAULT_MOMENTUM
    lr_period: int = config.DEFAULT_LR_PERIOD
    step: int = 0
    velocity: List[np.ndarray] = field(default_factory=list)

    @property
    def lr(self) -> float:
        return lr_schedule(self.step, self.base_lr, self.lr_period)


def sgd_momentum_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]],
                      state: OptimState) -> float:
    """
    Apply one momentum update in place: v = mu*v + g, p = p - lr*v.

    Args:
        params: Parameters to update
        grads: One gradient per parameter; None is treated as zero
        state: Optimizer state; velocity buffers are created on first use

    Returns:
        The learning rate that was applied

    Raises:
        ShapeError: If a gradient or buffer does not match its parameter
    """
    if len(grads) != len(params):
        raise ShapeError(f"{len(grads)} gradients for {len(params)} parameters")
    if not state.velocity:
        state.velocity = [np.zeros_like(p.data) for p in params]
    elif len(state.velocity) != len(params):
        raise ShapeError(f"Optimizer holds {len(state.velocity)} buffers for {len(params)} parameters")

    lr = state.lr
    for p, g, v in zip(params, grads, state.velocity):
        if v.shape != p.shape:
            raise ShapeError(f"Velocity {v.shape} does not match parameter {p.shape}")
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.shape:
            raise ShapeError(f"Gradient {g.shape} does not match parameter {p.shape}")
        v *= state.momentum
        v += g
        p.data -= lr * v
    state.step += 1
    return lr
