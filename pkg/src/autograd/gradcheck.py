"""
Finite-difference gradient checking at 64-bit precision.
"""
from typing import Callable, List, Sequence

import numpy as np

from utils.logger import logger
from .tensor import Tape, Tensor, backward, paused


def _nudge(data: np.ndarray, eps: float) -> None:
    """Move values sitting on integer lattice points (ReLU kinks, bilinear cell edges) off them."""
    near = np.abs(data - np.round(data)) < 10 * eps
    data[near] += 20 * eps


def grad_check(op: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
               seed: int = 0, max_checks_per_input: int = 64, nudge: bool = True) -> float:
    """
    Compare tape gradients of ``op`` with central differences.

    Inputs are promoted to float64 in place and marked as requiring a gradient,
    so module parameters can be passed alongside data tensors (cast the module
    with ``astype(np.float64)`` first). The scalar under test is a fixed random
    projection of the output.

    Args:
        op: Callable mapping the inputs to a tensor
        inputs: Tensors to differentiate with respect to
        eps: Central-difference step
        seed: Seed for the projection and element sampling
        max_checks_per_input: Elements sampled per input
        nudge: Shift lattice-point values by 20*eps first

    Returns:
        Maximum relative error over all checked inputs
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.data = np.array(t.data, dtype=np.float64)
        if nudge:
            _nudge(t.data, eps)
        t.requires_grad = True
        t.grad = None

    with paused():
        out = op(*inputs)
    projection = rng.uniform(-1.0, 1.0, size=out.shape)

    def objective() -> float:
        with paused():
            return float(np.sum(op(*inputs).data * projection))

    with Tape() as tape:
        out = op(*inputs)
        loss = (out * projection).sum()
    analytic: List[np.ndarray] = backward(tape, loss, wrt=list(inputs))
    analytic = [g.copy() for g in analytic]

    scale = max([float(np.max(np.abs(g))) for g in analytic if g.size] + [1e-12])
    worst = 0.0
    for i, (t, grad) in enumerate(zip(inputs, analytic)):
        flat = t.data.reshape(-1)
        count = min(max_checks_per_input, flat.size)
        picks = rng.choice(flat.size, size=count, replace=False)
        numeric = np.empty(count)
        for j, idx in enumerate(picks):
            saved = flat[idx]
            flat[idx] = saved + eps
            plus = objective()
            flat[idx] = saved - eps
            minus = objective()
            flat[idx] = saved
            numeric[j] = (plus - minus) / (2 * eps)
        chosen = grad.reshape(-1)[picks]
        denom = max(float(np.max(np.abs(chosen))), float(np.max(np.abs(numeric))), 1e-6 * scale, 1e-12)
        err = float(np.max(np.abs(chosen - numeric))) / denom
        logger.debug(f"grad_check input #{i} {t.shape}: relative error {err:.3e}")
        worst = max(worst, err)
    return worst
