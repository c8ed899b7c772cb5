"""
Finite-difference checks over every differentiable block of the detector.
"""
import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from autograd import Tensor, conv2d, deform_conv2d, grad_check, ops
from model.detector import Decoder, DenseOutput, geometry_loss, score_map_loss, total_loss
from model.mufem import GatLayer, GridGraph, MuFEm, fusion_unit, gat_forward, mufem_forward
from model.scofa import ChannelAttention, CrfBlock, IrnnBlock, channel_attention, crf_refine, irnn_sweep
from utils.logger import logger

LINEAR_TOL = 1e-6
NONLINEAR_TOL = 1e-4

Builder = Callable[[np.random.Generator], Tuple[Callable[..., Tensor], List[Tensor]]]


@dataclass
class GradcheckCase:
    name: str
    build: Builder
    tolerance: float = NONLINEAR_TOL


@dataclass
class GradcheckRow:
    name: str
    error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error)) and self.error < self.tolerance


def _t(rng: np.random.Generator, shape, lo: float = -1.0, hi: float = 1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape).astype(np.float64))


def _matmul(rng):
    return ops.matmul, [_t(rng, (3, 4)), _t(rng, (4, 5))]


def _conv2d(rng):
    return (lambda x, w, b: conv2d(x, w, b, stride=1, pad=1),
            [_t(rng, (1, 2, 5, 5)), _t(rng, (3, 2, 3, 3)), _t(rng, (3,))])


def _strided_grouped_conv2d(rng):
    return (lambda x, w: conv2d(x, w, None, stride=2, pad=1, groups=2),
            [_t(rng, (1, 4, 6, 6)), _t(rng, (4, 2, 3, 3))])


def _deform_conv2d(rng):
    return (lambda x, w, off, b: deform_conv2d(x, w, off, b, stride=1, pad=1),
            [_t(rng, (1, 2, 5, 5)), _t(rng, (2, 2, 3, 3)), _t(rng, (1, 18, 5, 5), -0.9, 0.9), _t(rng, (2,))])


def _gat(rng):
    layer = GatLayer(4, 4, rng).astype(np.float64)
    return (lambda h, w, a: gat_forward(GridGraph(h=h, patch_size=2, grid=(2, 3)), layer).h,
            [_t(rng, (6, 4)), layer.W, layer.a])


def _fusion_unit(rng):
    return (lambda f, g: ops.concat(list(fusion_unit(f, g)), axis=1),
            [_t(rng, (1, 3, 4, 4)), _t(rng, (1, 3, 4, 4))])


def _mufem(rng):
    mufem = MuFEm(8, 2, 3, rng).astype(np.float64)
    return (lambda fv, ft, *params: ops.concat(list(mufem_forward(fv, ft, mufem)), axis=1),
            [_t(rng, (1, 8, 6, 6)), _t(rng, (1, 8, 6, 6))] + mufem.parameters())


def _crf(rng):
    block = CrfBlock(3, 3, 0.5, rng).astype(np.float64)
    block.pairwise.weight.data *= 10.0
    return (lambda x, w: crf_refine(x, block), [_t(rng, (1, 3, 4, 4)), block.pairwise.weight])


def _channel_attention(rng):
    att = ChannelAttention(4, rng).astype(np.float64)
    return (lambda x, w, b: channel_attention(x, att), [_t(rng, (1, 4, 3, 3)), att.conv.weight, att.conv.bias])


def _irnn(rng):
    block = IrnnBlock(3, 4, rng).astype(np.float64)
    for b in block.biases:
        b.data[:] = rng.uniform(0.1, 0.3, size=b.shape)
    return (lambda x, *params: irnn_sweep(x, block), [_t(rng, (1, 3, 3, 4))] + block.parameters())


def _decoder(rng):
    decoder = Decoder(6, (4, 3), 2, rng, geometry_scale=4.0).astype(np.float64)

    def run(x, *params):
        dense = decoder(x)
        return ops.concat([dense.score, dense.geometry], axis=1)
    return run, [_t(rng, (1, 6, 3, 3))] + decoder.parameters()


def _geometry_target(rng, shape=(1, 4, 3, 3)) -> Tuple[np.ndarray, np.ndarray]:
    dist = rng.uniform(2.0, 6.0, size=shape)
    geo = dist * np.array([-1, -1, 1, 1]).reshape(1, 4, 1, 1)
    weight = (rng.random((1, 1) + shape[2:]) < 0.6).astype(np.float64)
    weight[0, 0, 0, 0] = 1.0
    return geo, weight


def _score_loss(rng):
    gt = (rng.random((1, 1, 4, 4)) < 0.3).astype(np.float64)
    return (lambda p: score_map_loss(p, gt)), [_t(rng, (1, 1, 4, 4), 0.05, 0.95)]


def _iou_loss(rng):
    geo, weight = _geometry_target(rng)
    pred = geo + rng.uniform(-1.5, 1.5, size=geo.shape)
    return (lambda g: geometry_loss(g, geo, weight)), [Tensor(pred)]


def _total_loss(rng):
    geo, weight = _geometry_target(rng)
    target = DenseOutput(score=Tensor(weight), geometry=Tensor(geo), stride=2)
    pred_geo = Tensor(geo + rng.uniform(-1.5, 1.5, size=geo.shape))
    return (lambda s, g: total_loss(DenseOutput(score=s, geometry=g, stride=2), target, 0.7).total,
            [_t(rng, (1, 1, 3, 3), 0.05, 0.95), pred_geo])


def default_cases() -> List[GradcheckCase]:
    return [
        GradcheckCase("matmul", _matmul, LINEAR_TOL),
        GradcheckCase("conv2d", _conv2d, LINEAR_TOL),
        GradcheckCase("conv2d_strided_grouped", _strided_grouped_conv2d, LINEAR_TOL),
        GradcheckCase("deform_conv2d", _deform_conv2d),
        GradcheckCase("gat_stage", _gat),
        GradcheckCase("fusion_unit", _fusion_unit),
        GradcheckCase("mufem_stage", _mufem),
        GradcheckCase("crf_block", _crf),
        GradcheckCase("channel_attention", _channel_attention),
        GradcheckCase("irnn_sweep", _irnn),
        GradcheckCase("decoder", _decoder),
        GradcheckCase("score_loss", _score_loss),
        GradcheckCase("iou_loss", _iou_loss),
        GradcheckCase("total_loss", _total_loss),
    ]


def run_suite(cases: Optional[Sequence[GradcheckCase]] = None, seed: int = 0) -> List[GradcheckRow]:
    """
    Run each case at a fixed seed.

    Args:
        cases: Cases to run; the full suite by default
        seed: Base seed; case ``i`` uses ``seed + i``

    Returns:
        One GradcheckRow per case
    """
    rows = []
    for i, case in enumerate(cases if cases is not None else default_cases()):
        rng = np.random.default_rng(seed + i)
        start = time.perf_counter()
        op, inputs = case.build(rng)
        try:
            error = grad_check(op, inputs, seed=seed + i)
        except Exception as e:
            logger.error(f"Gradient check '{case.name}' raised: {e}")
            error = float('inf')
        row = GradcheckRow(case.name, error, case.tolerance, time.perf_counter() - start)
        logger.debug(f"gradcheck {case.name}: {error:.3e} (tol {case.tolerance:g})")
        rows.append(row)
    return rows


def format_table(rows: Sequence[GradcheckRow]) -> str:
    width = max([len(r.name) for r in rows] + [5])
    lines = [f"{'block':<{width}}  max_rel_error  tolerance  result"]
    for r in rows:
        lines.append(f"{r.name:<{width}}  {r.error:13.3e}  {r.tolerance:9.0e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines) + "\n"
