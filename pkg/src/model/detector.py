"""
Single-stage dense decoder, its losses, ground-truth rasterisation and
decoding of dense outputs into detections.
"""
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from autograd import Module, Tensor, ops
from utils.config import config
from utils.errors import ConfigError, DegenerateBoxError, FormatError
from utils.logger import logger
from .layers import Conv2d

SHRINK = 0.3


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in pixels; ``occlusion`` is the hidden fraction in [0, 1]."""
    x_t: float
    y_t: float
    x_b: float
    y_b: float
    occlusion: float = 0.0

    def __post_init__(self):
        if not (self.x_t < self.x_b and self.y_t < self.y_b):
            raise DegenerateBoxError(
                f"Box ({self.x_t}, {self.y_t}, {self.x_b}, {self.y_b}) has no area")

    @property
    def width(self) -> float:
        return self.x_b - self.x_t

    @property
    def height(self) -> float:
        return self.y_b - self.y_t

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x_t + self.x_b) / 2.0, (self.y_t + self.y_b) / 2.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x_t, self.y_t, self.x_b, self.y_b], dtype=np.float64)

    def scaled(self, s: float) -> "BoundingBox":
        return replace(self, x_t=self.x_t * s, y_t=self.y_t * s, x_b=self.x_b * s, y_b=self.y_b * s)

    def iou(self, other: "BoundingBox") -> float:
        return float(box_iou(self.as_array()[None], other.as_array()[None])[0, 0])


@dataclass
class Detection:
    """
    One detected pedestrian.

    ``source`` is the (row, col) of the output pixel that produced the box.
    """
    box: BoundingBox
    score: float
    confidence: Optional[float] = None
    source: Optional[Tuple[int, int]] = None


@dataclass
class DenseOutput:
    """Per-pixel score [N,1,Ho,Wo] and corner offsets [N,4,Ho,Wo] at a given stride."""
    score: Tensor
    geometry: Tensor
    stride: int


@dataclass
class LossTerms:
    loss_score: Tensor
    loss_geo: Tensor
    lambda_g: float
    total: Tensor

    def as_floats(self) -> Tuple[float, float, float]:
        return self.total.item(), self.loss_score.item(), self.loss_geo.item()


def box_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of [n, 4] and [m, 4] corner boxes."""
    x1 = np.maximum(a[:, None, 0], b[None, :, 0])
    y1 = np.maximum(a[:, None, 1], b[None, :, 1])
    x2 = np.minimum(a[:, None, 2], b[None, :, 2])
    y2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(x2 - x1, 0, None) * np.clip(y2 - y1, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


# -- decoder -------------------------------------------------------------------

class Decoder(Module):
    """
    Upsampling decoder: a 1x1 entry conv to the first width, then per further
    width a 2x bilinear upsample and 3x3 conv, then score and geometry heads.
    """

    def __init__(self, in_channels: int, channels: Sequence[int], encoder_stride: int,
                 rng: np.random.Generator, geometry_scale: float = 16.0):
        channels = tuple(channels)
        if not channels:
            raise ConfigError("Decoder needs at least one channel width")
        n_up = len(channels) - 1
        if encoder_stride % (2 ** n_up):
            raise ConfigError(f"{n_up} upsampling stages do not divide encoder stride {encoder_stride}")
        self.stride = encoder_stride // (2 ** n_up)
        self.geometry_scale = geometry_scale
        self.entry = Conv2d(in_channels, channels[0], 1, rng)
        self.stages = [Conv2d(c_in, c_out, 3, rng) for c_in, c_out in zip(channels[:-1], channels[1:])]
        self.score_head = Conv2d(channels[-1], 1, 1, rng)
        self.geometry_head = Conv2d(channels[-1], 4, 1, rng)

    def forward(self, fused: Tensor) -> DenseOutput:
        return decode_features(fused, self)


def decode_features(fused: Tensor, decoder: Decoder) -> DenseOutput:
    x = ops.relu(decoder.entry(fused))
    for conv in decoder.stages:
        x = ops.relu(conv(ops.upsample2x_bilinear(x)))
    score = ops.sigmoid(decoder.score_head(x))
    geometry = ops.mul(decoder.geometry_head(x), decoder.geometry_scale)
    return DenseOutput(score=score, geometry=geometry, stride=decoder.stride)


def pixel_centers(height: int, width: int, stride: int) -> Tuple[np.ndarray, np.ndarray]:
    """Image-space (x, y) of every output pixel, each [height, width]."""
    xs = np.arange(width) * stride + stride / 2.0
    ys = np.arange(height) * stride + stride / 2.0
    return np.meshgrid(xs, ys)


# -- losses --------------------------------------------------------------------

def score_map_loss(s_pred: Tensor, s_gt, beta: Optional[float] = None) -> Tensor:
    """
    Class-balanced cross entropy over every pixel.

    Args:
        s_pred: Predicted score map in (0, 1)
        s_gt: Ground-truth map in {0, 1} (fractional under mixup)
        beta: Positive-class weight; by default one minus the positive fraction

    Returns:
        Scalar tensor
    """
    gt = s_gt.data if isinstance(s_gt, Tensor) else np.asarray(s_gt, dtype=s_pred.dtype)
    if gt.shape != s_pred.shape:
        raise ConfigError(f"Score map {s_pred.shape} and target {gt.shape} differ")
    if beta is None:
        beta = 1.0 - float(gt.mean())
    eps = config.LOG_EPS
    p = ops.clamp(s_pred, eps, 1.0 - eps)
    pos = ops.mul(ops.log(p), gt * beta)
    neg = ops.mul(ops.log(ops.sub(1.0, p)), (1.0 - gt) * (1.0 - beta))
    return ops.mul(ops.mean(ops.add(pos, neg)), -1.0)


def iou_loss(pred: BoundingBox, gt: BoundingBox) -> float:
    """-log IoU of two boxes with the IoU clamped below at 1e-6."""
    return float(-np.log(max(pred.iou(gt), config.IOU_FLOOR)))


def _distances(geometry) -> List:
    """Corner offsets (dx_t, dy_t, dx_b, dy_b) to non-negative side distances."""
    if isinstance(geometry, Tensor):
        parts = [ops.index(geometry, (slice(None), slice(k, k + 1))) for k in range(4)]
        return [ops.mul(parts[0], -1.0), ops.mul(parts[1], -1.0), parts[2], parts[3]]
    return [-geometry[:, 0:1], -geometry[:, 1:2], geometry[:, 2:3], geometry[:, 3:4]]


def geometry_loss(geo_pred: Tensor, geo_gt, weight) -> Tensor:
    """
    Dense -log IoU averaged over positive pixels, weighted by the target score.
    """
    gt = np.asarray(geo_gt.data if isinstance(geo_gt, Tensor) else geo_gt, dtype=geo_pred.dtype)
    w = np.asarray(weight.data if isinstance(weight, Tensor) else weight, dtype=geo_pred.dtype)
    # negative pixels get a unit box so every union stays positive; their weight is zero
    gt = np.where(w > 0, gt, np.array([-1, -1, 1, 1], dtype=gt.dtype).reshape(1, 4, 1, 1))
    lp, tp, rp, bp = _distances(geo_pred)
    lg, tg, rg, bg = _distances(gt)
    area_p = ops.mul(ops.relu(ops.add(lp, rp)), ops.relu(ops.add(tp, bp)))
    area_g = (lg + rg) * (tg + bg)
    w_i = ops.relu(ops.add(ops.minimum(lp, lg), ops.minimum(rp, rg)))
    h_i = ops.relu(ops.add(ops.minimum(tp, tg), ops.minimum(bp, bg)))
    inter = ops.mul(w_i, h_i)
    union = ops.sub(ops.add(area_p, area_g), inter)
    iou = ops.clamp(ops.div(inter, union), config.IOU_FLOOR, 1.0)
    per_pixel = ops.mul(ops.log(iou), -1.0)
    total_w = float(w.sum())
    if total_w <= 0:
        total_w = 1.0
    return ops.div(ops.sum(ops.mul(per_pixel, w)), total_w)


def total_loss(dense: DenseOutput, gt_dense: DenseOutput, lambda_g: float) -> LossTerms:
    """
    L = L_s + lambda_g * L_g.

    Raises:
        ConfigError: If lambda_g is negative
    """
    if lambda_g < 0:
        raise ConfigError(f"lambda_g must be >= 0, got {lambda_g}")
    loss_s = score_map_loss(dense.score, gt_dense.score)
    loss_g = geometry_loss(dense.geometry, gt_dense.geometry, gt_dense.score)
    total = loss_s if lambda_g == 0 else ops.add(loss_s, ops.mul(loss_g, lambda_g))
    return LossTerms(loss_score=loss_s, loss_geo=loss_g, lambda_g=lambda_g, total=total)


# -- ground truth ----------------------------------------------------------------

def rasterize_gt(boxes: Sequence[BoundingBox], height: int, width: int, stride: int,
                 shrink: float = SHRINK) -> DenseOutput:
    """
    Build dense targets for one image.

    Pixel centres inside a box shrunk by ``shrink`` of its size on each side are
    positive and carry offsets to the unshrunk corners. Where boxes overlap the
    smaller one wins. Boxes whose shrunk core holds no pixel centre are skipped
    with a warning.

    Args:
        boxes: Ground-truth boxes in image pixels
        height: Output map height
        width: Output map width
        stride: Image pixels per output pixel

    Returns:
        DenseOutput of constant tensors
    """
    score = np.zeros((1, 1, height, width), dtype=np.float32)
    geometry = np.zeros((1, 4, height, width), dtype=np.float32)
    cx, cy = pixel_centers(height, width, stride)
    for box in sorted(boxes, key=lambda b: b.area, reverse=True):
        try:
            inside = _shrunk_core(box, cx, cy, shrink)
        except DegenerateBoxError as e:
            logger.warning(f"Skipping ground-truth box: {e}")
            continue
        score[0, 0][inside] = 1.0
        geometry[0, 0][inside] = (box.x_t - cx)[inside]
        geometry[0, 1][inside] = (box.y_t - cy)[inside]
        geometry[0, 2][inside] = (box.x_b - cx)[inside]
        geometry[0, 3][inside] = (box.y_b - cy)[inside]
    return DenseOutput(score=Tensor(score), geometry=Tensor(geometry), stride=stride)


def _shrunk_core(box: BoundingBox, cx: np.ndarray, cy: np.ndarray, shrink: float) -> np.ndarray:
    dx, dy = shrink * box.width, shrink * box.height
    inside = (cx >= box.x_t + dx) & (cx <= box.x_b - dx) & (cy >= box.y_t + dy) & (cy <= box.y_b - dy)
    if not inside.any():
        raise DegenerateBoxError(
            f"box ({box.x_t:.1f}, {box.y_t:.1f}, {box.x_b:.1f}, {box.y_b:.1f}) covers no output pixel after shrinking")
    return inside


# -- decoding --------------------------------------------------------------------

def nms(boxes: np.ndarray, scores: np.ndarray, iou_thresh: float) -> np.ndarray:
    """
    Greedy non-maximum suppression.

    Returns:
        Indices of kept boxes in descending score order
    """
    order = np.argsort(-scores, kind="stable")
    keep = []
    while order.size:
        best = order[0]
        keep.append(best)
        if order.size == 1:
            break
        overlaps = box_iou(boxes[best][None], boxes[order[1:]])[0]
        order = order[1:][overlaps < iou_thresh]
    return np.asarray(keep, dtype=np.int64)


def decode_detections(dense: DenseOutput, score_thresh: float, nms_iou: float,
                      max_detections: Optional[int] = None) -> List[Detection]:
    """
    Threshold, decode and suppress the first image of a dense output.

    Args:
        dense: Model output
        score_thresh: Minimum pixel score
        nms_iou: Suppression overlap
        max_detections: Optional cap on the number returned

    Returns:
        Detections sorted by descending score
    """
    score = dense.score.data[0, 0]
    geo = dense.geometry.data[0]
    cx, cy = pixel_centers(score.shape[0], score.shape[1], dense.stride)
    rows, cols = np.nonzero(score >= score_thresh)
    if rows.size == 0:
        return []
    boxes = np.stack([cx[rows, cols] + geo[0, rows, cols], cy[rows, cols] + geo[1, rows, cols],
                      cx[rows, cols] + geo[2, rows, cols], cy[rows, cols] + geo[3, rows, cols]],
                     axis=1).astype(np.float64)
    scores = score[rows, cols].astype(np.float64)
    valid = (boxes[:, 0] < boxes[:, 2]) & (boxes[:, 1] < boxes[:, 3]) & np.all(np.isfinite(boxes), axis=1)
    boxes, scores, rows, cols = boxes[valid], scores[valid], rows[valid], cols[valid]
    keep = nms(boxes, scores, nms_iou)
    if max_detections is not None:
        keep = keep[:max_detections]
    return [Detection(box=BoundingBox(*(float(v) for v in boxes[k])), score=float(scores[k]),
                      source=(int(rows[k]), int(cols[k]))) for k in keep]


def format_detection(frame_id: str, det: Detection) -> str:
    """``frame_id score x_t y_t x_b y_b [confidence]`` with four decimals."""
    b = det.box
    fields = [frame_id] + [f"{v:.4f}" for v in (det.score, b.x_t, b.y_t, b.x_b, b.y_b)]
    if det.confidence is not None:
        fields.append(f"{det.confidence:.4f}")
    return " ".join(fields)


def parse_detection(line: str) -> Tuple[str, Detection]:
    """
    Inverse of ``format_detection``.

    Raises:
        FormatError: On a malformed line
    """
    parts = line.split()
    if len(parts) not in (6, 7):
        raise FormatError(f"Detection line needs 6 or 7 fields, got {len(parts)}: {line!r}")
    try:
        values = [float(p) for p in parts[1:]]
        box = BoundingBox(*values[1:5])
    except (ValueError, DegenerateBoxError) as e:
        raise FormatError(f"Bad detection line {line!r}: {e}")
    confidence = values[5] if len(values) == 6 else None
    return parts[0], Detection(box=box, score=values[0], confidence=confidence)
