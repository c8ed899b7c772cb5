"""
Training-time sample transforms: standard augmentation, mixup and the
mask-and-predict curriculum.
"""
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from model.detector import BoundingBox
from utils.config import config
from utils.errors import ShapeError
from .scene import SamplePair, smooth_noise

MIN_BOX_SIDE = 2.0


@dataclass
class TrainingExample:
    """Images plus dense targets; what mixup combines and the trainer consumes."""
    rgb: np.ndarray
    thermal: np.ndarray
    score: np.ndarray
    geometry: np.ndarray
    boxes: List[BoundingBox] = field(default_factory=list)
    shift: Tuple[float, float] = (0.0, 0.0)


# -- standard augmentation ----------------------------------------------------

def _rescale(image: np.ndarray, s: float) -> np.ndarray:
    """Zoom [C, H, W] by ``s`` about the image centre, clamping at the edges."""
    if s == 1.0:
        return image.copy()
    _, h, w = image.shape
    src_y = (np.arange(h) + 0.5 - h / 2.0) / s + h / 2.0 - 0.5
    src_x = (np.arange(w) + 0.5 - w / 2.0) / s + w / 2.0 - 0.5
    src_y = np.clip(src_y, 0, h - 1)
    src_x = np.clip(src_x, 0, w - 1)
    y0 = np.minimum(np.floor(src_y).astype(int), h - 2) if h > 1 else np.zeros(h, int)
    x0 = np.minimum(np.floor(src_x).astype(int), w - 2) if w > 1 else np.zeros(w, int)
    fy = (src_y - y0)[:, None]
    fx = (src_x - x0)[None, :]
    y1, x1 = np.minimum(y0 + 1, h - 1), np.minimum(x0 + 1, w - 1)
    top = image[:, y0][:, :, x0] * (1 - fx) + image[:, y0][:, :, x1] * fx
    bottom = image[:, y1][:, :, x0] * (1 - fx) + image[:, y1][:, :, x1] * fx
    return (top * (1 - fy) + bottom * fy).astype(image.dtype)


def _rescale_boxes(boxes: List[BoundingBox], s: float, h: int, w: int) -> List[BoundingBox]:
    out = []
    for b in boxes:
        x_t = np.clip((b.x_t - w / 2.0) * s + w / 2.0, 0, w)
        x_b = np.clip((b.x_b - w / 2.0) * s + w / 2.0, 0, w)
        y_t = np.clip((b.y_t - h / 2.0) * s + h / 2.0, 0, h)
        y_b = np.clip((b.y_b - h / 2.0) * s + h / 2.0, 0, h)
        if x_b - x_t < MIN_BOX_SIDE or y_b - y_t < MIN_BOX_SIDE:
            continue
        out.append(BoundingBox(float(x_t), float(y_t), float(x_b), float(y_b), b.occlusion))
    return out


def flip_pair(pair: SamplePair) -> SamplePair:
    """Mirror both modalities, the boxes and the thermal shift horizontally."""
    w = pair.width
    boxes = [BoundingBox(w - b.x_b, b.y_t, w - b.x_t, b.y_b, b.occlusion) for b in pair.boxes]
    return replace(pair, rgb=pair.rgb[:, :, ::-1].copy(), thermal=pair.thermal[:, :, ::-1].copy(),
                   boxes=boxes, shift=(-pair.shift[0], pair.shift[1]))


def _box_blur(image: np.ndarray) -> np.ndarray:
    padded = np.pad(image, ((0, 0), (1, 1), (1, 1)), mode='edge')
    return sliding_window_view(padded, (3, 3), axis=(1, 2)).mean(axis=(-2, -1)).astype(image.dtype)


def simple_augment(pair: SamplePair, rng: np.random.Generator, scale: Optional[float] = None,
                   flip: Optional[bool] = None, effects: bool = True,
                   flip_prob: float = config.DEFAULT_FLIP_PROB, effect_prob: float = 0.3,
                   scale_range: Tuple[float, float] = config.DEFAULT_SCALE_RANGE) -> SamplePair:
    """
    Random scale, horizontal flip and photometric effects.

    The geometric transform is shared by both modalities. Boxes shorter than two
    pixels on a side after scaling are dropped.

    Args:
        pair: Input sample
        rng: Random generator
        scale: Fixed scale instead of a draw from ``scale_range``
        flip: Force the flip decision
        effects: Allow contrast jitter, Gaussian noise and box blur
        flip_prob: Flip probability when ``flip`` is None
        effect_prob: Probability of each photometric effect

    Returns:
        New SamplePair
    """
    s = float(rng.uniform(*scale_range)) if scale is None else float(scale)
    do_flip = bool(rng.random() < flip_prob) if flip is None else flip
    h, w = pair.height, pair.width
    out = replace(pair, rgb=_rescale(pair.rgb, s), thermal=_rescale(pair.thermal, s),
                  boxes=_rescale_boxes(pair.boxes, s, h, w),
                  shift=(pair.shift[0] * s, pair.shift[1] * s))
    if do_flip:
        out = flip_pair(out)
    if not effects:
        return out

    rgb, thermal = out.rgb, out.thermal
    if rng.random() < effect_prob:
        factor = rng.uniform(0.7, 1.3)
        rgb = rgb.mean() + factor * (rgb - rgb.mean())
        thermal = thermal.mean() + factor * (thermal - thermal.mean())
    if rng.random() < effect_prob:
        sigma = rng.uniform(0.0, 0.03)
        rgb = rgb + sigma * rng.standard_normal(rgb.shape)
        thermal = thermal + sigma * rng.standard_normal(thermal.shape)
    if rng.random() < effect_prob:
        rgb, thermal = _box_blur(rgb), _box_blur(thermal)
    return replace(out, rgb=np.clip(rgb, 0, 1).astype(np.float32),
                   thermal=np.clip(thermal, 0, 1).astype(np.float32))


# -- mixup ---------------------------------------------------------------------

def mixup(a: TrainingExample, b: TrainingExample, omega: Optional[float] = None,
          rng: Optional[np.random.Generator] = None, alpha: float = 0.2) -> TrainingExample:
    """
    Convex combination omega*a + (1 - omega)*b of images and dense targets.

    Args:
        a: First example
        b: Second example
        omega: Mixing weight in [0, 1]; drawn from Beta(alpha, alpha) when None
        rng: Generator for the draw; required when omega is None
        alpha: Beta parameter

    Returns:
        Mixed example carrying the boxes of both inputs
    """
    for name in ("rgb", "thermal", "score", "geometry"):
        if getattr(a, name).shape != getattr(b, name).shape:
            raise ShapeError(f"mixup: {name} shapes {getattr(a, name).shape} and {getattr(b, name).shape} differ")
    if omega is None:
        if rng is None:
            raise ValueError("mixup needs a seeded generator to draw omega")
        omega = float(rng.beta(alpha, alpha))
    if not 0.0 <= omega <= 1.0:
        raise ValueError(f"omega must lie in [0, 1], got {omega}")
    if omega == 1.0:
        return replace(a, boxes=list(a.boxes) + list(b.boxes))
    if omega == 0.0:
        return replace(b, boxes=list(a.boxes) + list(b.boxes))

    def mix(x, y):
        return (omega * x + (1.0 - omega) * y).astype(np.float32)

    return TrainingExample(rgb=mix(a.rgb, b.rgb), thermal=mix(a.thermal, b.thermal),
                           score=mix(a.score, b.score), geometry=mix(a.geometry, b.geometry),
                           boxes=list(a.boxes) + list(b.boxes), shift=a.shift)


# -- curriculum ------------------------------------------------------------------

@dataclass
class CurriculumSchedule:
    """Mask fraction rising linearly to ``max_fraction`` over the first ``ramp`` of training."""
    max_fraction: float = config.DEFAULT_CURRICULUM_MAX
    ramp: float = 0.8

    def __call__(self, progress: float) -> float:
        progress = min(max(progress, 0.0), 1.0)
        return self.max_fraction * min(progress / self.ramp, 1.0)


def _pixel_span(lo: float, hi: float, limit: int) -> Tuple[int, int]:
    """Pixels whose centres fall inside [lo, hi]."""
    start = max(int(np.ceil(lo - 0.5)), 0)
    stop = min(int(np.floor(hi - 0.5)) + 1, limit)
    return start, stop


def _mask_rectangle(box: BoundingBox, fraction: float, h: int, w: int,
                    rng: np.random.Generator) -> Optional[Tuple[int, int, int, int]]:
    r0, r1 = _pixel_span(box.y_t, box.y_b, h)
    c0, c1 = _pixel_span(box.x_t, box.x_b, w)
    bh, bw = r1 - r0, c1 - c0
    if bh <= 0 or bw <= 0:
        return None
    target = fraction * bh * bw
    # closest achievable pixel area, preferring the box aspect ratio on ties
    best = None
    for rh in range(1, bh + 1):
        rw = int(min(max(round(target / rh), 1), bw))
        key = (abs(rh * rw - target), abs(rh / bh - rw / bw))
        if best is None or key < best[0]:
            best = (key, rh, rw)
    _, rh, rw = best
    top = r0 + int(rng.integers(0, bh - rh + 1))
    left = c0 + int(rng.integers(0, bw - rw + 1))
    return top, top + rh, left, left + rw


def _texture_like(image: np.ndarray, keep: np.ndarray, shape: Tuple[int, int],
                  rng: np.random.Generator) -> np.ndarray:
    """Background-statistics texture per channel, [C, *shape]."""
    pixels = image[:, keep] if keep.any() else image.reshape(image.shape[0], -1)
    mean = pixels.mean(axis=1)[:, None, None]
    std = pixels.std(axis=1)[:, None, None]
    noise = np.stack([smooth_noise(rng, shape, cell=4) for _ in range(image.shape[0])])
    return np.clip(mean + std * noise, 0, 1).astype(image.dtype)


def curriculum_mask(sample, schedule: CurriculumSchedule, progress: float, rng: np.random.Generator,
                    return_regions: bool = False):
    """
    Hide a random rectangle covering the scheduled fraction of every box.

    Both modalities are filled with background texture (the thermal rectangle
    follows the sample's shift); boxes and targets are left untouched.

    Args:
        sample: SamplePair or TrainingExample
        schedule: Fraction as a function of progress
        progress: Training progress in [0, 1]
        rng: Random generator
        return_regions: Also return the masked (row0, row1, col0, col1) per box

    Returns:
        The masked sample, or (sample, regions) when ``return_regions``
    """
    fraction = schedule(progress)
    regions = []
    if fraction <= 0.0 or not sample.boxes:
        return (replace(sample), regions) if return_regions else replace(sample)

    rgb, thermal = sample.rgb.copy(), sample.thermal.copy()
    h, w = rgb.shape[1:]
    outside = np.ones((h, w), dtype=bool)
    for box in sample.boxes:
        r0, r1 = _pixel_span(box.y_t, box.y_b, h)
        c0, c1 = _pixel_span(box.x_t, box.x_b, w)
        outside[r0:r1, c0:c1] = False
    fill_rgb = _texture_like(rgb, outside, (h, w), rng)
    fill_thermal = _texture_like(thermal, outside, (h, w), rng)
    dx, dy = int(round(sample.shift[0])), int(round(sample.shift[1]))
    for box in sample.boxes:
        rect = _mask_rectangle(box, fraction, h, w, rng)
        regions.append(rect)
        if rect is None:
            continue
        top, bottom, left, right = rect
        rgb[:, top:bottom, left:right] = fill_rgb[:, top:bottom, left:right]
        tt, tb = np.clip([top + dy, bottom + dy], 0, h)
        tl, tr = np.clip([left + dx, right + dx], 0, w)
        thermal[:, tt:tb, tl:tr] = fill_thermal[:, tt:tb, tl:tr]
    masked = replace(sample, rgb=rgb, thermal=thermal)
    return (masked, regions) if return_regions else masked


def box_pixel_area(box: BoundingBox, h: int, w: int) -> int:
    """Number of pixels whose centres fall inside ``box``."""
    r0, r1 = _pixel_span(box.y_t, box.y_b, h)
    c0, c1 = _pixel_span(box.x_t, box.x_b, w)
    return max(r1 - r0, 0) * max(c1 - c0, 0)
