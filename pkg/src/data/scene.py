"""
Synthetic paired RGB/thermal pedestrian scenes.

Pedestrians are articulated blobs (head, torso, two legs). In RGB their
contrast scales with illumination; in thermal they are warm signatures that
ignore it. The thermal layer is displaced by a per-frame shift to mimic
imperfect camera calibration.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from model.detector import BoundingBox
from utils.config import SceneSpec
from utils.errors import ConfigError, DegenerateBoxError

PED_ASPECT = 0.4


@dataclass
class SamplePair:
    """
    One aligned (or shifted) image pair with its annotations.

    Attributes:
        rgb: [3, H, W] float32 in [0, 1]
        thermal: [1, H, W] float32 in [0, 1]
        boxes: Ground-truth boxes in RGB image coordinates
        time_of_day: "day" or "night"
        shift: Thermal displacement (dx, dy) in pixels
        frame_id: Six-digit frame name once part of a dataset
        split: train, val or test once part of a dataset
    """
    rgb: np.ndarray
    thermal: np.ndarray
    boxes: List[BoundingBox] = field(default_factory=list)
    time_of_day: str = "day"
    shift: Tuple[float, float] = (0.0, 0.0)
    frame_id: str = ""
    split: str = ""

    @property
    def height(self) -> int:
        return self.rgb.shape[1]

    @property
    def width(self) -> int:
        return self.rgb.shape[2]

    def thermal_boxes(self) -> List[BoundingBox]:
        dx, dy = self.shift
        return [BoundingBox(b.x_t + dx, b.y_t + dy, b.x_b + dx, b.y_b + dy, b.occlusion) for b in self.boxes]


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)


def from_uint8(image: np.ndarray) -> np.ndarray:
    return (image.astype(np.float32) / np.float32(255.0)).astype(np.float32)


def smooth_noise(rng: np.random.Generator, shape: Tuple[int, int], cell: int = 8) -> np.ndarray:
    """Zero-mean, unit-ish texture: coarse random grid, bilinearly enlarged."""
    h, w = shape
    gh, gw = h // cell + 2, w // cell + 2
    coarse = rng.standard_normal((gh, gw))
    ys = (np.arange(h) + 0.5) / cell
    xs = (np.arange(w) + 0.5) / cell
    y0, x0 = np.floor(ys).astype(int), np.floor(xs).astype(int)
    fy, fx = (ys - y0)[:, None], (xs - x0)[None, :]
    top = coarse[y0][:, x0] * (1 - fx) + coarse[y0][:, x0 + 1] * fx
    bottom = coarse[y0 + 1][:, x0] * (1 - fx) + coarse[y0 + 1][:, x0 + 1] * fx
    return top * (1 - fy) + bottom * fy


def silhouette(box: Tuple[float, float, float, float], shape: Tuple[int, int],
               leg_spread: float, arm_swing: float) -> np.ndarray:
    """Boolean pixel mask of an articulated blob filling ``box``."""
    x_t, y_t, x_b, y_b = box
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    bw, bh = x_b - x_t, y_b - y_t
    cx = x_t + bw / 2.0
    # normalised coordinates inside the box
    u = (xx - cx) / (bw / 2.0)
    v = (yy - y_t) / bh
    head = (u / 0.35) ** 2 + ((v - 0.09) / 0.09) ** 2 <= 1.0
    torso = ((u - 0.15 * arm_swing * (v - 0.2)) / 0.75) ** 2 + ((v - 0.37) / 0.2) ** 2 <= 1.0
    legs = np.zeros_like(head)
    for side in (-1.0, 1.0):
        offset = side * (0.3 + 0.25 * leg_spread * (v - 0.55) / 0.45)
        legs |= (np.abs(u - offset) <= 0.25) & (v >= 0.52) & (v <= 1.0)
    return head | torso | legs


def _illuminate(image: np.ndarray, brightness: float, contrast: float) -> np.ndarray:
    mean = image.mean(axis=(1, 2), keepdims=True)
    return brightness * (mean + contrast * (image - mean))


def generate_scene(spec: SceneSpec, seed: Optional[int] = None) -> SamplePair:
    """
    Render one RGB/thermal pair.

    The time of day is drawn first and the layout afterwards, so the same seed
    gives the same pedestrians by day and by night.

    Args:
        spec: Scene parameters
        seed: Overrides ``spec.seed``

    Returns:
        SamplePair quantised to 8-bit levels

    Raises:
        ConfigError: For empty ranges or an unknown time of day
    """
    if spec.time_of_day not in (None, "day", "night"):
        raise ConfigError(f"Unknown time of day {spec.time_of_day!r}")
    if not 0 <= spec.min_pedestrians <= spec.max_pedestrians:
        raise ConfigError("Pedestrian count range is empty")
    if not 0 < spec.min_ped_height <= spec.max_ped_height <= spec.height:
        raise ConfigError("Pedestrian height range is empty or exceeds the image")

    rng = np.random.default_rng(spec.seed if seed is None else seed)
    draw = rng.random()
    time_of_day = spec.time_of_day or ("night" if draw < spec.night_fraction else "day")
    h, w = spec.height, spec.width

    base = rng.uniform(0.3, 0.6, size=(3, 1, 1))
    rgb = base + 0.08 * np.stack([smooth_noise(rng, (h, w)) for _ in range(3)])
    thermal = rng.uniform(0.2, 0.3) + 0.03 * smooth_noise(rng, (h, w))[None]
    shift = tuple(float(v) for v in rng.uniform(-spec.shift_range, spec.shift_range, size=2)) \
        if spec.shift_range > 0 else (0.0, 0.0)

    count = int(rng.integers(spec.min_pedestrians, spec.max_pedestrians + 1))
    people = []
    for _ in range(count):
        ph = float(rng.uniform(spec.min_ped_height, spec.max_ped_height))
        pw = PED_ASPECT * ph
        x_t = float(rng.uniform(0.0, w - pw))
        y_t = float(rng.uniform(0.0, h - ph))
        people.append(((x_t, y_t, x_t + pw, y_t + ph), rng.uniform(-1, 1), rng.uniform(-1, 1)))
    # far (small) pedestrians first so nearer ones paint over them
    people.sort(key=lambda p: p[0][3] - p[0][1])

    boxes = []
    full_masks = []
    visible_masks = []
    for box, spread, swing in people:
        mask = silhouette(box, (h, w), spread, swing)
        tbox = (box[0] + shift[0], box[1] + shift[1], box[2] + shift[0], box[3] + shift[1])
        tmask = silhouette(tbox, (h, w), spread, swing)
        colour = np.where(base[:, 0, 0] > 0.45, rng.uniform(0.05, 0.2, 3), rng.uniform(0.7, 0.9, 3))
        rgb[:, mask] = colour[:, None] + 0.03 * rng.standard_normal((3, int(mask.sum())))
        thermal[0, tmask] = rng.uniform(0.75, 0.9)
        for prev in visible_masks:
            prev &= ~mask
        full_masks.append(mask)
        visible_masks.append(mask.copy())
        boxes.append(box)

    occluded = np.zeros((h, w), dtype=bool)
    for box, _, _ in people:
        if rng.random() >= spec.occlusion_prob:
            continue
        x_t, y_t, x_b, y_b = box
        top = y_t + rng.uniform(0.3, 0.8) * (y_b - y_t)
        left = x_t - rng.uniform(0.0, 0.3) * (x_b - x_t)
        right = x_b + rng.uniform(0.0, 0.3) * (x_b - x_t)
        yy, xx = np.mgrid[0:h, 0:w] + 0.5
        region = (yy >= top) & (yy <= y_b) & (xx >= left) & (xx <= right)
        rgb[:, region] = rng.uniform(0.2, 0.5, size=(3, 1))
        occluded |= region
        dx, dy = shift
        tregion = (yy >= top + dy) & (yy <= y_b + dy) & (xx >= left + dx) & (xx <= right + dx)
        thermal[0, tregion] = rng.uniform(0.25, 0.35)

    annotated = []
    for (x_t, y_t, x_b, y_b), full, vis in zip(boxes, full_masks, visible_masks):
        total = full.sum()
        occ = 1.0 - float((vis & ~occluded).sum() / total) if total else 1.0
        try:
            annotated.append(BoundingBox(x_t, y_t, x_b, y_b, occlusion=round(occ, 4)))
        except DegenerateBoxError:
            continue

    if time_of_day == "night":
        rgb = _illuminate(rgb, spec.night_brightness, spec.night_contrast)
    else:
        rgb = _illuminate(rgb, spec.day_brightness, 1.0)
    rgb = rgb + spec.rgb_noise * rng.standard_normal(rgb.shape)
    thermal = thermal + spec.thermal_noise * rng.standard_normal(thermal.shape)

    return SamplePair(
        rgb=from_uint8(to_uint8(rgb)),
        thermal=from_uint8(to_uint8(thermal)),
        boxes=annotated,
        time_of_day=time_of_day,
        shift=shift,
    )
