"""
Dataset directory I/O.

Layout:
    rgb/NNNNNN.ppm       binary PPM, maxval 255
    thermal/NNNNNN.pgm   binary PGM, maxval 255
    ann/NNNNNN.txt       one "person x_t y_t x_b y_b occ" line per box
    meta.json            per-frame split, time of day and shift, plus the scene parameters
"""
import dataclasses
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from model.detector import BoundingBox
from utils.errors import DegenerateBoxError, FormatError, IoError, MissingModalityError
from utils.logger import logger
from .scene import SamplePair, from_uint8, to_uint8

SPLITS = ("train", "val", "test")


def frame_name(index: int) -> str:
    return f"{index:06d}"


def write_pnm(path: Path, image: np.ndarray) -> None:
    """Write [3,H,W] as P6 or [1,H,W] as P5."""
    channels, h, w = image.shape
    magic = {3: b"P6", 1: b"P5"}.get(channels)
    if magic is None:
        raise FormatError(f"Cannot store {channels}-channel image as PNM", str(path))
    pixels = to_uint8(image).transpose(1, 2, 0)
    with open(path, 'wb') as f:
        f.write(magic + b"\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(pixels).tobytes())


def read_pnm(path: Path, channels: int) -> np.ndarray:
    """
    Read a binary PPM (channels=3) or PGM (channels=1) as float32 [C,H,W].

    Raises:
        FormatError: With the byte offset of the first bad token
    """
    blob = Path(path).read_bytes()
    expected = b"P6" if channels == 3 else b"P5"
    pos = 0
    tokens: List[Tuple[bytes, int]] = []
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("Truncated PNM header", str(path), start)
        tokens.append((blob[start:pos], start))
    pos += 1  # single whitespace before the raster

    (magic, _), (w_tok, w_at), (h_tok, h_at), (max_tok, max_at) = tokens
    if magic != expected:
        raise FormatError(f"Expected {expected.decode()} image, found {magic[:8]!r}", str(path), 0)
    try:
        w, h, maxval = int(w_tok), int(h_tok), int(max_tok)
    except ValueError:
        raise FormatError("Non-numeric PNM header field", str(path), w_at)
    if maxval != 255:
        raise FormatError(f"Only maxval 255 is supported, got {maxval}", str(path), max_at)
    size = w * h * channels
    if len(blob) - pos < size:
        raise FormatError(f"Raster holds {len(blob) - pos} bytes, expected {size}", str(path), pos)
    raster = np.frombuffer(blob, dtype=np.uint8, count=size, offset=pos).reshape(h, w, channels)
    return from_uint8(raster.transpose(2, 0, 1).copy())


def format_annotations(boxes: Sequence[BoundingBox]) -> str:
    return "".join(f"person {b.x_t!r} {b.y_t!r} {b.x_b!r} {b.y_b!r} {b.occlusion!r}\n" for b in boxes)


def parse_annotations(text: str, path: str, frame: str) -> List[BoundingBox]:
    """
    Parse annotation lines.

    Raises:
        FormatError: Naming the frame, with the byte offset of the bad line
    """
    boxes = []
    offset = 0
    for line in text.splitlines(keepends=True):
        fields = line.split()
        if fields:
            if len(fields) != 6 or fields[0] != "person":
                raise FormatError(f"Frame {frame}: expected 'person x_t y_t x_b y_b occ'", path, offset)
            try:
                x_t, y_t, x_b, y_b, occ = (float(v) for v in fields[1:])
            except ValueError:
                raise FormatError(f"Frame {frame}: non-numeric annotation field", path, offset)
            if not 0.0 <= occ <= 1.0:
                raise FormatError(f"Frame {frame}: occlusion {occ} outside [0, 1]", path, offset)
            try:
                boxes.append(BoundingBox(x_t, y_t, x_b, y_b, occ))
            except DegenerateBoxError as e:
                raise FormatError(f"Frame {frame}: {e}", path, offset)
        offset += len(line.encode('utf-8'))
    return boxes


def save_dataset(pairs: Sequence[SamplePair], dir_path: str,
                 scene: Optional[Dict[str, Any]] = None) -> None:
    """
    Write pairs to a dataset directory; frame ids default to their position.

    Raises:
        IoError: If anything cannot be written
    """
    root = Path(dir_path)
    frames = []
    try:
        for sub in ("rgb", "thermal", "ann"):
            (root / sub).mkdir(parents=True, exist_ok=True)
        for i, pair in enumerate(pairs):
            name = pair.frame_id or frame_name(i)
            write_pnm(root / "rgb" / f"{name}.ppm", pair.rgb)
            write_pnm(root / "thermal" / f"{name}.pgm", pair.thermal)
            (root / "ann" / f"{name}.txt").write_text(format_annotations(pair.boxes), encoding='utf-8')
            frames.append({"id": name, "split": pair.split or "train", "time_of_day": pair.time_of_day,
                           "shift": [pair.shift[0], pair.shift[1]]})
        meta = {"frames": frames, "scene": scene or {}}
        (root / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding='utf-8')
    except OSError as e:
        raise IoError(f"Cannot write dataset to {root}: {e}")
    logger.info(f"Dataset written: {root} ({len(frames)} frames)")


def load_meta(dir_path: str) -> Dict[str, Any]:
    path = Path(dir_path) / "meta.json"
    try:
        return json.loads(path.read_text(encoding='utf-8'))
    except FileNotFoundError:
        raise IoError(f"Dataset has no meta.json: {dir_path}")
    except json.JSONDecodeError as e:
        raise FormatError(f"meta.json is not valid JSON: {e.msg}", str(path), e.pos)


def load_dataset(dir_path: str, split: Optional[str] = None) -> List[SamplePair]:
    """
    Read every frame (or one split) of a dataset directory.

    Raises:
        MissingModalityError: If a frame lacks its RGB or thermal image
        FormatError: On malformed images, annotations or metadata
    """
    root = Path(dir_path)
    meta = load_meta(dir_path)
    pairs = []
    for entry in meta.get("frames", []):
        try:
            name, frame_split = entry["id"], entry["split"]
            time_of_day, shift = entry["time_of_day"], entry["shift"]
        except (KeyError, TypeError):
            raise FormatError(f"meta.json frame entry is incomplete: {entry!r}", str(root / "meta.json"))
        if split is not None and frame_split != split:
            continue
        rgb_path = root / "rgb" / f"{name}.ppm"
        thermal_path = root / "thermal" / f"{name}.pgm"
        for path, label in ((rgb_path, "RGB"), (thermal_path, "thermal")):
            if not path.is_file():
                raise MissingModalityError(f"Frame {name} has no {label} image ({path})")
        ann_path = root / "ann" / f"{name}.txt"
        try:
            text = ann_path.read_text(encoding='utf-8')
        except FileNotFoundError:
            raise FormatError(f"Frame {name} has no annotation file", str(ann_path))
        rgb = read_pnm(rgb_path, 3)
        thermal = read_pnm(thermal_path, 1)
        if rgb.shape[1:] != thermal.shape[1:]:
            raise FormatError(f"Frame {name}: RGB {rgb.shape[1:]} and thermal {thermal.shape[1:]} differ",
                              str(thermal_path))
        pairs.append(SamplePair(rgb=rgb, thermal=thermal,
                                boxes=parse_annotations(text, str(ann_path), name),
                                time_of_day=time_of_day, shift=(float(shift[0]), float(shift[1])),
                                frame_id=name, split=frame_split))
    logger.debug(f"Loaded {len(pairs)} frames from {root}" + (f" (split {split})" if split else ""))
    return pairs


def load_pair(rgb_path: str, thermal_path: str) -> SamplePair:
    """Read one unannotated image pair for inference."""
    for path, label in ((rgb_path, "RGB"), (thermal_path, "thermal")):
        if not Path(path).is_file():
            raise MissingModalityError(f"No {label} image at {path}")
    rgb, thermal = read_pnm(Path(rgb_path), 3), read_pnm(Path(thermal_path), 1)
    if rgb.shape[1:] != thermal.shape[1:]:
        raise FormatError(f"RGB {rgb.shape[1:]} and thermal {thermal.shape[1:]} differ", thermal_path)
    return SamplePair(rgb=rgb, thermal=thermal, frame_id=Path(rgb_path).stem)


def split_counts(total: int, fractions: Sequence[float]) -> Dict[str, int]:
    """Frames per split; rounding remainders go to train."""
    counts = {name: int(np.floor(total * f + 1e-9)) for name, f in zip(SPLITS, fractions)}
    counts["train"] += total - sum(counts.values())
    return counts


def scene_to_dict(spec) -> Dict[str, Any]:
    return dataclasses.asdict(spec)
