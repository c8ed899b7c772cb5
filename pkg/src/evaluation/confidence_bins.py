"""
Binned true/false-positive rates of confidence-tagged detections.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from model.detector import BoundingBox, Detection, box_iou
from utils.errors import MissingConfidenceError

BIN_EDGES = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)


def bin_index(confidence: float) -> int:
    """Bin of a confidence value; the last bin is closed on the right."""
    i = int(np.searchsorted(BIN_EDGES, confidence, side='right')) - 1
    return min(max(i, 0), len(BIN_EDGES) - 2)


@dataclass
class ConfidenceBins:
    """TP and FP counts in five equal confidence bins; rates are within-bin."""
    tp_counts: List[int] = field(default_factory=lambda: [0] * (len(BIN_EDGES) - 1))
    fp_counts: List[int] = field(default_factory=lambda: [0] * (len(BIN_EDGES) - 1))

    @property
    def total(self) -> int:
        return sum(self.tp_counts) + sum(self.fp_counts)

    def tp_rate(self, i: int) -> Optional[float]:
        n = self.tp_counts[i] + self.fp_counts[i]
        return self.tp_counts[i] / n if n else None

    def fp_rate(self, i: int) -> Optional[float]:
        rate = self.tp_rate(i)
        return None if rate is None else 1.0 - rate

    def merge(self, other: "ConfidenceBins") -> "ConfidenceBins":
        return ConfidenceBins([a + b for a, b in zip(self.tp_counts, other.tp_counts)],
                              [a + b for a, b in zip(self.fp_counts, other.fp_counts)])

    def to_table(self) -> str:
        """One ``bin_lo bin_hi tp_count fp_count tp_rate fp_rate`` line per bin; '-' marks an empty bin."""
        lines = ["# rates are per bin: tp_rate = tp / (tp + fp), fp_rate = 1 - tp_rate",
                 "bin_lo bin_hi tp_count fp_count tp_rate fp_rate"]
        for i in range(len(self.tp_counts)):
            tp_rate, fp_rate = self.tp_rate(i), self.fp_rate(i)
            lines.append(" ".join([
                f"{BIN_EDGES[i]:.1f}", f"{BIN_EDGES[i + 1]:.1f}",
                str(self.tp_counts[i]), str(self.fp_counts[i]),
                "-" if tp_rate is None else f"{tp_rate:.4f}",
                "-" if fp_rate is None else f"{fp_rate:.4f}",
            ]))
        return "\n".join(lines) + "\n"


def confidence_report(detections: Sequence[Detection], gt: Sequence[BoundingBox],
                      iou_match: float) -> ConfidenceBins:
    """
    Bin one image's detections by confidence after greedy score-order matching.

    Args:
        detections: Detections with ``confidence`` set
        gt: Ground-truth boxes
        iou_match: Minimum IoU for a true positive

    Returns:
        ConfidenceBins whose counts add up to ``len(detections)``

    Raises:
        MissingConfidenceError: If a detection has no confidence
    """
    for det in detections:
        if det.confidence is None:
            raise MissingConfidenceError("Every detection needs a confidence value for the bin report")
    bins = ConfidenceBins()
    order = sorted(range(len(detections)), key=lambda i: -detections[i].score)
    overlaps = None
    if order and gt:
        overlaps = box_iou(np.stack([detections[i].box.as_array() for i in order]),
                           np.stack([g.as_array() for g in gt]))
    taken = np.zeros(len(gt), dtype=bool)
    for rank, i in enumerate(order):
        hit = False
        if overlaps is not None:
            candidates = np.where(taken, -1.0, overlaps[rank])
            best = int(np.argmax(candidates))
            if candidates[best] >= iou_match:
                taken[best] = True
                hit = True
        b = bin_index(detections[i].confidence)
        if hit:
            bins.tp_counts[b] += 1
        else:
            bins.fp_counts[b] += 1
    return bins
