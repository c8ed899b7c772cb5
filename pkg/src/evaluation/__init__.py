"""
Evaluation protocol and confidence reports.
"""
from .metrics import (EvalReport, ImageMatch, SplitMetrics, average_precision, log_average_miss_rate,
                      match_detections, miss_rate_curve, split_report)
from .confidence_bins import BIN_EDGES, ConfidenceBins, confidence_report

__all__ = ['EvalReport', 'ImageMatch', 'SplitMetrics', 'average_precision', 'log_average_miss_rate',
           'match_detections', 'miss_rate_curve', 'split_report', 'BIN_EDGES', 'ConfidenceBins',
           'confidence_report']
