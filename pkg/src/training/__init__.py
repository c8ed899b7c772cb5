"""
Training loop and batch inference.
"""
from .trainer import StepRecord, Trainer, make_example
from .inference import ConfidenceSample, confidence_samples, detect_frames

__all__ = ['StepRecord', 'Trainer', 'make_example', 'ConfidenceSample', 'confidence_samples', 'detect_frames']
