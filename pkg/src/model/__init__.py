"""
Detector building blocks and the assembled two-stream model.
"""
from .detector import BoundingBox, Detection, DenseOutput, LossTerms
from .network import MultimodalDetector, DualFeatureState, build_model, model_inputs

__all__ = ['BoundingBox', 'Detection', 'DenseOutput', 'LossTerms',
           'MultimodalDetector', 'DualFeatureState', 'build_model', 'model_inputs']
