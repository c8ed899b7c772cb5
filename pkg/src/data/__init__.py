"""
Synthetic scenes, augmentation and dataset I/O.
"""
from .scene import SamplePair, generate_scene
from .augment import TrainingExample, CurriculumSchedule, simple_augment, mixup, curriculum_mask
from .dataset_io import load_dataset, save_dataset

__all__ = ['SamplePair', 'generate_scene', 'TrainingExample', 'CurriculumSchedule',
           'simple_augment', 'mixup', 'curriculum_mask', 'load_dataset', 'save_dataset']
