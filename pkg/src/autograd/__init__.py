"""
Tensor core: dense arrays, tape-based reverse mode, primitive ops.
"""
from .tensor import Tensor, Tape, Function, backward, paused, active_tape, as_tensor
from .module import Module, Parameter
from .optim import OptimState, sgd_momentum_step, lr_schedule
from .gradcheck import grad_check
from . import ops
from .conv import conv2d, deform_conv2d, bilinear_sample, sample_bilinear

__all__ = [
    'Tensor', 'Tape', 'Function', 'backward', 'paused', 'active_tape', 'as_tensor',
    'Module', 'Parameter', 'OptimState', 'sgd_momentum_step', 'lr_schedule',
    'grad_check', 'ops', 'conv2d', 'deform_conv2d', 'bilinear_sample', 'sample_bilinear',
]
