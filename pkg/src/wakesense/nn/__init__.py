"""Dense numpy kernels with hand-written backward passes."""
from .gradcheck import GradCheckReport, grad_check
from .layers import NonFiniteError, softmax, softmax_crossentropy
from .params import Parameter, ParameterSet, adam_step, load_checkpoint, save_checkpoint

__all__ = [
    "GradCheckReport", "grad_check", "NonFiniteError", "softmax", "softmax_crossentropy",
    "Parameter", "ParameterSet", "adam_step", "load_checkpoint", "save_checkpoint",
]
