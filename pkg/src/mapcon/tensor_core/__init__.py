from .tensor import (
    GradientMap,
    NonFiniteError,
    Tape,
    Tensor,
    TensorError,
    active_tape,
    backward,
    set_strict,
    strict_mode,
)
from .ops import KERNELS, op_forward
from . import ops
from .adam import AdamState, adam_step
from .gradcheck import GradCheckReport, finite_difference_check

__all__ = [
    "AdamState",
    "GradCheckReport",
    "GradientMap",
    "KERNELS",
    "NonFiniteError",
    "Tape",
    "Tensor",
    "TensorError",
    "active_tape",
    "adam_step",
    "backward",
    "finite_difference_check",
    "op_forward",
    "ops",
    "set_strict",
    "strict_mode",
]
