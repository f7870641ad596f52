"""Dense tensors, reverse-mode autodiff, layers and SGD on top of numpy."""
from . import functional
from .core import (
    Parameter, Tape, Tensor, add, backward, concat, div, exp, log, matmul, max_over_axis,
    mean, mul, no_grad, relu, reshape, scale, sqrt, sub, sum_, take, transpose,
)
from .gradcheck import check_param_grads, finite_diff_check
from .nn import BatchNorm, Conv2d, Linear, Module
from .optim import SGD, sgd_step

__all__ = [
    "Parameter", "Tape", "Tensor", "add", "backward", "concat", "div", "exp", "log",
    "matmul", "max_over_axis", "mean", "mul", "no_grad", "relu", "reshape", "scale", "sqrt",
    "sub", "sum_", "take", "transpose", "functional", "check_param_grads",
    "finite_diff_check", "BatchNorm", "Conv2d", "Linear", "Module", "SGD", "sgd_step",
]
