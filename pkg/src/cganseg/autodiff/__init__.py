"""Minimal float64 tensor engine with reverse-mode autodiff (NCHW layout)."""

from .functional import (
    abs,
    add,
    bias_add,
    concat,
    conv2d,
    conv2d_transpose,
    dropout,
    leaky_relu,
    log,
    log_softmax,
    matmul,
    mean,
    mean_axes,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax,
    sub,
    sum,
    tanh,
)
from .optim import Adam, MissingGradError, adam_step
from .tensor import NonFiniteError, Tape, TapeConsumedError, Tensor, as_tensor, backward, parameter, zero_grad

__all__ = [
    "Adam", "MissingGradError", "NonFiniteError", "Tape", "TapeConsumedError", "Tensor",
    "abs", "adam_step", "add", "as_tensor", "backward", "bias_add", "concat", "conv2d",
    "conv2d_transpose", "dropout", "leaky_relu", "log", "log_softmax", "matmul", "mean",
    "mean_axes", "mul", "parameter", "relu", "reshape", "sigmoid", "softmax", "sub", "sum",
    "tanh", "zero_grad",
]
