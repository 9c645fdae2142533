"""Minimal dense-tensor engine with reverse-mode differentiation."""
from . import ops
from .check import GradCheckReport, grad_check, numeric_gradient, relative_error
from .checkpoint import load_checkpoint, save_checkpoint
from .ops import (
    BatchNormState,
    batchnorm_freq,
    concat,
    conv2d,
    conv_time_length,
    dropout,
    elementwise,
    embedding,
    grad_reverse,
    log_softmax,
    lstm,
    matmul,
    maxpool2d,
    mse,
    relu,
    reshape,
    sigmoid,
    softmax_cross_entropy,
    stack,
    tanh,
)
from .optim import Optimizer, OptimizerConfig, OptimizerState, step
from .tensor import Tensor, as_tensor, backprop, grad, tensor

__all__ = [
    "BatchNormState", "GradCheckReport", "Optimizer", "OptimizerConfig", "OptimizerState",
    "Tensor", "as_tensor", "backprop", "batchnorm_freq", "concat", "conv2d", "conv_time_length",
    "dropout", "elementwise", "embedding", "grad", "grad_check", "grad_reverse", "load_checkpoint",
    "log_softmax", "lstm", "matmul", "maxpool2d", "mse", "numeric_gradient", "ops", "relative_error",
    "relu", "reshape", "save_checkpoint", "sigmoid", "softmax_cross_entropy", "stack", "step",
    "tanh", "tensor",
]
