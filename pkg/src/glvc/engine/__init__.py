"""Minimal float64 array engine with reverse-mode differentiation."""

from . import functional
from .checkpoint import CheckpointError
from .functional import conv2d, conv2d_transpose, leaky_relu, quantize_ste
from .nn import Conv2d, ConvTranspose2d, Module
from .optim import Adam, adam_step
from .tensor import (
    GraphError,
    NonFiniteError,
    Parameter,
    Tensor,
    as_tensor,
    backward,
    concat,
    grad_enabled,
    matmul,
    no_grad,
    stack,
)

__all__ = [
    "Adam",
    "CheckpointError",
    "Conv2d",
    "ConvTranspose2d",
    "GraphError",
    "Module",
    "NonFiniteError",
    "Parameter",
    "Tensor",
    "adam_step",
    "as_tensor",
    "backward",
    "concat",
    "conv2d",
    "conv2d_transpose",
    "functional",
    "grad_enabled",
    "leaky_relu",
    "matmul",
    "no_grad",
    "quantize_ste",
    "stack",
]
