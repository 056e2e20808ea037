"""Minimal dense-tensor engine with reverse-mode automatic differentiation."""

from .gradcheck import grad_check
from .ops import (
    add,
    batch_norm,
    concat,
    conv2d,
    elementwise,
    exp,
    flatten,
    global_average_pool,
    inject_fault,
    linear,
    mean,
    mul,
    negate,
    parameter,
    pool2d,
    relu,
    reshape,
    scalar_mul,
    sigmoid,
    softmax,
    softmax_cross_entropy,
    square,
    sub,
    sum,
)
from .tensor import (
    Tensor,
    as_tensor,
    build_tape,
    default_dtype,
    get_default_dtype,
    is_grad_enabled,
    no_grad,
    set_debug,
    set_default_dtype,
)

__all__ = [
    "Tensor",
    "add",
    "as_tensor",
    "batch_norm",
    "build_tape",
    "concat",
    "conv2d",
    "default_dtype",
    "elementwise",
    "exp",
    "flatten",
    "get_default_dtype",
    "global_average_pool",
    "grad_check",
    "inject_fault",
    "is_grad_enabled",
    "linear",
    "mean",
    "mul",
    "negate",
    "no_grad",
    "parameter",
    "pool2d",
    "relu",
    "reshape",
    "scalar_mul",
    "set_debug",
    "set_default_dtype",
    "sigmoid",
    "softmax",
    "softmax_cross_entropy",
    "square",
    "sub",
    "sum",
]
