"""Minimal strided tensor engine with reverse-mode automatic differentiation."""

from hsirecon.tensor.core import (
    Tape,
    Tensor,
    backward,
    current_tape,
    get_default_dtype,
    grad_enabled,
    no_grad,
    precision,
    reset_tape,
    set_default_dtype,
)
from hsirecon.tensor.ops import (
    abs,
    add,
    add_scalar,
    batchnorm2d,
    bilinear_resize,
    channel_scale,
    concat,
    conv1d,
    conv2d,
    global_avg_pool,
    inverse_permutation,
    log10,
    mean,
    mul,
    permute,
    relu,
    reshape,
    scale,
    sigmoid,
    slice_axis,
    sub,
    subsample,
    sum,
)

__all__ = [
    "Tape", "Tensor", "backward", "current_tape", "get_default_dtype", "grad_enabled",
    "no_grad", "precision", "reset_tape", "set_default_dtype",
    "abs", "add", "add_scalar", "batchnorm2d", "bilinear_resize", "channel_scale", "concat",
    "conv1d", "conv2d", "global_avg_pool", "inverse_permutation", "log10", "mean", "mul",
    "permute", "relu", "reshape", "scale", "sigmoid", "slice_axis", "sub", "subsample", "sum",
]
