"""Differentiable operations over :class:`Tensor`.

Only what the reconstruction network needs is here. There is no implicit
broadcasting: binary elementwise ops require identical shapes, and the one
broadcast the network uses (per-channel gating) is the explicit
``channel_scale``.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from hsirecon.errors import ConfigError, DimensionError
from hsirecon.tensor.core import Tensor, make_result

_LOG10_E = 1.0 / math.log(10.0)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return make_result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return make_result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    x, y = a.data, b.data
    return make_result(x * y, (a, b), lambda g: (g * y, g * x), "mul")


def scale(a: Tensor, s: float) -> Tensor:
    s = a.dtype.type(s)
    return make_result(a.data * s, (a,), lambda g: (g * s,), "scale")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_result(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(a.dtype)
    return make_result(y, (a,), lambda g: (g * y * (1 - y),), "sigmoid")


def abs(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    sign = np.sign(a.data)
    return make_result(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def log10(a: Tensor) -> Tensor:
    x = a.data
    return make_result(np.log10(x), (a,), lambda g: (g * (_LOG10_E / x),), "log10")


def add_scalar(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return make_result(a.data + c, (a,), lambda g: (g,), "add_scalar")


# ---------------------------------------------------------------- reductions

def sum(a: Tensor) -> Tensor:  # noqa: A001
    shape = a.shape
    return make_result(
        np.asarray(a.data.sum(), dtype=a.dtype), (a,),
        lambda g: (np.broadcast_to(g, shape),), "sum",
    )


def mean(a: Tensor) -> Tensor:
    n = a.size
    shape = a.shape
    return make_result(
        np.asarray(a.data.mean(), dtype=a.dtype), (a,),
        lambda g: (np.broadcast_to(g / n, shape),), "mean",
    )


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean, [N,C,H,W] -> [N,C,1,1]."""
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool expects [N,C,H,W], got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)
    inv = x.dtype.type(1.0 / (h * w))
    return make_result(out, (x,), lambda g: (np.broadcast_to(g * inv, x.shape),), "global_avg_pool")


# ---------------------------------------------------------------- shape ops

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def _check_perm(axes, ndim):
    axes = tuple(int(i) for i in axes)
    if sorted(axes) != list(range(ndim)):
        raise ConfigError(f"{axes} is not a permutation of 0..{ndim - 1}")
    return axes


def inverse_permutation(axes: Sequence[int]) -> tuple[int, ...]:
    inv = [0] * len(axes)
    for i, a in enumerate(axes):
        inv[a] = i
    return tuple(inv)


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    """Reorder axes; the result is a view sharing ``a``'s storage."""
    axes = _check_perm(axes, a.ndim)
    inv = inverse_permutation(axes)
    return make_result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "permute")


def slice_axis(a: Tensor, axis: int, start: int, stop: int, step: int = 1) -> Tensor:
    """Strided slice along one axis (a view)."""
    if not 0 <= axis < a.ndim:
        raise ConfigError(f"axis {axis} out of range for rank {a.ndim}")
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop, step)
    index = tuple(index)

    def back(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return make_result(a.data[index], (a,), back, "slice")


def subsample(x: Tensor, factor: int) -> Tensor:
    """Keep every ``factor``-th row and column of a [N,C,H,W] tensor."""
    if factor == 1:
        return x
    x = slice_axis(x, 2, 0, None, factor)
    return slice_axis(x, 3, 0, None, factor)


def concat(inputs: Sequence[Tensor], axis: int) -> Tensor:
    inputs = list(inputs)
    if not inputs:
        raise DimensionError("concat needs at least one tensor")
    ref = inputs[0]
    if not 0 <= axis < ref.ndim:
        raise ConfigError(f"axis {axis} out of range for rank {ref.ndim}")
    for t in inputs[1:]:
        if t.ndim != ref.ndim or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref.shape)) if i != axis
        ):
            raise DimensionError(f"concat along {axis}: {t.shape} disagrees with {ref.shape}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in inputs])

    def back(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(inputs))
        )

    return make_result(np.concatenate([t.data for t in inputs], axis=axis), inputs, back, "concat")


# ---------------------------------------------------------------- convolution

def conv_output_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    if span < 0 or span % stride:
        raise ConfigError(
            f"extent {size} with kernel {kernel}, stride {stride}, padding {padding} "
            f"gives a non-integral output size"
        )
    return span // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding."""
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and weight, got {x.shape}, {weight.shape}")
    n, c, h, w = x.shape
    co, ci, kh, kw = weight.shape
    if ci != c:
        raise DimensionError(f"conv2d: input has {c} channels, weight expects {ci}")
    if bias is not None and bias.shape != (co,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({co},)")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"conv2d kernel {kh}x{kw} must have odd extents")
    if stride < 1 or padding < 0:
        raise ConfigError(f"conv2d stride {stride} / padding {padding} invalid")
    ho = conv_output_extent(h, kh, stride, padding)
    wo = conv_output_extent(w, kw, stride, padding)

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    # [N, C, Ho, Wo, kh, kw]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    wd = weight.data
    out = np.tensordot(win, wd, axes=([1, 4, 5], [1, 2, 3]))  # [N, Ho, Wo, Co]
    if bias is not None:
        out = out + bias.data
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def back(g):
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3])) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            cols = np.tensordot(g, wd, axes=([1], [0]))  # [N, Ho, Wo, C, kh, kw]
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            hspan = stride * (ho - 1) + 1
            wspan = stride * (wo - 1) + 1
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + hspan:stride, j:j + wspan:stride] += cols[..., i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        return (gx, gw) if bias is None else (gx, gw, gb)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, inputs, back, "conv2d")


def conv1d(x: Tensor, weight: Tensor, padding: int) -> Tensor:
    """Length-preserving 1-D cross-correlation, [N,1,L] * [1,1,k]."""
    if x.ndim != 3 or x.shape[1] != 1:
        raise DimensionError(f"conv1d expects [N,1,L], got {x.shape}")
    if weight.ndim != 3 or weight.shape[:2] != (1, 1):
        raise DimensionError(f"conv1d expects weight [1,1,k], got {weight.shape}")
    k = weight.shape[2]
    if k % 2 == 0:
        raise ConfigError(f"conv1d kernel size {k} must be odd")
    if padding != (k - 1) // 2:
        raise ConfigError(f"conv1d padding must be {(k - 1) // 2} for kernel {k}, got {padding}")
    n, _, length = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, k, axis=2)  # [N, 1, L, k]
    wd = weight.data[0, 0]
    out = win @ wd

    def back(g):
        gw = np.einsum("ncl,nclk->k", g, win).reshape(1, 1, k) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for j in range(k):
                gxp[:, :, j:j + length] += g * wd[j]
            gx = gxp[:, :, padding:padding + length]
        return gx, gw

    return make_result(out, (x, weight), back, "conv1d")


# ---------------------------------------------------------------- normalization

def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalization over N, H, W per channel.

    In training mode ``running_mean``/``running_var`` are updated in place
    (exponential moving average, unbiased variance).
    """
    if x.ndim != 4:
        raise DimensionError(f"batchnorm2d expects [N,C,H,W], got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batchnorm2d: {c} channels but gamma {gamma.shape}, beta {beta.shape}")
    if eps <= 0:
        raise ConfigError("batchnorm2d eps must be positive")
    xd = x.data
    shape = (1, c, 1, 1)
    if training:
        m = xd.shape[0] * xd.shape[2] * xd.shape[3]
        mu = xd.mean(axis=(0, 2, 3))
        xc = xd - mu.reshape(shape)
        var = (xc * xc).mean(axis=(0, 2, 3))
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        unbiased = var * (m / (m - 1)) if m > 1 else var
        running_var *= 1 - momentum
        running_var += momentum * unbiased
    else:
        mu = running_mean.astype(xd.dtype)
        var = running_var.astype(xd.dtype)
        xc = xd - mu.reshape(shape)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = xc * inv_std.reshape(shape)
    g = gamma.data.reshape(shape)
    out = xhat * g + beta.data.reshape(shape)

    def back(gy):
        gb = gy.sum(axis=(0, 2, 3))
        gg = (gy * xhat).sum(axis=(0, 2, 3))
        gxhat = gy * g
        if training:
            gx = (gxhat - gxhat.mean(axis=(0, 2, 3), keepdims=True)
                  - xhat * (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)) * inv_std.reshape(shape)
        else:
            gx = gxhat * inv_std.reshape(shape)
        return gx, gg, gb

    return make_result(out, (x, gamma, beta), back, "batchnorm2d")


# ---------------------------------------------------------------- attention / resampling

def channel_scale(x: Tensor, gate: Tensor) -> Tensor:
    """Multiply each channel of [N,C,H,W] by the matching entry of [N,C,1,1]."""
    n, c = x.shape[:2]
    if x.ndim != 4 or gate.shape != (n, c, 1, 1):
        raise DimensionError(f"channel_scale: gate {gate.shape} does not match input {x.shape}")
    xd, gd = x.data, gate.data
    return make_result(
        xd * gd, (x, gate),
        lambda g: (g * gd, (g * xd).sum(axis=(2, 3), keepdims=True)),
        "channel_scale",
    )


def interpolation_matrix(size_in: int, size_out: int, dtype=np.float64) -> np.ndarray:
    """[size_out, size_in] linear-interpolation weights, corner-aligned grid."""
    m = np.zeros((size_out, size_in), dtype=dtype)
    if size_in == 1 or size_out == 1:
        m[:, 0] = 1.0
        return m
    for i in range(size_out):
        src = i * (size_in - 1) / (size_out - 1)
        i0 = min(int(math.floor(src)), size_in - 2)
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i0 + 1] += frac
    return m


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of [N,C,H,W] with corner-aligned sampling.

    Output corner samples coincide with input corners. Resizing to the input's
    own shape returns the values unchanged.
    """
    if x.ndim != 4:
        raise DimensionError(f"bilinear_resize expects [N,C,H,W], got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"bilinear_resize target {out_h}x{out_w} must be positive")
    h, w = x.shape[2:]
    if (h, w) == (out_h, out_w):
        return make_result(x.data.copy(), (x,), lambda g: (g,), "bilinear_resize")
    ry = interpolation_matrix(h, out_h, x.dtype)
    rx = interpolation_matrix(w, out_w, x.dtype)
    out = ry @ x.data @ rx.T
    return make_result(out, (x,), lambda g: (ry.T @ g @ rx,), "bilinear_resize")
