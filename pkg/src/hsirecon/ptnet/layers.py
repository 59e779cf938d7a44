"""Parameterized building blocks on top of the tensor engine."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from hsirecon.errors import DimensionError
from hsirecon.tensor import Tensor, get_default_dtype, ops


class Module:
    """Container that registers Tensor parameters and child modules by attribute name."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = name
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for child in self._children.values():
            yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def kaiming(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel=3, stride=1, padding=None, bias=True, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        dtype = get_default_dtype()
        self.c_in, self.c_out = c_in, c_out
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.weight = Tensor(kaiming(rng, (c_out, c_in, kernel, kernel), c_in * kernel * kernel),
                             requires_grad=True, dtype=dtype)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True, dtype=dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        dtype = get_default_dtype()
        self.momentum, self.eps = momentum, eps
        self.gamma = Tensor(np.ones(channels), requires_grad=True, dtype=dtype)
        self.beta = Tensor(np.zeros(channels), requires_grad=True, dtype=dtype)
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ops.batchnorm2d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                               self.training, self.momentum, self.eps)


class ChannelAttention(Module):
    """Efficient channel attention: pooled descriptor -> 1-D conv across channels -> sigmoid gate."""

    def __init__(self, kernel=3, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.kernel = kernel
        self.weight = Tensor(kaiming(rng, (1, 1, kernel), kernel), requires_grad=True, dtype=get_default_dtype())

    def gate(self, x: Tensor) -> Tensor:
        n, c = x.shape[:2]
        desc = ops.reshape(ops.global_avg_pool(x), (n, 1, c))
        mixed = ops.conv1d(desc, self.weight, (self.kernel - 1) // 2)
        return ops.reshape(ops.sigmoid(mixed), (n, c, 1, 1))

    def forward(self, x: Tensor) -> Tensor:
        return ops.channel_scale(x, self.gate(x))


class RABlock(Module):
    """Residual attention block: conv3x3 -> relu -> conv3x3 -> channel attention, plus skip."""

    def __init__(self, channels, eca_kernel=3, rng=None):
        super().__init__()
        self.channels = channels
        self.conv1 = Conv2d(channels, channels, 3, rng=rng)
        self.conv2 = Conv2d(channels, channels, 3, rng=rng)
        self.attention = ChannelAttention(eca_kernel, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise DimensionError(f"RA block built for {self.channels} channels, got input {x.shape}")
        y = self.conv2(ops.relu(self.conv1(x)))
        return ops.add(self.attention(y), x)
