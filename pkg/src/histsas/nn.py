"""Layer containers on top of the autograd primitives."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator, Optional

import numpy as np

from .autograd import ops
from .autograd.tensor import Tensor, get_default_dtype
from .errors import DimensionError


class Module:
    """Base class: discovers parameters, buffers and children from attributes.

    Traversal follows attribute insertion order, so parameter names and their
    order are stable across runs.
    """

    training: bool = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            yield name, value

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in self._children():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in getattr(self, "_buffer_names", ()):
            yield prefix + name, getattr(self, name)
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{name}.{i}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((n, p.data.copy()) for n, p in self.named_parameters())
        for n, b in self.named_buffers():
            state[n] = b.copy()
        return state

    def load_state_dict(self, state: dict) -> None:
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = (set(own) | set(bufs)) - set(state)
        unexpected = set(state) - (set(own) | set(bufs))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for name, arr in state.items():
            target = own[name].data if name in own else bufs[name]
            if target.shape != np.shape(arr):
                raise DimensionError(f"{name}: expected shape {target.shape}, got {np.shape(arr)}")
            target[...] = arr


def _param(shape, name: Optional[str] = None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=get_default_dtype()), requires_grad=True, name=name)


def glorot_uniform(t: Tensor, fan_in: int, fan_out: int, rng: np.random.Generator) -> None:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    t.data[...] = rng.uniform(-limit, limit, size=t.shape)


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel, stride=1, padding=0, bias=True):
        kh, kw = ops._pair(kernel, "kernel")
        self.stride = ops._pair(stride, "stride")
        self.padding = ops._pair(padding, "padding")
        self.weight = _param((out_channels, in_channels, kh, kw))
        self.bias = _param((out_channels,)) if bias else None

    def reset_parameters(self, rng: np.random.Generator) -> None:
        f, c, kh, kw = self.weight.shape
        glorot_uniform(self.weight, c * kh * kw, f * kh * kw, rng)
        if self.bias is not None:
            self.bias.data[...] = 0.0

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int):
        self.weight = _param((out_features, in_features))
        self.bias = _param((out_features,))

    def reset_parameters(self, rng: np.random.Generator) -> None:
        o, n = self.weight.shape
        glorot_uniform(self.weight, n, o, rng)
        self.bias.data[...] = 0.0

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class BatchNorm2d(Module):
    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = _param((channels,))
        self.beta = _param((channels,))
        self.running_mean = np.zeros(channels, dtype=get_default_dtype())
        self.running_var = np.ones(channels, dtype=get_default_dtype())
        self.momentum = momentum
        self.eps = eps
        self.reset_parameters(None)

    def reset_parameters(self, rng) -> None:
        self.gamma.data[...] = 1.0
        self.beta.data[...] = 0.0
        self.running_mean[...] = 0.0
        self.running_var[...] = 1.0

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )
