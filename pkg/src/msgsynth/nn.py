"""Minimal module system: parameter containers and the layers the networks use."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .autodiff import Parameter, Tensor, batch_norm_2d, conv2d, dense
from .autodiff.ops import conv2d_output_shape


class Module:
    """Holds parameters and child modules; iteration order is attribute order."""

    training: bool = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self.named_children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self.parameters() if p.trainable]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in vars(self).items():
            if name.startswith("running_") and isinstance(value, np.ndarray):
                yield prefix + name, value
        for name, child in self.named_children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Parameters and buffers keyed by stable layer path."""
        out = {name: p.data for name, p in self.named_parameters()}
        out.update(self.named_buffers())
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(own) | set(buffers)
        if strict and set(arrays) != expected:
            missing = sorted(expected - set(arrays))
            extra = sorted(set(arrays) - expected)
            raise ValueError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, arr in arrays.items():
            target = own[name].data if name in own else buffers.get(name)
            if target is None:
                continue
            if target.shape != arr.shape:
                raise ValueError(f"shape mismatch for {name}: {target.shape} vs {arr.shape}")
        for name, arr in arrays.items():
            if name in own:
                own[name].data = np.array(arr, dtype=own[name].dtype)
            elif name in buffers:
                buffers[name][...] = arr

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.named_children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)


def he_std(fan_in: int, gain: float = math.sqrt(2.0)) -> float:
    return gain / math.sqrt(fan_in)


class Conv2d(Module):
    """k x k convolution with He-normal init. ``equalized`` keeps unit-variance
    weights and applies the He constant at run time instead."""

    def __init__(self, in_ch: int, out_ch: int, k: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, bias: bool = True,
                 equalized: bool = False, dtype=np.float32, gain: float = math.sqrt(2.0)):
        self.in_ch, self.out_ch, self.k = in_ch, out_ch, k
        self.stride, self.padding = stride, padding
        std = he_std(in_ch * k * k, gain)
        self.scale = std if equalized else 1.0
        init = rng.standard_normal((out_ch, in_ch, k, k))
        self.weight = Parameter((init if equalized else init * std).astype(dtype))
        self.bias = Parameter(np.zeros(out_ch, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        w = self.weight if self.scale == 1.0 else self.weight * self.scale
        return conv2d(x, w, self.bias, stride=self.stride, padding=self.padding)

    def out_shape(self, shape):
        if shape[1] != self.in_ch:
            raise ValueError(f"channel mismatch: {shape[1]} vs {self.in_ch}")
        return conv2d_output_shape(shape, self.out_ch, self.k, self.stride, self.padding)


class Dense(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 dtype=np.float32, gain: float = 1.0, equalized: bool = False):
        self.in_features, self.out_features = in_features, out_features
        std = he_std(in_features, gain)
        self.scale = std if equalized else 1.0
        init = rng.standard_normal((in_features, out_features))
        self.weight = Parameter((init if equalized else init * std).astype(dtype))
        self.bias = Parameter(np.zeros(out_features, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        w = self.weight if self.scale == 1.0 else self.weight * self.scale
        return dense(x, w, self.bias)

    def out_shape(self, shape):
        return (shape[0], self.out_features)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        self.momentum, self.eps = momentum, eps
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return batch_norm_2d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                             training=self.training, momentum=self.momentum, eps=self.eps)
