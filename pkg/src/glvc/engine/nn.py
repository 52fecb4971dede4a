"""Tiny module system: named parameter trees and conv layers."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Parameter, Tensor


class Module:
    """Holds parameters and submodules as attributes, addressable by dotted name."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            if missing or extra:
                raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, value in state.items():
            if name not in own:
                continue
            p = own[name]
            if p.shape != tuple(value.shape):
                raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
            p.data = np.array(value, dtype=np.float64)
            p.adam_m = np.zeros_like(p.data)
            p.adam_v = np.zeros_like(p.data)
            p.step_count = 0

    def freeze(self, frozen: bool = True) -> "Module":
        for p in self.parameters():
            p.frozen = frozen
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int, gain: float = 1.0) -> np.ndarray:
    """Uniform in ``+-gain * sqrt(1 / fan_in)``."""
    bound = gain * np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    def __init__(
        self, rng: np.random.Generator, c_in: int, c_out: int, k: int = 3, stride: int = 1, padding=None, gain=1.0
    ):
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        fan_in = c_in * k * k
        self.weight = Parameter(uniform_init(rng, (c_out, c_in, k, k), fan_in, gain))
        self.bias = Parameter(uniform_init(rng, (c_out,), fan_in))

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.stride, self.padding, self.bias)


class ConvTranspose2d(Module):
    """2x upsampling with k=4, padding=1 unless told otherwise."""

    def __init__(
        self, rng: np.random.Generator, c_in: int, c_out: int, k: int = 4, stride: int = 2, padding: int = 1, gain=1.0
    ):
        self.stride = stride
        self.padding = padding
        fan_in = c_in * k * k // (stride * stride)
        self.weight = Parameter(uniform_init(rng, (c_in, c_out, k, k), fan_in, gain))
        self.bias = Parameter(uniform_init(rng, (c_out,), fan_in))

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d_transpose(x, self.weight, self.stride, self.padding, self.bias)


def assign_names(module: Module) -> None:
    for name, p in module.named_parameters():
        p.name = name
