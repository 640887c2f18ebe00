"""Parameter containers and the few layers shared across the network."""

from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def conv_weight(rng: np.random.Generator, out_c: int, in_c: int, kh: int, kw: int) -> Tensor:
    """Uniform init scaled by 1/sqrt(fan_in)."""
    bound = 1.0 / math.sqrt(in_c * kh * kw)
    return parameter(rng.uniform(-bound, bound, size=(out_c, in_c, kh, kw)))


class Module:
    """Minimal parameter tree.

    Parameters are attributes holding a ``Tensor`` with ``requires_grad``;
    child modules are attributes (or lists of) ``Module``.  Names follow
    attribute paths, e.g. ``encoder.stages.0.blocks.1.mlp_in.weight``.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                if val.requires_grad:
                    yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for k, p in own.items():
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: checkpoint shape {state[k].shape} != model shape {p.shape}")
            p.data = np.asarray(state[k], dtype=p.dtype).copy()

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return int(np.sum([p.size for p in self.parameters()]))


class Conv2d(Module):
    def __init__(self, rng, in_c: int, out_c: int, kernel: int = 1, stride: int = 1,
                 padding: Optional[int] = None, groups: int = 1, bias: bool = True):
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.groups = groups
        self.weight = conv_weight(rng, out_c, in_c // groups, kernel, kernel)
        self.bias = parameter(np.zeros(out_c)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class LayerNorm(Module):
    def __init__(self, channels: int):
        self.gain = parameter(np.ones(channels))
        self.bias = parameter(np.zeros(channels))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layernorm_channels(x, self.gain, self.bias)


class PointwiseMLP(Module):
    """Pointwise expand, ReLU, pointwise project."""

    def __init__(self, rng, channels: int, ratio: int = 4):
        self.expand = Conv2d(rng, channels, ratio * channels)
        self.project = Conv2d(rng, ratio * channels, channels)

    def __call__(self, x: Tensor) -> Tensor:
        return self.project(T.relu(self.expand(x)))
