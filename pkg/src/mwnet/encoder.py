"""Wavelet-convolution encoder with ConvLSTM temporal fusion.

Each stage runs a stack of ConvNeXt-style blocks whose spatial mixer is a
WTConv: the input is decomposed by a cascade of 2-D wavelet transforms,
every subband is convolved with a small depthwise kernel, and the levels are
merged bottom-up with inverse transforms.  Stage ``l`` (1-based) of an
``S``-stage encoder cascades ``S + 2 - l`` levels so that every stage bottoms
out at a quarter of the deepest encoder resolution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import tensor as T
from .nn import Conv2d, LayerNorm, Module, PointwiseMLP
from .tensor import Tensor
from .wavelet import Subbands, iwt2, wt2

PLAIN_KERNEL = 7


@dataclass
class EncoderConfig:
    num_stages: int = 3
    channels: tuple[int, ...] = (32, 64, 128)
    blocks: tuple[int, ...] = (2, 2, 2)
    t0: int = 2
    kernel_size: int = 3
    basis: str = "haar"
    backbone: str = "wtconv"
    in_channels: int = 1
    temporal: bool = True

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.blocks = tuple(int(b) for b in self.blocks)
        if len(self.channels) != self.num_stages or len(self.blocks) != self.num_stages:
            raise ValueError("channels and blocks need one entry per stage")
        if not 1 <= self.num_stages <= 4:
            raise ValueError("num_stages must be between 1 and 4")
        if self.backbone not in ("wtconv", "plainconv"):
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.t0 < 0:
            raise ValueError("t0 must be non-negative")

    def depth(self, stage: int) -> int:
        """Cascade depth of 1-based ``stage``."""
        return self.num_stages + 2 - stage

    @property
    def min_divisor(self) -> int:
        return 2 ** (self.depth(1) + self.num_stages - 1)

    def check_resolution(self, h: int, w: int):
        d = self.min_divisor
        if h % d or w % d:
            raise ValueError(f"input {h}x{w} must be divisible by {d} for a "
                             f"{self.num_stages}-stage encoder")


class WTConv(Module):
    def __init__(self, rng, channels: int, depth: int, kernel: int = 3, basis: str = "haar"):
        if depth < 1:
            raise ValueError("cascade depth must be at least 1")
        self.channels = channels
        self.depth = depth
        self.basis = basis
        self.ll_convs = [Conv2d(rng, channels, channels, kernel, groups=channels, bias=False)
                         for _ in range(depth)]
        self.h_convs = [Conv2d(rng, 3 * channels, 3 * channels, kernel, groups=3 * channels,
                               bias=False) for _ in range(depth)]
        self.base = Conv2d(rng, channels, channels, kernel, groups=channels)

    def check_input(self, x: Tensor):
        d = 2 ** self.depth
        if x.shape[1] != self.channels:
            raise ValueError(f"WTConv expects {self.channels} channels, got {x.shape}")
        if x.shape[2] % d or x.shape[3] % d:
            raise ValueError(f"WTConv depth {self.depth} needs spatial dims divisible by {d}, "
                             f"got {x.shape}")

    def levels(self, x: Tensor) -> list[tuple[Tensor, Tensor]]:
        """Convolved (LL, stacked-detail) pairs, shallowest level first."""
        out = []
        cur = x
        for k in range(self.depth):
            s = wt2(cur, self.basis)
            cur = s.ll
            detail = T.concat([s.lh, s.hl, s.hh], axis=1)
            out.append((self.ll_convs[k](s.ll), self.h_convs[k](detail)))
        return out

    def __call__(self, x: Tensor) -> Tensor:
        self.check_input(x)
        levels = self.levels(x)
        merged = levels[-1][0]
        for k in range(self.depth - 1, 0, -1):
            merged = iwt2(Subbands(merged, *T.split_channels(levels[k][1], 3)), self.basis)
            merged = merged + levels[k - 1][0]
        top = iwt2(Subbands(merged, *T.split_channels(levels[0][1], 3)), self.basis)
        return top + self.base(x)


class Block(Module):
    """Pre-norm residual block: spatial mixer, then pointwise MLP."""

    def __init__(self, rng, channels: int, mixer: Module):
        self.norm1 = LayerNorm(channels)
        self.mixer = mixer
        self.norm2 = LayerNorm(channels)
        self.mlp = PointwiseMLP(rng, channels, ratio=4)

    def __call__(self, x: Tensor) -> Tensor:
        y = x + self.mixer(self.norm1(x))
        return y + self.mlp(self.norm2(y))


class Stage(Module):
    def __init__(self, rng, channels: int, blocks: int, depth: int, kernel: int = 3,
                 basis: str = "haar", backbone: str = "wtconv"):
        self.channels = channels
        self.depth = depth
        mixers = []
        for _ in range(blocks):
            if backbone == "wtconv":
                mixers.append(WTConv(rng, channels, depth, kernel, basis))
            else:
                mixers.append(Conv2d(rng, channels, channels, PLAIN_KERNEL, groups=channels))
        self.blocks = [Block(rng, channels, m) for m in mixers]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise ValueError(f"stage expects {self.channels} channels, got {x.shape}")
        for blk in self.blocks:
            x = blk(x)
        return x


class Downsample(Module):
    def __init__(self, rng, in_c: int, out_c: int):
        self.norm = LayerNorm(in_c)
        self.conv = Conv2d(rng, in_c, out_c, 2, stride=2, padding=0)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[2] % 2 or x.shape[3] % 2:
            raise ValueError(f"downsample needs even spatial dims, got {x.shape}")
        return self.conv(self.norm(x))


class ConvLSTMState(NamedTuple):
    h: Tensor
    c: Tensor

    @classmethod
    def zeros(cls, like: Tensor) -> "ConvLSTMState":
        z = np.zeros_like(like.data)
        return cls(Tensor(z, dtype=z.dtype), Tensor(z, dtype=z.dtype))


class ConvLSTMCell(Module):
    def __init__(self, rng, channels: int, kernel: int = 3):
        self.channels = channels
        self.gates = Conv2d(rng, 2 * channels, 4 * channels, kernel)

    def __call__(self, f: Tensor, state: ConvLSTMState) -> ConvLSTMState:
        if not (f.shape == state.h.shape == state.c.shape):
            raise ValueError(f"ConvLSTM shape mismatch: input {f.shape}, "
                             f"h {state.h.shape}, c {state.c.shape}")
        zi, zf, zo, zg = T.split_channels(self.gates(T.concat([f, state.h], axis=1)), 4)
        c = T.sigmoid(zf) * state.c + T.sigmoid(zi) * T.tanh(zg)
        h = T.sigmoid(zo) * T.tanh(c)
        return ConvLSTMState(h, c)


def temporal_fuse(features: Sequence[Tensor], cell: ConvLSTMCell) -> Tensor:
    """Fold the cell over frames oldest to newest from a zero state."""
    if not features:
        raise ValueError("temporal_fuse needs at least one frame")
    state = ConvLSTMState.zeros(features[-1])
    for f in features:
        state = cell(f, state)
    return state.h


def temporal_fuse_section(features: Tensor, cell: ConvLSTMCell, t0: int) -> Tensor:
    """``temporal_fuse`` for every frame of a section at once.

    ``features`` stacks per-frame maps along the batch axis.  Frame ``t``
    sees frames ``max(0, t - t0) .. t``; all windows advance in lockstep and
    a frame whose window has not started yet keeps its zero state.
    """
    n = features.shape[0]
    t = np.arange(n)
    state = ConvLSTMState.zeros(features)
    for k in range(t0 + 1):
        src = t - t0 + k
        valid = src >= 0
        f = T.gather_batch(features, np.maximum(src, 0))
        h, c = cell(f, state)
        if not valid.all():
            m = np.broadcast_to(valid.astype(features.dtype).reshape(n, 1, 1, 1),
                                (n, features.shape[1], 1, 1))
            mask = Tensor(np.ascontiguousarray(m), dtype=features.dtype)
            h, c = T.channel_scale(h, mask), T.channel_scale(c, mask)
        state = ConvLSTMState(h, c)
    return state.h


class Encoder(Module):
    def __init__(self, rng, cfg: EncoderConfig):
        self.cfg = cfg
        ch = cfg.channels
        self.stem = Conv2d(rng, cfg.in_channels, ch[0], 3)
        self.stages = [Stage(rng, ch[i], cfg.blocks[i], cfg.depth(i + 1), cfg.kernel_size,
                             cfg.basis, cfg.backbone) for i in range(cfg.num_stages)]
        self.downs = [Downsample(rng, ch[i], ch[i + 1]) for i in range(cfg.num_stages - 1)]
        self.temporal = [ConvLSTMCell(rng, c) for c in ch] if cfg.temporal else []

    def backbone(self, frame: Tensor) -> list[Tensor]:
        """Per-stage features; frames stacked on the batch axis never mix."""
        self.cfg.check_resolution(frame.shape[2], frame.shape[3])
        x = self.stem(frame)
        feats = []
        for i, stage in enumerate(self.stages):
            if i:
                x = self.downs[i - 1](x)
            x = stage(x)
            feats.append(x)
        return feats

    def fuse(self, window: Sequence[list[Tensor]]) -> list[Tensor]:
        """Temporal fusion per stage over a window of per-frame features."""
        if not self.temporal:
            return list(window[-1])
        return [temporal_fuse([w[i] for w in window], cell)
                for i, cell in enumerate(self.temporal)]

    def fuse_section(self, features: list[Tensor]) -> list[Tensor]:
        """Temporal fusion for a whole section stacked on the batch axis."""
        if not self.temporal:
            return list(features)
        return [temporal_fuse_section(f, cell, self.cfg.t0)
                for f, cell in zip(features, self.temporal)]
