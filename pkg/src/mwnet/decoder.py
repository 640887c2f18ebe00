"""High-frequency-aware fusion decoder.

An adaptive filter decomposes a map into four subbands, rescales each
subband's channels with its own squeeze-and-excitation gate and
reconstructs.  Low-pass filters start with the LL gate open and the detail
gates nearly shut (logit +2 / -2); high-pass filters start the other way
round.  Gates stay learnable.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .nn import Conv2d, Module
from .tensor import Tensor
from .wavelet import FIXED_BASES, LiftingParams, Subbands, awt2, iawt2, iwt2, wt2

GATE_LOGIT = 2.0
SE_RATIO = 4


class SEGate(Module):
    def __init__(self, rng, channels: int, logit: float, ratio: int = SE_RATIO):
        hidden = max(1, channels // ratio)
        self.reduce = Conv2d(rng, channels, hidden)
        self.excite = Conv2d(rng, hidden, channels)
        # zero excite weights: the initial gate is exactly sigmoid(logit)
        self.excite.weight.data[...] = 0.0
        self.excite.bias.data[...] = logit

    def __call__(self, x: Tensor) -> Tensor:
        return T.sigmoid(self.excite(T.relu(self.reduce(T.global_avgpool(x)))))


def se_reweight(s: Subbands, gates: Sequence[SEGate], override: Optional[float] = None) -> Subbands:
    """Scale every subband per channel by its own gate.

    ``override`` pins all gate values to a constant (used by identity and
    ablation probes).
    """
    if len(gates) != 4:
        raise ValueError("se_reweight needs one gate per subband")
    out = []
    for band, gate in zip(s, gates):
        if override is None:
            g = gate(band)
        else:
            g = T.Tensor(np.full(band.shape[:2] + (1, 1), override, dtype=band.dtype),
                         dtype=band.dtype)
        out.append(T.channel_scale(band, g))
    return Subbands(*out)


class AdaptiveFilter(Module):
    def __init__(self, rng, channels: int, mode: str, basis: str = "adaptive"):
        if mode not in ("lowpass", "highpass"):
            raise ValueError(f"unknown filter mode {mode!r}")
        if basis != "adaptive" and basis not in FIXED_BASES:
            raise ValueError(f"unknown basis {basis!r}")
        self.mode = mode
        self.basis = basis
        if basis == "adaptive":
            self.ph = LiftingParams(channels)
            self.pv = LiftingParams(channels)
        low = GATE_LOGIT if mode == "lowpass" else -GATE_LOGIT
        self.gates = [SEGate(rng, channels, low)] + [SEGate(rng, channels, -low) for _ in range(3)]

    def decompose(self, x: Tensor) -> Subbands:
        if self.basis == "adaptive":
            return awt2(x, self.ph, self.pv)
        return wt2(x, self.basis)

    def reconstruct(self, s: Subbands) -> Tensor:
        if self.basis == "adaptive":
            return iawt2(s, self.ph, self.pv)
        return iwt2(s, self.basis)

    def __call__(self, x: Tensor, gate_override: Optional[float] = None) -> Tensor:
        return self.reconstruct(se_reweight(self.decompose(x), self.gates, gate_override))


class HFF(Module):
    """Fuse a deeper map (half resolution) with an encoder skip map."""

    def __init__(self, rng, deep_channels: int, skip_channels: int, width: int,
                 basis: str = "adaptive"):
        self.align_deep = Conv2d(rng, deep_channels, width)
        self.align_skip = Conv2d(rng, skip_channels, width)
        self.low1 = AdaptiveFilter(rng, width, "lowpass", basis)
        self.high1 = AdaptiveFilter(rng, width, "highpass", basis)
        self.low2 = AdaptiveFilter(rng, width, "lowpass", basis)
        self.high2 = AdaptiveFilter(rng, width, "highpass", basis)
        self.out_low = Conv2d(rng, width, width)
        self.out_high = Conv2d(rng, width, width)

    def __call__(self, z_next: Tensor, x_skip: Tensor) -> Tensor:
        _check_half(z_next, x_skip)
        up = T.bilinear_upsample2x(self.align_deep(z_next))
        y = self.low1(up) + self.high1(self.align_skip(x_skip))
        return self.out_low(self.low2(y)) + self.out_high(self.high2(y))


class BilinearFusion(Module):
    """Plain upsample-and-add fusion; the ablation stand-in for HFF."""

    def __init__(self, rng, deep_channels: int, skip_channels: int, width: int):
        self.align_deep = Conv2d(rng, deep_channels, width)
        self.align_skip = Conv2d(rng, skip_channels, width)

    def __call__(self, z_next: Tensor, x_skip: Tensor) -> Tensor:
        _check_half(z_next, x_skip)
        return T.bilinear_upsample2x(self.align_deep(z_next)) + self.align_skip(x_skip)


def _check_half(z_next: Tensor, x_skip: Tensor):
    if (2 * z_next.shape[2], 2 * z_next.shape[3]) != x_skip.shape[2:]:
        raise ValueError(f"deep map {z_next.shape} must be half the resolution of "
                         f"skip map {x_skip.shape}")


class SegHead(Module):
    def __init__(self, rng, width: int):
        self.proj = Conv2d(rng, width, 1)

    def __call__(self, z1: Tensor, input_hw: tuple[int, int]) -> Tensor:
        x = self.proj(z1)
        while x.shape[2] < input_hw[0]:
            x = T.bilinear_upsample2x(x)
        if x.shape[2:] != tuple(input_hw):
            raise ValueError(f"cannot bring {x.shape[2:]} to input size {input_hw} by 2x steps")
        return T.sigmoid(x)


class Decoder(Module):
    def __init__(self, rng, encoder_channels: Sequence[int], width: int = 32,
                 basis: str = "adaptive", hff: bool = True):
        ch = list(encoder_channels)
        self.fusions = []
        deep = ch[-1]
        for skip in reversed(ch[:-1]):
            if hff:
                self.fusions.append(HFF(rng, deep, skip, width, basis))
            else:
                self.fusions.append(BilinearFusion(rng, deep, skip, width))
            deep = width
        self.head_align = Conv2d(rng, ch[-1], width) if len(ch) == 1 else None
        self.head = SegHead(rng, width)

    def __call__(self, features: Sequence[Tensor], input_hw) -> Tensor:
        """``features`` shallow to deep; the deepest one is memory-fused."""
        z = features[-1]
        for fusion, skip in zip(self.fusions, reversed(features[:-1])):
            z = fusion(z, skip)
        if self.head_align is not None:
            z = self.head_align(z)
        return self.head(z, input_hw)
