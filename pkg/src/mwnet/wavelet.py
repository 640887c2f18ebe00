"""2-D wavelet transforms: fixed orthonormal bases and learnable lifting.

``lh`` is the horizontal detail (high-pass along the width axis, low-pass
along the height axis), ``hl`` the vertical detail and ``hh`` the diagonal.
For a 2x2 patch ``[[a, b], [c, d]]`` under Haar::

    ll = (a + b + c + d) / 2      lh = (a - b + c - d) / 2
    hl = (a + b - c - d) / 2      hh = (a - b - c + d) / 2

Fixed bases use periodic extension, which keeps the analysis operator
orthogonal for every even length.  The lifting transform uses symmetric
extension inside its predictor/updater filters and is invertible for any
tap values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .nn import Module, parameter
from .tensor import Tensor

FIXED_BASES = ("haar", "daubechies2", "symlet2")


class Subbands(NamedTuple):
    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor

    @property
    def shape(self):
        return self.ll.shape

    def map(self, fn) -> "Subbands":
        return Subbands(*(fn(b) for b in self))


@dataclass(frozen=True)
class WaveletBasis:
    kind: str
    lowpass: tuple[float, ...]
    highpass: tuple[float, ...]

    @property
    def length(self) -> int:
        return len(self.lowpass)


def _qmf(h):
    n = len(h)
    return tuple((-1) ** k * h[n - 1 - k] for k in range(n))


def get_basis(kind: str) -> WaveletBasis:
    if kind == "haar":
        h = (1 / math.sqrt(2), 1 / math.sqrt(2))
    elif kind in ("daubechies2", "symlet2"):
        # the two-vanishing-moment symlet coincides with db2
        s3 = math.sqrt(3)
        d = 4 * math.sqrt(2)
        h = ((1 + s3) / d, (3 + s3) / d, (3 - s3) / d, (1 - s3) / d)
    else:
        raise ValueError(f"unknown wavelet basis {kind!r}; choose from {FIXED_BASES}")
    return WaveletBasis(kind, h, _qmf(h))


def _even_dims(shape, what):
    if len(shape) != 4 or shape[2] % 2 or shape[3] % 2:
        raise ValueError(f"{what} needs (n, c, h, w) with even h and w, got {shape}")


def _analysis(a: np.ndarray, basis: WaveletBasis, axis: int):
    n = a.shape[axis]
    base = 2 * np.arange(n // 2)
    lo = hi = None
    for k, (hk, gk) in enumerate(zip(basis.lowpass, basis.highpass)):
        s = np.take(a, (base + k) % n, axis=axis)
        lo = hk * s if lo is None else lo + hk * s
        hi = gk * s if hi is None else hi + gk * s
    return lo, hi


def _synthesis(lo: np.ndarray, hi: np.ndarray, basis: WaveletBasis, axis: int):
    # adjoint of _analysis; equals its inverse for orthonormal bases
    lo = np.moveaxis(lo, axis, -1)
    hi = np.moveaxis(hi, axis, -1)
    half = lo.shape[-1]
    out = np.zeros(lo.shape[:-1] + (2 * half,), dtype=np.result_type(lo, hi))
    base = 2 * np.arange(half)
    for k, (hk, gk) in enumerate(zip(basis.lowpass, basis.highpass)):
        out[..., (base + k) % (2 * half)] += hk * lo + gk * hi
    return np.moveaxis(out, -1, axis)


def _wt2_arrays(x, basis):
    lo, hi = _analysis(x, basis, 3)
    ll, hl = _analysis(lo, basis, 2)
    lh, hh = _analysis(hi, basis, 2)
    return ll, lh, hl, hh


def _iwt2_arrays(ll, lh, hl, hh, basis):
    lo = _synthesis(ll, hl, basis, 2)
    hi = _synthesis(lh, hh, basis, 2)
    return _synthesis(lo, hi, basis, 3)


def wt2(x: Tensor, basis: WaveletBasis | str = "haar") -> Subbands:
    """One level of the separable 2-D DWT."""
    if isinstance(basis, str):
        basis = get_basis(basis)
    _even_dims(x.shape, "wt2")

    def backward(gs):
        return (_iwt2_arrays(*gs, basis),)

    return Subbands(*T._result_multi(_wt2_arrays(x.data, basis), (x,), backward))


def iwt2(s: Subbands, basis: WaveletBasis | str = "haar") -> Tensor:
    if isinstance(basis, str):
        basis = get_basis(basis)
    s = Subbands(*s)
    if len({b.shape for b in s}) != 1:
        raise ValueError(f"iwt2: subband shapes differ {[b.shape for b in s]}")
    out = _iwt2_arrays(*(b.data for b in s), basis)

    def backward(g):
        return _wt2_arrays(g, basis)

    return T._result(out, tuple(s), backward)


# ---------------------------------------------------------------- lifting


class LiftingParams(Module):
    """Per-channel predictor and updater taps, Haar-equivalent at init."""

    def __init__(self, channels: int, k_p: int = 3, k_u: int = 3):
        if k_p % 2 == 0 or k_u % 2 == 0:
            raise ValueError("lifting tap counts must be odd")
        p = np.zeros((channels, k_p))
        p[:, k_p // 2] = 1.0
        u = np.zeros((channels, k_u))
        u[:, k_u // 2] = 0.5
        self.predictor = parameter(p)
        self.updater = parameter(u)

    @classmethod
    def from_taps(cls, predictor, updater) -> "LiftingParams":
        predictor = np.atleast_2d(np.asarray(predictor, dtype=float))
        updater = np.atleast_2d(np.asarray(updater, dtype=float))
        obj = cls.__new__(cls)
        obj.predictor = parameter(predictor)
        obj.updater = parameter(updater)
        return obj


def lift_split(x: Tensor, axis: int = 3) -> tuple[Tensor, Tensor]:
    if x.shape[axis] % 2:
        raise ValueError(f"lift_split needs an even length along axis {axis}, got {x.shape}")
    return T.take_every_other(x, axis, 0), T.take_every_other(x, axis, 1)


def lift_merge(even: Tensor, odd: Tensor, axis: int = 3) -> Tensor:
    return T.interleave(even, odd, axis)


def lift_forward_1d(x: Tensor, p: LiftingParams, axis: int = 3) -> tuple[Tensor, Tensor]:
    """Split, predict, update.  Returns (low, high)."""
    xe, xo = lift_split(x, axis)
    high = xo - T.symconv1d(xe, p.predictor, axis)
    low = xe + T.symconv1d(high, p.updater, axis)
    return low, high


def lift_inverse_1d(low: Tensor, high: Tensor, p: LiftingParams, axis: int = 3) -> Tensor:
    if low.shape != high.shape:
        raise ValueError(f"lift_inverse_1d: length mismatch {low.shape} vs {high.shape}")
    xe = low - T.symconv1d(high, p.updater, axis)
    xo = high + T.symconv1d(xe, p.predictor, axis)
    return T.interleave(xe, xo, axis)


def awt2(x: Tensor, ph: LiftingParams, pv: LiftingParams) -> Subbands:
    """Adaptive 2-D transform: lifting along rows, then along columns."""
    _even_dims(x.shape, "awt2")
    low, high = lift_forward_1d(x, ph, axis=3)
    ll, hl = lift_forward_1d(low, pv, axis=2)
    lh, hh = lift_forward_1d(high, pv, axis=2)
    return Subbands(ll, lh, hl, hh)


def iawt2(s: Subbands, ph: LiftingParams, pv: LiftingParams) -> Tensor:
    s = Subbands(*s)
    if len({b.shape for b in s}) != 1:
        raise ValueError(f"iawt2: subband shapes differ {[b.shape for b in s]}")
    low = lift_inverse_1d(s.ll, s.hl, pv, axis=2)
    high = lift_inverse_1d(s.lh, s.hh, pv, axis=2)
    return lift_inverse_1d(low, high, ph, axis=3)
