"""Long/short-term memory bank over compressed deep features.

Per frame the model reads first (cross-attention of the current feature
against each bank), fuses the two reads with the current feature, and only
then stores the compressed current feature.  The short bank is a FIFO; the
long bank keeps its first entry forever and, on overflow, drops the earlier
member of the most cosine-similar pair among the remaining entries.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import tensor as T
from .nn import Conv2d, Module, PointwiseMLP, parameter
from .tensor import Tensor


def compress(f: Tensor) -> Tensor:
    return T.avgpool2x(f)


def _tokens(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    return T.transpose(T.reshape(x, (n, c, h * w)), (0, 2, 1))


def cross_attention_read(f_t: Tensor, entries: Sequence[Tensor], w_q: Tensor, w_k: Tensor,
                         w_v: Tensor, return_weights: bool = False):
    """Single-head attention of ``f_t``'s pixels over all memory tokens.

    Memory entries are concatenated along the token axis, so the bank may
    hold any number of entries.  The result has ``f_t``'s shape.
    """
    if not entries:
        raise ValueError("cross_attention_read needs a non-empty bank")
    n, c, h, w = f_t.shape
    if w_q.shape != (c, c) or w_k.shape != (c, c) or w_v.shape != (c, c):
        raise ValueError(f"projections must be ({c}, {c})")
    q = _tokens(f_t) @ w_q
    mem = T.concat([_tokens(e) for e in entries], axis=1)
    k = mem @ w_k
    v = mem @ w_v
    scores = T.matmul(q, T.transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(c))
    attn = T.softmax_rows(scores)
    out = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1)), (n, c, h, w))
    return (out, attn) if return_weights else out


def _projection(rng, c):
    b = 1.0 / math.sqrt(c)
    return parameter(rng.uniform(-b, b, size=(c, c)))


class MemoryBank(Module):
    def __init__(self, rng, channels: int, long_capacity: int = 5, short_capacity: int = 2):
        if long_capacity < 1 or short_capacity < 1:
            raise ValueError("bank capacities must be positive")
        self.channels = channels
        self.long_capacity = long_capacity
        self.short_capacity = short_capacity
        self.wq_long, self.wk_long, self.wv_long = (_projection(rng, channels) for _ in range(3))
        self.wq_short, self.wk_short, self.wv_short = (_projection(rng, channels) for _ in range(3))
        self.fuse_conv = Conv2d(rng, 3 * channels, channels)
        self.ffn = PointwiseMLP(rng, channels, ratio=4)
        self.long: list[Tensor] = []
        self.short: list[Tensor] = []

    def reset(self):
        self.long = []
        self.short = []

    def read_long(self, f_t: Tensor) -> Tensor:
        if not self.long:
            return f_t
        return cross_attention_read(f_t, self.long, self.wq_long, self.wk_long, self.wv_long)

    def read_short(self, f_t: Tensor) -> Tensor:
        if not self.short:
            return f_t
        return cross_attention_read(f_t, self.short, self.wq_short, self.wk_short, self.wv_short)

    def fuse(self, f_t: Tensor, f_l: Tensor, f_s: Tensor) -> Tensor:
        return memory_fuse(f_t, f_l, f_s, self.fuse_conv, self.ffn)

    def _check_entry(self, entry: Tensor):
        ref = self.long[0] if self.long else (self.short[0] if self.short else None)
        if ref is not None and ref.shape != entry.shape:
            raise ValueError(f"memory entry shape {entry.shape} differs from stored {ref.shape}")

    def short_update(self, entry: Tensor):
        self._check_entry(entry)
        self.short.append(entry)
        if len(self.short) > self.short_capacity:
            del self.short[0]

    def long_update(self, entry: Tensor):
        self._check_entry(entry)
        self.long.append(entry)
        if len(self.long) > self.long_capacity:
            del self.long[eviction_index([e.data for e in self.long])]

    def step(self, f_t: Tensor) -> Tensor:
        """Read both banks, fuse, then store the compressed current feature."""
        fused = self.fuse(f_t, self.read_long(f_t), self.read_short(f_t))
        stored = compress(f_t)
        self.short_update(stored)
        self.long_update(stored)
        return fused


def memory_fuse(f_t: Tensor, f_l: Tensor, f_s: Tensor, fuse_conv: Conv2d,
                ffn: PointwiseMLP) -> Tensor:
    if not (f_t.shape == f_l.shape == f_s.shape):
        raise ValueError(f"memory_fuse shape mismatch {f_t.shape}, {f_l.shape}, {f_s.shape}")
    u = f_t + fuse_conv(T.concat([f_t, f_l, f_s], axis=1))
    return u + ffn(u)


def eviction_index(entries: Sequence[np.ndarray]) -> int:
    """Index to drop from an over-full long bank.

    Among entries 1.. the most cosine-similar pair is found (first pair in
    row-major order on ties) and its earlier member is evicted.  With only
    one candidate the newest entry goes.
    """
    if len(entries) < 2:
        raise ValueError("nothing to evict")
    if len(entries) == 2:
        return 1
    flat = np.stack([np.asarray(e, dtype=np.float64).reshape(-1) for e in entries[1:]])
    norms = np.linalg.norm(flat, axis=1)
    unit = flat / np.maximum(norms, 1e-12)[:, None]
    sim = unit @ unit.T
    m = len(flat)
    iu = np.triu_indices(m, k=1)
    best = int(np.argmax(sim[iu]))
    return int(iu[0][best]) + 1
