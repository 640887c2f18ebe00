"""Dense tensors with tape-based reverse-mode differentiation.

Every operation here takes and returns :class:`Tensor` objects.  When a
:class:`Tape` is active and at least one input requires a gradient, the
operation appends a node holding a backward closure to the tape.  Calling
``tape.backward(loss)`` walks the nodes in reverse and accumulates
``.grad`` on every leaf tensor that was reached.

Values are 32-bit by default; wrap model construction and evaluation in
``precision(np.float64)`` for finite-difference gradient checks.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np

_local = threading.local()
_dtype = np.float32


def default_dtype():
    return _dtype


@contextmanager
def precision(dtype):
    """Temporarily change the dtype used for newly created tensors."""
    global _dtype
    prev = _dtype
    _dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _dtype = prev


def _tape_stack() -> list:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_recorded")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._recorded = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -other)

    def __rsub__(self, other):
        return add_scalar(scale(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other) if isinstance(other, Tensor) else scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "inputs", "backward", "multi")

    def __init__(self, out, inputs, backward, multi=False):
        self.out = out
        self.inputs = inputs
        self.backward = backward
        self.multi = multi


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended as operations execute, so inputs always precede the
    node that consumes them.  A tape is single-threaded; independent tapes
    may be used from separate threads.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss: Tensor) -> list[Tensor]:
        """Propagate d(loss)/d(.) to every reachable leaf.

        Leaf gradients accumulate into ``.grad``.  The tape is cleared
        afterwards.  Returns the leaves that received a gradient.
        """
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            if node.multi:
                g = [grads.pop(id(o), None) for o in node.out]
                if all(gi is None for gi in g):
                    continue
                g = [np.zeros_like(o.data) if gi is None else gi for o, gi in zip(node.out, g)]
            else:
                g = grads.pop(id(node.out), None)
                if g is None:
                    continue
            for t, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                if t._recorded:
                    # broadcast or strided views would push matmul off BLAS
                    gi = np.ascontiguousarray(gi)
                    key = id(t)
                    grads[key] = gi if key not in grads else grads[key] + gi
                else:
                    t.grad = gi.astype(t.dtype, copy=True) if t.grad is None else t.grad + gi
                    leaves[id(t)] = t
        self.nodes.clear()
        return list(leaves.values())


def _result(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out._recorded = False
    stack = _tape_stack()
    if stack and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._recorded = True
        stack[-1].nodes.append(_Node(out, tuple(inputs), backward))
    return out


def _result_multi(datas: Sequence[np.ndarray], inputs: Sequence[Tensor],
                  backward: Callable) -> tuple[Tensor, ...]:
    """Like ``_result`` for an op with several outputs; ``backward`` gets a list."""
    outs = tuple(Tensor(d, dtype=d.dtype) for d in datas)
    stack = _tape_stack()
    if stack and any(t.requires_grad for t in inputs):
        for o in outs:
            o.requires_grad = True
            o._recorded = True
        stack[-1].nodes.append(_Node(outs, tuple(inputs), backward, multi=True))
    return outs


def _check_same(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _check_finite(x: Tensor, op: str):
    if not np.all(np.isfinite(x.data)):
        raise ValueError(f"{op}: non-finite input")


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "mul")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "div")
    out = a.data / b.data
    return _result(out, (a, b), lambda g: (g / b.data, -g * out / b.data))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(x.data * x.dtype.type(c), (x,), lambda g: (g * x.dtype.type(c),))


def add_scalar(x: Tensor, c: float) -> Tensor:
    return _result(x.data + x.dtype.type(c), (x,), lambda g: (g,))


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),))


# grad_check collects activation patterns here to spot stencils crossing a kink
_kink_log: Optional[list] = None


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    if _kink_log is not None:
        _kink_log.append(mask)
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


def pointwise_unary(x: Tensor, kind: str) -> Tensor:
    try:
        fn = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}[kind]
    except KeyError:
        raise ValueError(f"unknown unary kind {kind!r}") from None
    return fn(x)


def elementwise_binary(a: Tensor, b: Tensor, kind: str) -> Tensor:
    try:
        fn = {"add": add, "sub": sub, "mul": mul}[kind]
    except KeyError:
        raise ValueError(f"unknown binary kind {kind!r}") from None
    return fn(a, b)


def log(x: Tensor) -> Tensor:
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    if _kink_log is not None:
        _kink_log.append(inside)
    return _result(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def channel_scale(x: Tensor, gate: Tensor) -> Tensor:
    """Multiply (n, c, h, w) by per-channel factors of shape (n, c, 1, 1)."""
    if gate.shape != x.shape[:2] + (1, 1):
        raise ValueError(f"channel_scale: gate {gate.shape} does not fit {x.shape}")

    def backward(g):
        return g * gate.data, (g * x.data).sum(axis=(2, 3), keepdims=True)

    return _result(x.data * gate.data, (x, gate), backward)


# ---------------------------------------------------------------- reductions


def sum_all(x: Tensor) -> Tensor:
    return _result(np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                   lambda g: (np.broadcast_to(g, x.shape),))


def mean(x: Tensor) -> Tensor:
    n = x.size
    return _result(np.asarray(x.data.mean(), dtype=x.dtype), (x,),
                   lambda g: (np.broadcast_to(g / n, x.shape),))


def global_avgpool(x: Tensor) -> Tensor:
    hw = x.shape[2] * x.shape[3]
    return _result(x.data.mean(axis=(2, 3), keepdims=True), (x,),
                   lambda g: (np.broadcast_to(g / hw, x.shape),))


def avgpool2x(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"avgpool2x needs even spatial dims, got {x.shape}")
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(g):
        gx = np.repeat(np.repeat(g * 0.25, 2, axis=2), 2, axis=3)
        return (gx,)

    return _result(out, (x,), backward)


# ---------------------------------------------------------------- shape ops


def reshape(x: Tensor, shape) -> Tensor:
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = tuple(xs)
    if not xs:
        raise ValueError("concat of an empty sequence")
    sizes = [t.shape[axis] for t in xs]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(np.concatenate([t.data for t in xs], axis=axis), xs, backward)


def split_channels(x: Tensor, parts: int) -> tuple[Tensor, ...]:
    """Split axis 1 into ``parts`` equal chunks."""
    if x.shape[1] % parts:
        raise ValueError(f"cannot split {x.shape[1]} channels into {parts} parts")
    chunks = np.split(x.data, parts, axis=1)
    return _result_multi(chunks, (x,), lambda gs: (np.concatenate(gs, axis=1),))


def gather_batch(x: Tensor, index) -> Tensor:
    """Rows ``x[index]`` along the batch axis; indices may repeat."""
    index = np.asarray(index, dtype=np.intp)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _result(x.data[index], (x,), backward)


def select_batch(x: Tensor, i: int) -> Tensor:
    """Batch element ``i`` as a batch of one."""

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[i:i + 1] = g
        return (gx,)

    return _result(x.data[i:i + 1], (x,), backward)


def take_every_other(x: Tensor, axis: int, start: int) -> Tensor:
    """Strided slice ``x[..., start::2, ...]`` along ``axis``."""
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, None, 2)
    idx = tuple(idx)

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        return (gx,)

    return _result(x.data[idx], (x,), backward)


def interleave(even: Tensor, odd: Tensor, axis: int) -> Tensor:
    """Inverse of splitting by parity along ``axis``."""
    _check_same(even, odd, "interleave")
    shape = list(even.shape)
    shape[axis] *= 2
    out = np.empty(shape, dtype=np.result_type(even.data, odd.data))
    ie = [slice(None)] * even.ndim
    io = [slice(None)] * even.ndim
    ie[axis] = slice(0, None, 2)
    io[axis] = slice(1, None, 2)
    ie, io = tuple(ie), tuple(io)
    out[ie] = even.data
    out[io] = odd.data
    return _result(out, (even, odd), lambda g: (g[ie], g[io]))


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of (..., m, k) with (k, p) or (..., k, p)."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise ValueError(f"matmul: batch dims differ {a.shape} vs {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2:
            k, p = b.shape
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, p)
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _result(a.data @ b.data, (a, b), backward)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max subtraction."""
    _check_finite(x, "softmax_rows")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), backward)


def layernorm_channels(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize each pixel's channel vector, then apply per-channel affine."""
    c = x.shape[1]
    if gain.shape != (c,) or bias.shape != (c,):
        raise ValueError(f"layernorm_channels: affine params must have shape ({c},)")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * inv
    gv = gain.data.reshape(1, c, 1, 1)
    out = xhat * gv + bias.data.reshape(1, c, 1, 1)

    def backward(g):
        gh = g * gv
        gx = inv * (gh - gh.mean(axis=1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=1, keepdims=True))
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return _result(out, (x, gain, bias), backward)


# ---------------------------------------------------------------- convolution


def _pad(a: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return a
    return np.pad(a, ((0, 0), (0, 0), (p, p), (p, p)))


def _window(xp, i, j, stride, oh, ow):
    return xp[:, :, i:i + stride * (oh - 1) + 1:stride, j:j + stride * (ow - 1) + 1:stride]


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """Zero-padded 2-D cross-correlation (the deep-learning 'convolution')."""
    n, c, h, w = x.shape
    oc, icg, kh, kw = weight.shape
    if c % groups or oc % groups or icg * groups != c:
        raise ValueError(f"conv2d: input {x.shape} does not match weight {weight.shape} "
                         f"with groups={groups}")
    if bias is not None and bias.shape != (oc,):
        raise ValueError(f"conv2d: bias {bias.shape} does not match weight {weight.shape}")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ValueError(f"conv2d: kernel {weight.shape} larger than padded input {x.shape}")
    wd = weight.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    if kh == kw == 1 and stride == 1 and padding == 0 and groups == 1:
        xf = x.data.reshape(n, c, h * w)
        out = np.matmul(wd.reshape(oc, c), xf).reshape(n, oc, h, w)

        def backward(g):
            gf = g.reshape(n, oc, h * w)
            gx = np.matmul(wd.reshape(oc, c).T, gf).reshape(x.shape)
            gw = np.einsum("noq,ncq->oc", gf, xf).reshape(wd.shape)
            return (gx, gw) if bias is None else (gx, gw, g.sum(axis=(0, 2, 3)))

    elif groups == c and oc == c:
        xp = _pad(x.data, padding)
        out = np.zeros((n, c, oh, ow), dtype=np.result_type(x.data, wd))
        for i in range(kh):
            for j in range(kw):
                out += _window(xp, i, j, stride, oh, ow) * wd[:, 0, i, j].reshape(1, c, 1, 1)

        def backward(g):
            gxp = np.zeros_like(xp)
            gw = np.empty_like(wd)
            for i in range(kh):
                for j in range(kw):
                    sl = _window(xp, i, j, stride, oh, ow)
                    gw[:, 0, i, j] = (g * sl).sum(axis=(0, 2, 3))
                    gxp[:, :, i:i + stride * (oh - 1) + 1:stride,
                        j:j + stride * (ow - 1) + 1:stride] += g * wd[:, 0, i, j].reshape(1, c, 1, 1)
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
            return (gx, gw) if bias is None else (gx, gw, g.sum(axis=(0, 2, 3)))

    else:
        xp = _pad(x.data, padding)
        # im2col: (n, c, kh, kw, oh, ow), kept for the backward pass
        cols = np.empty((n, c, kh, kw, oh, ow), dtype=xp.dtype)
        for i in range(kh):
            for j in range(kw):
                cols[:, :, i, j] = _window(xp, i, j, stride, oh, ow)
        kg = icg * kh * kw
        ocg = oc // groups
        colsg = cols.reshape(n, groups, kg, oh * ow)
        wg = wd.reshape(groups, ocg, kg)
        out = np.matmul(wg[None], colsg).reshape(n, oc, oh, ow)

        def backward(g):
            gg = g.reshape(n, groups, ocg, oh * ow)
            gw = np.matmul(gg, np.swapaxes(colsg, -1, -2)).sum(axis=0).reshape(wd.shape)
            gcols = np.matmul(np.swapaxes(wg, -1, -2)[None], gg).reshape(n, c, kh, kw, oh, ow)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * (oh - 1) + 1:stride,
                        j:j + stride * (ow - 1) + 1:stride] += gcols[:, :, i, j]
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
            return (gx, gw) if bias is None else (gx, gw, g.sum(axis=(0, 2, 3)))

    if bias is not None:
        out = out + bias.data.reshape(1, oc, 1, 1)
    return _result(out, inputs, backward)


def symconv1d(x: Tensor, taps: Tensor, axis: int) -> Tensor:
    """Per-channel 1-D correlation along a spatial axis.

    ``taps`` has shape (c, k) with odd k; the signal is extended by
    half-sample symmetric reflection (edge sample repeated) so the output
    keeps the input length.
    """
    if axis not in (2, 3):
        raise ValueError("symconv1d runs along axis 2 or 3")
    c, k = taps.shape
    if k % 2 == 0 or c != x.shape[1]:
        raise ValueError(f"symconv1d: taps {taps.shape} do not fit input {x.shape}")
    r = k // 2
    length = x.shape[axis]
    if r > length:
        raise ValueError(f"symconv1d: signal of length {length} too short for {k} taps")
    xm = np.moveaxis(x.data, axis, -1)
    if r:
        xm = np.concatenate([xm[..., :r][..., ::-1], xm, xm[..., length - r:][..., ::-1]], axis=-1)
    xp = np.moveaxis(xm, -1, axis)

    def sl(j):
        idx = [slice(None)] * 4
        idx[axis] = slice(j, j + length)
        return tuple(idx)

    td = taps.data
    out = np.zeros_like(x.data, dtype=np.result_type(x.data, td))
    for j in range(k):
        out += xp[sl(j)] * td[:, j].reshape(1, c, 1, 1)

    def backward(g):
        gxp = np.zeros_like(xp)
        gt = np.empty_like(td)
        for j in range(k):
            gt[:, j] = (g * xp[sl(j)]).sum(axis=(0, 2, 3))
            gxp[sl(j)] += g * td[:, j].reshape(1, c, 1, 1)
        # fold the reflected margins back onto the samples they copied
        gx = np.moveaxis(gxp, axis, -1)
        core = gx[..., r:r + length].copy()
        if r:
            core[..., :r] += gx[..., :r][..., ::-1]
            core[..., length - r:] += gx[..., r + length:][..., ::-1]
        return np.moveaxis(core, -1, axis), gt

    return _result(out, (x, taps), backward)


# ---------------------------------------------------------------- resampling


def _upsample_axis(a: np.ndarray, axis: int) -> np.ndarray:
    a = np.moveaxis(a, axis, -1)
    prev = np.concatenate([a[..., :1], a[..., :-1]], axis=-1)
    nxt = np.concatenate([a[..., 1:], a[..., -1:]], axis=-1)
    out = np.empty(a.shape[:-1] + (2 * a.shape[-1],), dtype=a.dtype)
    out[..., 0::2] = 0.75 * a + 0.25 * prev
    out[..., 1::2] = 0.75 * a + 0.25 * nxt
    return np.moveaxis(out, -1, axis)


def _upsample_axis_adjoint(g: np.ndarray, axis: int) -> np.ndarray:
    g = np.moveaxis(g, axis, -1)
    ge, go = g[..., 0::2], g[..., 1::2]
    gx = 0.75 * (ge + go)
    gx[..., :-1] += 0.25 * ge[..., 1:]
    gx[..., :1] += 0.25 * ge[..., :1]
    gx[..., 1:] += 0.25 * go[..., :-1]
    gx[..., -1:] += 0.25 * go[..., -1:]
    return np.moveaxis(gx, -1, axis)


def bilinear_upsample2x(x: Tensor) -> Tensor:
    """Bilinear 2x upsampling with half-pixel centres (align_corners=False)."""
    out = _upsample_axis(_upsample_axis(x.data, 2), 3)

    def backward(g):
        return (_upsample_axis_adjoint(_upsample_axis_adjoint(g, 3), 2),)

    return _result(out, (x,), backward)


# ---------------------------------------------------------------- gradient check


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-6,
               coords: Optional[int] = None, rng=None,
               directions: Optional[int] = None) -> float:
    """Worst relative error between tape and central-difference gradients.

    ``f`` maps ``x`` to a scalar Tensor.  ``x`` may be a parameter that
    ``f`` closes over; its data is perturbed in place and restored.  With
    ``coords`` set, only that many randomly chosen coordinates are probed.
    With ``directions`` set, derivatives along that many random Gaussian
    directions are compared instead of coordinates; those stay well scaled
    when individual partials are tiny.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    was = x.requires_grad
    x.requires_grad = True
    prev_grad, x.grad = x.grad, None
    try:
        with Tape() as tape:
            y = f(x)
        if y.size != 1:
            raise ValueError("grad_check needs a scalar-valued function")
        _check_finite(y, "grad_check")
        tape.backward(y)
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad
        x.data = np.ascontiguousarray(x.data)
        if directions is not None:
            rng = np.random.default_rng(0) if rng is None else rng
            return _directional_worst(f, x, analytic, eps, directions, rng)
        flat = x.data.reshape(-1)
        idx = np.arange(flat.size)
        if coords is not None and coords < flat.size:
            rng = np.random.default_rng(0) if rng is None else rng
            idx = rng.choice(flat.size, size=coords, replace=False)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(x).data)
            flat[i] = orig - eps
            fm = float(f(x).data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise ValueError("grad_check: non-finite function value")
            num = (fp - fm) / (2 * eps)
            a = float(analytic.reshape(-1)[i])
            worst = max(worst, _relative(a, num))
        return worst
    finally:
        x.requires_grad = was
        x.grad = prev_grad


def _relative(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def _with_pattern(f, x):
    """Value of ``f(x)`` and the ReLU/clip activation pattern it went through."""
    global _kink_log
    _kink_log = []
    try:
        value = float(f(x).data)
        pattern = [m.copy() for m in _kink_log]
    finally:
        _kink_log = None
    return value, pattern


def _same_pattern(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(p, q) for p, q in zip(a, b))


def _directional_worst(f, x, analytic, eps, directions, rng) -> float:
    """Worst error along random directions with a five-point stencil.

    A direction whose stencil changes any ReLU or clip activation is redrawn
    (at most ten times per direction): the function is not differentiable
    in between, so the difference quotient says nothing about the gradient.
    """
    orig = x.data.copy()
    f0, base = _with_pattern(f, x)
    worst = 0.0
    checked = attempts = 0
    try:
        while checked < directions:
            attempts += 1
            if attempts > 10 * directions:
                raise ValueError("grad_check: every direction crosses a kink")
            v = rng.standard_normal(orig.shape).astype(orig.dtype)
            vals, smooth = {}, True
            for k in (-2, -1, 1, 2):
                x.data = orig + (k * eps) * v
                vals[k], pattern = _with_pattern(f, x)
                smooth = smooth and _same_pattern(pattern, base)
            if not all(np.isfinite(list(vals.values()))):
                raise ValueError("grad_check: non-finite function value")
            if not smooth:
                continue
            checked += 1
            num = (vals[-2] - 8 * vals[-1] + 8 * vals[1] - vals[2]) / (12 * eps)
            a = float((analytic * v).sum())
            # differences below the stencil's own rounding error carry no signal
            rounding = 4 * np.finfo(orig.dtype).eps * 18 * max(map(abs, vals.values())) / (12 * eps)
            if abs(a - num) > rounding:
                worst = max(worst, _relative(a, num))
    finally:
        x.data = orig
    grad_check.skipped += attempts - checked
    return worst


grad_check.skipped = 0
