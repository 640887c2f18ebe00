"""Randomized invariant suites shared by the ``check`` command and the tests.

Each suite returns a list of :class:`CheckResult`; a suite passes when all
of its results pass.  Everything is seeded, so a failure reproduces.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from . import tensor as T
from .decoder import HFF
from .encoder import Block, ConvLSTMCell, ConvLSTMState, WTConv
from .memory import MemoryBank, cross_attention_read, eviction_index, memory_fuse
from .metrics import metrics, segmentation_loss
from .model import ModelConfig, MWNet
from .nn import Conv2d, PointwiseMLP
from .tensor import Tensor
from .wavelet import FIXED_BASES, LiftingParams, Subbands, awt2, iawt2, iwt2, wt2

RECON_TOL = 1e-6
ENERGY_TOL = 1e-5
GRAD_TOL = 1e-5
MODEL_GRAD_TOL = 1e-4
ATTN_TOL = 1e-6


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    limit: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return f"{status}  {self.name}: {self.value:.3g} (limit {self.limit:.3g}){extra}"


def _below(name, value, limit, detail=""):
    return CheckResult(name, bool(value < limit), float(value), float(limit), detail)


# ---------------------------------------------------------------- reconstruction


def _random_image(rng, min_side=4, max_side=16):
    n = int(rng.integers(1, 3))
    c = int(rng.integers(1, 4))
    h, w = (2 * int(rng.integers(min_side // 2, max_side // 2 + 1)) for _ in range(2))
    return rng.standard_normal((n, c, h, w))


def _random_lifting(rng, c):
    k = int(rng.choice([1, 3, 5]))
    return LiftingParams.from_taps(rng.standard_normal((c, k)), rng.standard_normal((c, k)))


def reconstruction_suite(cases: int = 500, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    start = time.perf_counter()
    with T.precision(np.float64):
        for basis in FIXED_BASES:
            worst = 0.0
            for _ in range(cases):
                x = Tensor(_random_image(rng))
                back = iwt2(wt2(x, basis), basis)
                worst = max(worst, float(np.abs(back.data - x.data).max()))
            results.append(_below(f"iwt2(wt2(x)) == x [{basis}]", worst, RECON_TOL,
                                  f"{cases} cases"))
        worst = 0.0
        for _ in range(cases):
            x = Tensor(_random_image(rng))
            c = x.shape[1]
            ph, pv = _random_lifting(rng, c), _random_lifting(rng, c)
            back = iawt2(awt2(x, ph, pv), ph, pv)
            worst = max(worst, float(np.abs(back.data - x.data).max()))
        results.append(_below("iawt2(awt2(x)) == x [random taps]", worst, RECON_TOL,
                              f"{cases} cases"))
        worst = 0.0
        for _ in range(cases):
            x = Tensor(_random_image(rng))
            s = wt2(x, "haar")
            energy = sum(float((b.data ** 2).sum()) for b in s)
            ref = float((x.data ** 2).sum())
            worst = max(worst, abs(energy - ref) / ref)
        results.append(_below("Haar energy conservation", worst, ENERGY_TOL, f"{cases} cases"))
    results.append(_below("reconstruction runtime [s]", time.perf_counter() - start, 10.0))
    return results


# ---------------------------------------------------------------- gradients


def _projected(f: Callable[[], Tensor], rng) -> Callable[[], Tensor]:
    """Scalarize an output with a fixed random projection."""
    cache = {}

    def scalar():
        y = f()
        if isinstance(y, (tuple, list)):
            y = T.concat([T.reshape(t, (1, -1)) for t in y], axis=1)
        if "r" not in cache:
            cache["r"] = Tensor(rng.standard_normal(y.shape))
        return T.sum_all(y * cache["r"])

    return scalar


# Step of the five-point directional differences.  Smaller steps drown the
# weakly gated decoder paths in rounding noise; larger ones straddle so many
# ReLU kinks that few directions survive the redraw rule.
FD_STEP = 1e-5


def _worst(case_maker, instances, rng, directions=3) -> float:
    """Max relative error over ``instances`` random cases.

    ``case_maker(rng)`` returns ``(fn, wrt)``: a zero-argument function of
    the closed-over tensors and the tensors to probe.  Each probed tensor is
    checked along random directions.
    """
    worst = 0.0
    for _ in range(instances):
        fn, wrt = case_maker(rng)
        scalar = _projected(fn, rng)
        for x in wrt:
            err = T.grad_check(lambda _x: scalar(), x, eps=FD_STEP, rng=rng,
                               directions=directions)
            worst = max(worst, err)
    return worst


def _t(rng, *shape, positive=False, away_from=None):
    a = rng.standard_normal(shape)
    if positive:
        a = np.abs(a) + 0.5
    if away_from is not None:
        # keep samples clear of kinks so central differences stay valid
        for k in away_from:
            near = np.abs(a - k) < 1e-3
            a[near] += 1e-2
    return Tensor(a)


def _img(rng, n=None, c=None, h=None, w=None, **kw):
    n = n or int(rng.integers(1, 3))
    c = c or int(rng.integers(1, 4))
    h = h or 2 * int(rng.integers(2, 5))
    w = w or 2 * int(rng.integers(2, 5))
    return _t(rng, n, c, h, w, **kw)


def _op_cases() -> dict[str, Callable]:
    cases = {}

    def binary(op, positive_b=False):
        def make(rng):
            a = _img(rng)
            b = Tensor(rng.standard_normal(a.shape))
            if positive_b:
                b = Tensor(np.abs(b.data) + 0.5)
            return (lambda: op(a, b)), (a, b)
        return make

    def unary(op, **kw):
        def make(rng):
            x = _img(rng, **kw)
            return (lambda: op(x)), (x,)
        return make

    cases["add"] = binary(T.add)
    cases["sub"] = binary(T.sub)
    cases["mul"] = binary(T.mul)
    cases["div"] = binary(T.div, positive_b=True)
    cases["scale"] = unary(lambda x: T.scale(x, -1.7))
    cases["add_scalar"] = unary(lambda x: T.add_scalar(x, 0.3))
    cases["sigmoid"] = unary(T.sigmoid)
    cases["tanh"] = unary(T.tanh)
    cases["relu"] = unary(T.relu, away_from=(0.0,))
    cases["log"] = unary(T.log, positive=True)
    cases["clip"] = unary(lambda x: T.clip(x, -0.5, 0.5), away_from=(-0.5, 0.5))
    cases["sum_all"] = unary(T.sum_all)
    cases["mean"] = unary(T.mean)
    cases["global_avgpool"] = unary(T.global_avgpool)
    cases["avgpool2x"] = unary(T.avgpool2x)
    cases["reshape"] = unary(lambda x: T.reshape(x, (x.shape[0], -1)))
    cases["transpose"] = unary(lambda x: T.transpose(x, (0, 2, 3, 1)))
    cases["split_channels"] = unary(lambda x: T.split_channels(x, 2), c=4)
    cases["take_every_other"] = unary(lambda x: T.take_every_other(x, 3, 1))
    cases["bilinear_upsample2x"] = unary(T.bilinear_upsample2x)
    cases["softmax_rows"] = unary(lambda x: T.softmax_rows(x))

    def channel_scale(rng):
        x = _img(rng)
        g = _t(rng, x.shape[0], x.shape[1], 1, 1)
        return (lambda: T.channel_scale(x, g)), (x, g)

    def concat(rng):
        a = _img(rng, c=2, h=4, w=6)
        b = Tensor(rng.standard_normal((a.shape[0], 3, 4, 6)))
        return (lambda: T.concat([a, b], axis=1)), (a, b)

    def gather_batch(rng):
        x = _img(rng, n=3)
        idx = rng.integers(0, 3, size=5)
        return (lambda: T.gather_batch(x, idx)), (x,)

    def select_batch(rng):
        x = _img(rng, n=3)
        i = int(rng.integers(0, 3))
        return (lambda: T.select_batch(x, i)), (x,)

    def interleave(rng):
        a = _img(rng)
        b = Tensor(rng.standard_normal(a.shape))
        axis = int(rng.integers(2, 4))
        return (lambda: T.interleave(a, b, axis)), (a, b)

    def matmul(rng):
        m, k, p = (int(v) for v in rng.integers(1, 6, size=3))
        a = _t(rng, 2, m, k)
        b = _t(rng, k, p) if rng.random() < 0.5 else _t(rng, 2, k, p)
        return (lambda: T.matmul(a, b)), (a, b)

    def layernorm(rng):
        # with two channels the normalized output is ~sign(x1 - x2): flat in x
        x = _img(rng, c=int(rng.integers(3, 6)))
        c = x.shape[1]
        gain, bias = _t(rng, c), _t(rng, c)
        return (lambda: T.layernorm_channels(x, gain, bias)), (x, gain, bias)

    def conv(kind):
        def make(rng):
            if kind == "pointwise":
                x = _img(rng)
                w = _t(rng, 3, x.shape[1], 1, 1)
                b = _t(rng, 3)
                return (lambda: T.conv2d(x, w, b)), (x, w, b)
            if kind == "depthwise":
                x = _img(rng)
                c = x.shape[1]
                w = _t(rng, c, 1, 3, 3)
                return (lambda: T.conv2d(x, w, None, 1, 1, c)), (x, w)
            if kind == "strided":
                x = _img(rng)
                w = _t(rng, 2, x.shape[1], 2, 2)
                b = _t(rng, 2)
                return (lambda: T.conv2d(x, w, b, stride=2)), (x, w, b)
            x = _img(rng, c=4)
            w = _t(rng, 4, 2, 3, 3)
            b = _t(rng, 4)
            return (lambda: T.conv2d(x, w, b, 1, 1, groups=2)), (x, w, b)
        return make

    def symconv(rng):
        x = _img(rng)
        k = int(rng.choice([1, 3, 5]))
        taps = _t(rng, x.shape[1], k)
        axis = int(rng.integers(2, 4))
        return (lambda: T.symconv1d(x, taps, axis)), (x, taps)

    def fixed_wavelet(rng):
        x = _img(rng)
        basis = str(rng.choice(FIXED_BASES))
        return (lambda: tuple(wt2(x, basis))), (x,)

    def fixed_inverse(rng):
        bands = [_img(rng, n=1, c=2, h=4, w=4) for _ in range(4)]
        basis = str(rng.choice(FIXED_BASES))
        return (lambda: iwt2(Subbands(*bands), basis)), tuple(bands)

    def adaptive_wavelet(rng):
        x = _img(rng)
        c = x.shape[1]
        ph, pv = _random_lifting(rng, c), _random_lifting(rng, c)
        return (lambda: tuple(awt2(x, ph, pv))), (x, ph.predictor, ph.updater, pv.predictor)

    def adaptive_inverse(rng):
        bands = [_img(rng, n=1, c=2, h=4, w=4) for _ in range(4)]
        ph, pv = _random_lifting(rng, 2), _random_lifting(rng, 2)
        return (lambda: iawt2(Subbands(*bands), ph, pv)), (bands[0], bands[3], pv.updater, ph.predictor)

    cases.update({
        "channel_scale": channel_scale, "concat": concat, "gather_batch": gather_batch,
        "select_batch": select_batch, "interleave": interleave, "matmul": matmul,
        "layernorm_channels": layernorm, "conv2d[pointwise]": conv("pointwise"),
        "conv2d[depthwise]": conv("depthwise"), "conv2d[strided]": conv("strided"),
        "conv2d[grouped]": conv("grouped"), "symconv1d": symconv, "wt2": fixed_wavelet,
        "iwt2": fixed_inverse, "awt2": adaptive_wavelet, "iawt2": adaptive_inverse,
    })
    return cases


def _some_params(module, rng, count=3):
    params = module.parameters()
    idx = rng.choice(len(params), size=min(count, len(params)), replace=False)
    return [params[i] for i in idx]


def _perturb(module, rng, scale=0.3):
    # move zero-initialized parameters off their special values
    for p in module.parameters():
        p.data = p.data + scale * rng.standard_normal(p.shape)


def _block_cases() -> dict[str, Callable]:
    def wtconv_block(rng):
        c = int(rng.integers(3, 5))
        blk = Block(rng, c, WTConv(rng, c, depth=2))
        _perturb(blk, rng)
        x = _img(rng, n=1, c=c, h=8, w=8)
        return (lambda: blk(x)), (x, *_some_params(blk, rng))

    def convlstm(rng):
        c = int(rng.integers(1, 3))
        cell = ConvLSTMCell(rng, c)
        _perturb(cell, rng)
        f, h, cc = (_img(rng, n=1, c=c, h=4, w=4) for _ in range(3))
        return (lambda: tuple(cell(f, ConvLSTMState(h, cc)))), (f, h, cc, cell.gates.weight)

    def memory_read_fuse(rng):
        c = 2
        bank = MemoryBank(rng, c)
        _perturb(bank, rng)
        f_t = _img(rng, n=1, c=c, h=4, w=4)
        entries = [_img(rng, n=1, c=c, h=2, w=2) for _ in range(int(rng.integers(1, 4)))]

        def fn():
            f_l = cross_attention_read(f_t, entries, bank.wq_long, bank.wk_long, bank.wv_long)
            f_s = cross_attention_read(f_t, entries[-2:], bank.wq_short, bank.wk_short,
                                       bank.wv_short)
            return memory_fuse(f_t, f_l, f_s, bank.fuse_conv, bank.ffn)

        return fn, (f_t, entries[0], bank.wq_long, bank.wv_short, bank.fuse_conv.weight)

    def hff(rng):
        deep, skip, width = 3, 2, 2
        mod = HFF(rng, deep, skip, width, basis=str(rng.choice(("adaptive",) + FIXED_BASES)))
        _perturb(mod, rng)
        z = _img(rng, n=1, c=deep, h=4, w=4)
        x = _img(rng, n=1, c=skip, h=8, w=8)
        return (lambda: mod(z, x)), (z, x, *_some_params(mod, rng))

    def loss(rng):
        logits = _img(rng, n=1, c=1)
        gt = (rng.random(logits.shape) < 0.3).astype(float)
        return (lambda: segmentation_loss(T.sigmoid(logits), gt)), (logits,)

    return {"WTConv block": wtconv_block, "ConvLSTM cell": convlstm,
            "memory read+fuse": memory_read_fuse, "HFF module": hff,
            "segmentation loss": loss}


def _tiny_model_case(rng):
    cfg = ModelConfig(num_stages=2, channels=(2, 3), blocks=(1, 1), decoder_width=2,
                      resolution=16, seed=int(rng.integers(1 << 30)))
    model = MWNet(cfg)
    _perturb(model, rng, scale=0.1)
    frame = rng.random((1, 16, 16))
    gt = (rng.random((1, 1, 16, 16)) < 0.3).astype(float)
    params = _some_params(model, rng, count=4)
    return (lambda: segmentation_loss(model.forward_section(frame), gt)), params


def gradient_suite(instances: int = 20, seed: int = 0, directions: int = 3,
                   only: Iterable[str] | None = None) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    start = time.perf_counter()
    cases = {**_op_cases(), **_block_cases()}
    if only is not None:
        cases = {k: v for k, v in cases.items() if k in set(only)}
    with T.precision(np.float64):
        for name, maker in cases.items():
            worst = _worst(maker, instances, rng, directions)
            results.append(_below(f"grad {name}", worst, GRAD_TOL, f"{instances} instances"))
        if only is None or "end-to-end model" in set(only):
            worst = _worst(_tiny_model_case, 2, rng, directions=3)
            results.append(_below("grad end-to-end model", worst, MODEL_GRAD_TOL,
                                  "16x16, one frame"))
    results.append(_below("gradient runtime [s]", time.perf_counter() - start, 120.0))
    return results


# ---------------------------------------------------------------- memory


def memory_suite(sequences: int = 10_000, seed: int = 0, long_capacity: int = 5,
                 short_capacity: int = 2) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    bank = MemoryBank(np.random.default_rng(0), 2, long_capacity, short_capacity)
    over_long = over_short = lost_first = nondeterministic = 0
    for _ in range(sequences):
        length = int(rng.integers(1, 16))
        entries = [Tensor(rng.standard_normal((1, 2, 2, 2))) for _ in range(length)]
        bank.reset()
        evicted = []
        for e in entries:
            if len(bank.long) == bank.long_capacity:
                evicted.append(eviction_index([m.data for m in bank.long + [e]]))
            bank.short_update(e)
            bank.long_update(e)
            over_long += len(bank.long) > long_capacity
            over_short += len(bank.short) > short_capacity
            lost_first += bank.long[0] is not entries[0]
        # same history must give the same evictions
        bank.reset()
        replay = []
        for e in entries:
            if len(bank.long) == bank.long_capacity:
                replay.append(eviction_index([m.data for m in bank.long + [e]]))
            bank.long_update(e)
        nondeterministic += replay != evicted or 0 in evicted
    results = [
        _below("long bank over capacity", over_long, 1, f"{sequences} sequences"),
        _below("short bank over capacity", over_short, 1),
        _below("first long entry evicted", lost_first, 1),
        _below("non-deterministic eviction", nondeterministic, 1),
    ]

    with T.precision(np.float64):
        worst_mem = worst_query = 0.0
        for _ in range(200):
            c = int(rng.integers(1, 5))
            w = [Tensor(rng.standard_normal((c, c))) for _ in range(3)]
            f_t = Tensor(rng.standard_normal((1, c, 4, 4)))
            entries = [Tensor(rng.standard_normal((1, c, 2, 2))) for _ in range(int(rng.integers(1, 5)))]
            base = cross_attention_read(f_t, entries, *w).data
            perm = rng.permutation(len(entries))
            shuffled = cross_attention_read(f_t, [entries[i] for i in perm], *w).data
            worst_mem = max(worst_mem, float(np.abs(shuffled - base).max()))
            pix = rng.permutation(16)
            f_perm = Tensor(f_t.data.reshape(1, c, 16)[:, :, pix].reshape(1, c, 4, 4))
            out = cross_attention_read(f_perm, entries, *w).data.reshape(1, c, 16)
            worst_query = max(worst_query,
                              float(np.abs(out - base.reshape(1, c, 16)[:, :, pix]).max()))
    results.append(_below("attention invariant to memory order", worst_mem, ATTN_TOL))
    results.append(_below("attention equivariant to query pixels", worst_query, ATTN_TOL))
    return results


# ---------------------------------------------------------------- metrics


def brute_force_metrics(pred_bin: np.ndarray, gt: np.ndarray) -> dict[str, float]:
    """Set-count reference built from coordinate sets."""
    p = {tuple(i) for i in np.argwhere(pred_bin)}
    g = {tuple(i) for i in np.argwhere(gt)}
    tp, fp, fn = len(p & g), len(p - g), len(g - p)
    empty = not p and not g

    def ratio(num, den):
        return (1.0 if empty else 0.0) if den == 0 else num / den

    diff = sum(abs(float(a) - float(b)) for a, b in zip(pred_bin.ravel(), gt.ravel()))
    return {"dsc": ratio(2 * tp, 2 * tp + fp + fn), "iou": ratio(tp, tp + fp + fn),
            "mae": diff / gt.size, "precision": ratio(tp, tp + fp), "recall": ratio(tp, tp + fn)}


def metrics_suite(pairs: int = 1000, seed: int = 0, side: int = 16) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    mismatches = 0
    both_empty = 0
    for i in range(pairs):
        density_p, density_g = rng.choice([0.0, 0.02, 0.2, 0.6], size=2)
        if i % 50 == 0:
            density_p = density_g = 0.0
        pred = (rng.random((side, side)) < density_p).astype(np.float64)
        gt = (rng.random((side, side)) < density_g).astype(np.uint8)
        both_empty += not pred.any() and not gt.any()
        got = metrics(pred, gt).as_dict()
        mismatches += got != brute_force_metrics(pred, gt)
    return [_below("metric mismatches vs set counts", mismatches, 1,
                   f"{pairs} pairs, {both_empty} both-empty")]


# ---------------------------------------------------------------- receptive field


def impulse_support(module, channels: int, size: int) -> tuple[int, int]:
    """Row and column extent of the response to a centred unit impulse.

    The impulse sits in channel 0 only; an impulse equal across channels
    would be flattened by a channel LayerNorm.
    """
    with T.precision(np.float64):
        zero = Tensor(np.zeros((1, channels, size, size)))
        x = np.zeros((1, channels, size, size))
        x[0, 0, size // 2, size // 2] = 1.0
        diff = np.abs(module(Tensor(x)).data - module(zero).data).max(axis=(0, 1))
    rows, cols = np.nonzero(diff > 1e-12)
    return int(rows.max() - rows.min() + 1), int(cols.max() - cols.min() + 1)


def receptive_field_suite(depths: Iterable[int] = (3, 4), kernel: int = 3,
                          seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    with T.precision(np.float64):
        conv = Conv2d(rng, 1, 1, kernel, bias=False)
        base = impulse_support(conv, 1, 32)[0]
        for d in depths:
            c = 2
            size = 8 * 2 ** d
            blk = Block(rng, c, WTConv(rng, c, d, kernel))
            got = impulse_support(blk, c, size)
            want = base * 2 ** d
            bad = abs(got[0] - want) + abs(got[1] - want)
            results.append(CheckResult(f"WTConv block support, depth {d}", bad == 0,
                                       float(got[0]), float(want),
                                       f"{got[0]}x{got[1]} vs 3x3 conv {base}x{base}"))
    return results


SUITES: dict[str, Callable[[], list[CheckResult]]] = {
    "reconstruction": reconstruction_suite,
    "gradients": gradient_suite,
    "memory": memory_suite,
    "metrics": metrics_suite,
    "receptive-field": receptive_field_suite,
}


def run_suite(name: str, echo: Callable[[str], None] = print) -> bool:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    results = SUITES[name]()
    for r in results:
        echo(r.line())
    ok = all(r.passed for r in results)
    echo(f"{name}: {'PASS' if ok else 'FAIL'} ({sum(r.passed for r in results)}/{len(results)})")
    return ok
