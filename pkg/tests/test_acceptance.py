"""End-to-end acceptance checks.

Each test prints one ``[n] PASS|FAIL`` line; the lines are also collected
in the terminal summary.  The learning checks train real models on the
standard synthetic sets and take most of an hour on one CPU core.
"""

import functools
import time
from pathlib import Path

import numpy as np
import pytest

from mwnet import checks
from mwnet.metrics import video_metrics
from mwnet.model import ModelConfig
from mwnet.synth import standard_split
from mwnet.train import evaluate, train

DESK = Path(__file__).resolve().parents[1] / "configs" / "desk.cfg"
LEARN_DSC = 0.80
LEARN_STEPS = 2000
LEARN_MINUTES = 30.0
ABLATION_STEPS = 800


def verdict(record, number, name, ok, detail):
    record(f"[{number}] {'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return ok


def suite_verdict(record, number, name, results, seconds):
    failed = [r.line() for r in results if not r.passed]
    detail = f"{len(results) - len(failed)}/{len(results)} checks in {seconds:.1f} s"
    if failed:
        detail += "; " + " | ".join(failed)
    return verdict(record, number, name, not failed, detail)


def timed(fn, *args, **kwargs):
    start = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - start


@functools.lru_cache(maxsize=None)
def split(name):
    return standard_split(name)


@functools.lru_cache(maxsize=None)
def run(set_name, steps, **changes):
    """Train on a standard set and evaluate on its held-out half."""
    train_set, heldout = split(set_name)
    cfg = ModelConfig.from_file(DESK, steps=steps, **changes)
    result = train(train_set, cfg)
    agg, _ = evaluate(result.model, heldout)
    return result, agg


def test_1_reconstruction(acceptance_line):
    results, secs = timed(checks.reconstruction_suite, cases=500)
    assert suite_verdict(acceptance_line, 1, "wavelet reconstruction", results, secs)


def test_2_gradients(acceptance_line):
    results, secs = timed(checks.gradient_suite, instances=20)
    assert suite_verdict(acceptance_line, 2, "finite-difference gradients", results, secs)


def test_3_memory(acceptance_line):
    results, secs = timed(checks.memory_suite, sequences=10_000)
    assert suite_verdict(acceptance_line, 3, "memory bank state machine", results, secs)


def test_4_metrics(acceptance_line):
    results, secs = timed(checks.metrics_suite, pairs=1000)
    assert suite_verdict(acceptance_line, 4, "metrics vs set counting", results, secs)


def test_5_learnability(acceptance_line):
    (result, agg), secs = timed(run, "default", LEARN_STEPS)
    _, heldout = split("default")
    baseline = np.mean([video_metrics(np.zeros(v.masks.shape), v.masks).dsc for v in heldout])
    ok = agg.dsc >= LEARN_DSC and secs < 60 * LEARN_MINUTES and baseline < 1e-6
    detail = (f"held-out DSC {agg.dsc:.4f} (need >= {LEARN_DSC}) after {LEARN_STEPS} steps "
              f"in {secs / 60:.1f} min (limit {LEARN_MINUTES:.0f}); all-background DSC "
              f"{baseline:.4f}")
    assert verdict(acceptance_line, 5, "desk-scale learnability", ok, detail)


def test_6_ablation_order(acceptance_line):
    full = run("confuser", ABLATION_STEPS)[1].dsc
    no_memory = run("confuser", ABLATION_STEPS, memory=False)[1].dsc
    plain = run("confuser", ABLATION_STEPS, memory=False, backbone="plainconv")[1].dsc
    ok = full >= no_memory >= plain
    detail = (f"full {full:.4f} >= no-memory {no_memory:.4f} >= plain-conv {plain:.4f} "
              f"({ABLATION_STEPS} steps each, confuser set)")
    assert verdict(acceptance_line, 6, "component ablation order", ok, detail)


def test_7_basis_order(acceptance_line):
    scores = {b: run("blurred", ABLATION_STEPS, basis=b)[1].dsc
              for b in ("adaptive", "haar", "daubechies2")}
    # symlet2 shares db2's filter bank, so the trained model would be identical
    scores["symlet2"] = scores["daubechies2"]
    best_fixed = max(v for k, v in scores.items() if k != "adaptive")
    ok = scores["adaptive"] >= best_fixed
    detail = ", ".join(f"{k} {v:.4f}" for k, v in scores.items()) + \
        f" ({ABLATION_STEPS} steps each, blurred set)"
    assert verdict(acceptance_line, 7, "adaptive basis vs fixed bases", ok, detail)


def test_8_receptive_field(acceptance_line):
    results, secs = timed(checks.receptive_field_suite, depths=(3, 4))
    assert suite_verdict(acceptance_line, 8, "WTConv receptive field", results, secs)


# probes on the trained default-set model; not numbered criteria


def test_training_set_scores_at_least_heldout():
    result, agg = run("default", LEARN_STEPS)
    train_set, _ = split("default")
    train_agg, _ = evaluate(result.model, train_set)
    assert train_agg.dsc >= agg.dsc
    assert all(0.0 <= v <= 1.0 for v in agg.as_dict().values())


@pytest.mark.xfail(strict=True, reason="static blobs are always distractors in the training "
                   "data, so the model learns to drop a target once it stops moving")
def test_static_clip_gives_stable_masks():
    result, _ = run("default", LEARN_STEPS)
    _, heldout = split("default")
    frames = np.repeat(heldout[0].frames[:1], 10, axis=0)
    preds = result.model.forward_section(frames).data[:, 0]
    spread = max(np.abs(a - b).max() for a in preds for b in preds)
    assert spread < 0.05
