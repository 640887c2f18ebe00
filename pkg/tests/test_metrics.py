import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from mwnet import tensor as T
from mwnet.checks import brute_force_metrics
from mwnet.metrics import MetricsReport, metrics, segmentation_loss, video_metrics
from mwnet.tensor import Tensor, grad_check


def test_perfect_prediction_has_zero_loss(f64):
    ones = np.ones((1, 1, 4, 4))
    assert segmentation_loss(Tensor(ones), ones).item() == pytest.approx(0.0, abs=1e-5)


def test_half_prediction_closed_form(f64):
    n = 64
    gt = np.ones((1, 1, 8, 8))
    pred = Tensor(np.full(gt.shape, 0.5))
    bce = segmentation_loss(pred, gt, w_dice=0.0).item()
    dice = segmentation_loss(pred, gt, w_bce=0.0).item()
    assert bce == pytest.approx(math.log(2), rel=1e-12)
    assert dice == pytest.approx(1 - (n + 1) / (0.5 * n + n + 1), rel=1e-12)


def test_loss_gradient(f64, rng):
    gt = (rng.random((1, 1, 6, 6)) > 0.5).astype(float)
    pred = Tensor(rng.uniform(0.05, 0.95, gt.shape))
    assert grad_check(lambda t: segmentation_loss(t, gt, 1.0, 1.0), pred, directions=3) < 1e-5


def test_loss_rejects_bad_ground_truth():
    pred = Tensor(np.full((1, 1, 2, 2), 0.5))
    with pytest.raises(ValueError, match="binary"):
        segmentation_loss(pred, np.full((1, 1, 2, 2), 0.3))
    with pytest.raises(ValueError, match="ground truth"):
        segmentation_loss(pred, np.ones((1, 1, 3, 3)))


def test_metric_examples():
    gt = np.zeros((4, 4), dtype=np.uint8)
    gt[0, :4] = 1
    pred = np.zeros((4, 4))
    pred[0, :2] = 0.9
    r = metrics(pred, gt)
    assert (r.dsc, r.iou, r.precision, r.recall) == pytest.approx((2 / 3, 0.5, 1.0, 0.5))
    same = metrics(gt.astype(float), gt)
    assert (same.dsc, same.iou, same.precision, same.recall, same.mae) == (1, 1, 1, 1, 0)
    disjoint = metrics(1.0 - gt, gt)
    assert disjoint.dsc == disjoint.iou == 0.0


def test_both_empty_counts_as_perfect():
    r = metrics(np.zeros((3, 3)), np.zeros((3, 3)))
    assert (r.dsc, r.iou, r.precision, r.recall) == (1.0, 1.0, 1.0, 1.0)


def test_empty_prediction_on_object():
    gt = np.zeros((4, 4))
    gt[1, 1] = 1
    r = metrics(np.zeros((4, 4)), gt)
    assert (r.dsc, r.precision, r.recall) == (0.0, 0.0, 0.0)


@settings(max_examples=200, deadline=None)
@given(hnp.arrays(np.float64, (6, 6), elements=st.floats(0, 1)),
       hnp.arrays(np.uint8, (6, 6), elements=st.integers(0, 1)))
def test_metrics_match_set_counting(pred, gt):
    got = metrics(pred, gt).as_dict()
    want = brute_force_metrics(pred >= 0.5, gt)
    for key in ("dsc", "iou", "precision", "recall"):
        assert got[key] == want[key]
    assert got["mae"] == pytest.approx(np.abs(pred - gt).mean(), rel=1e-12)
    assert all(0.0 <= v <= 1.0 for v in got.values())


def test_video_mean_and_shape_check():
    gt = np.zeros((2, 4, 4))
    gt[0, 0, 0] = 1
    preds = gt.astype(float)
    preds[1, 3, 3] = 1.0
    r = video_metrics(preds, gt)
    assert r.dsc == pytest.approx(0.5)
    with pytest.raises(ValueError, match="mismatch"):
        metrics(np.zeros((2, 2)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        MetricsReport.mean([])
