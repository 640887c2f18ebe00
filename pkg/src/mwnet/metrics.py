"""Segmentation loss and evaluation metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np

from . import tensor as T
from .tensor import Tensor

BCE_CLAMP = 1e-6
DICE_SMOOTH = 1.0


def segmentation_loss(pred: Tensor, gt, w_dice: float = 1.0, w_bce: float = 1.0,
                      smooth: float = DICE_SMOOTH) -> Tensor:
    """Weighted soft-Dice plus mean binary cross-entropy."""
    g = np.asarray(gt.data if isinstance(gt, Tensor) else gt)
    if g.shape != pred.shape:
        raise ValueError(f"loss: prediction {pred.shape} vs ground truth {g.shape}")
    if not np.all((g == 0) | (g == 1)):
        raise ValueError("loss: ground truth must be binary")
    gt_t = Tensor(g, dtype=pred.dtype)
    inter = T.sum_all(pred * gt_t)
    denom = T.sum_all(pred) + float(g.sum()) + smooth
    dice = 1.0 - (inter * 2.0 + smooth) / denom
    p = T.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    bce = -T.mean(gt_t * T.log(p) + (1.0 - gt_t) * T.log(1.0 - p))
    return dice * w_dice + bce * w_bce


@dataclass
class MetricsReport:
    dsc: float
    iou: float
    mae: float
    precision: float
    recall: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    @classmethod
    def mean(cls, reports: Iterable["MetricsReport"]) -> "MetricsReport":
        reports = list(reports)
        if not reports:
            raise ValueError("no reports to average")
        return cls(**{k: float(np.mean([getattr(r, k) for r in reports]))
                      for k in cls.__dataclass_fields__})


def confusion(pred_bin: np.ndarray, gt: np.ndarray) -> tuple[int, int, int, int]:
    p = pred_bin.astype(bool)
    g = gt.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(np.count_nonzero(~p & ~g))
    return tp, fp, fn, tn


def _ratio(num, den, both_empty):
    if den == 0:
        return 1.0 if both_empty else 0.0
    return num / den


def metrics(pred, gt, threshold: float = 0.5) -> MetricsReport:
    """DSC, IoU, MAE, precision and recall of one probability map.

    When prediction and ground truth are both empty every overlap score is
    1; any other vanishing denominator scores 0.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"metrics: shape mismatch {pred.shape} vs {gt.shape}")
    tp, fp, fn, _ = confusion(pred >= threshold, gt)
    empty = tp + fp + fn == 0
    return MetricsReport(
        dsc=_ratio(2 * tp, 2 * tp + fp + fn, empty),
        iou=_ratio(tp, tp + fp + fn, empty),
        mae=float(np.mean(np.abs(pred - gt))),
        precision=_ratio(tp, tp + fp, empty),
        recall=_ratio(tp, tp + fn, empty),
    )


def video_metrics(preds: np.ndarray, masks: np.ndarray, threshold: float = 0.5) -> MetricsReport:
    return MetricsReport.mean(metrics(p, m, threshold) for p, m in zip(preds, masks))
