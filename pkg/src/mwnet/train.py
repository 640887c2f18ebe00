"""Desk-scale training loop and section-wise evaluation."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .metrics import MetricsReport, metrics, segmentation_loss, video_metrics
from .model import ModelConfig, MWNet, save_model
from .synth import VideoSample



class TrainingDiverged(RuntimeError):
    pass


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    model: MWNet
    losses: list[float] = field(default_factory=list)
    seconds: float = 0.0


def sample_section(rng: np.random.Generator, videos: Sequence[VideoSample], length: int,
                   augment: bool):
    v = videos[rng.integers(len(videos))]
    length = min(length, len(v))
    start = int(rng.integers(0, len(v) - length + 1))
    frames = v.frames[start:start + length]
    masks = v.masks[start:start + length]
    if augment:
        # one flip draw for the whole section keeps it temporally coherent
        if rng.random() < 0.5:
            frames, masks = frames[:, :, ::-1], masks[:, :, ::-1]
        if rng.random() < 0.5:
            frames, masks = frames[:, ::-1], masks[:, ::-1]
    return np.ascontiguousarray(frames), np.ascontiguousarray(masks)


def section_loss(model: MWNet, frames, masks) -> T.Tensor:
    cfg = model.cfg
    preds = model.forward_section(frames)
    total = None
    for t, m in enumerate(masks):
        term = segmentation_loss(T.select_batch(preds, t), m[None, None], cfg.w_dice, cfg.w_bce)
        total = term if total is None else total + term
    return total * (1.0 / len(masks))


def train(videos: Sequence[VideoSample], cfg: ModelConfig, checkpoint_path=None,
          on_step: Optional[Callable[[int, float], None]] = None) -> TrainResult:
    if not videos:
        raise ValueError("training set is empty")
    res = videos[0].frames.shape[1:]
    if res != (cfg.resolution, cfg.resolution):
        raise ValueError(f"data resolution {res} does not match config {cfg.resolution}")
    rng = np.random.default_rng(cfg.seed + 7919)
    model = MWNet(cfg)
    opt = Adam(model.parameters(), lr=cfg.lr)
    result = TrainResult(model)
    t_start = time.perf_counter()
    last_good = None
    for step in range(cfg.steps):
        frames, masks = sample_section(rng, videos, cfg.section_length, cfg.augment)
        with T.Tape() as tape:
            loss = section_loss(model, frames, masks)
        value = loss.item()
        if not np.isfinite(value):
            where = ""
            if checkpoint_path is not None and last_good is not None:
                model.load_state_dict(last_good)
                save_model(model, checkpoint_path)
                where = f"; weights from step {step - 1} saved to {checkpoint_path}"
            raise TrainingDiverged(f"non-finite loss at step {step}{where}")
        model.zero_grad()
        tape.backward(loss)
        if checkpoint_path is not None:
            # weights that just produced a finite loss
            last_good = {k: v.copy() for k, v in model.state_dict().items()}
        opt.step()
        result.losses.append(value)
        if on_step is not None:
            on_step(step, value)
        if checkpoint_path is not None and cfg.checkpoint_every and \
                (step + 1) % cfg.checkpoint_every == 0:
            save_model(model, checkpoint_path)
    result.seconds = time.perf_counter() - t_start
    if checkpoint_path is not None:
        save_model(model, checkpoint_path)
    return result


def evaluate(model: MWNet, videos: Sequence[VideoSample], threshold: float = 0.5,
             per_frame: Optional[list] = None) -> tuple[MetricsReport, list[MetricsReport]]:
    """Aggregate report (mean over videos of per-video frame means) and per-video reports."""
    if not videos:
        raise ValueError("evaluation set is empty")
    res = videos[0].frames.shape[1:]
    if res != (model.cfg.resolution, model.cfg.resolution):
        raise ValueError(f"data resolution {res} does not match checkpoint "
                         f"resolution {model.cfg.resolution}")
    reports = []
    for vi, v in enumerate(videos):
        preds = model.predict(v.frames)
        reports.append(video_metrics(preds, v.masks, threshold))
        if per_frame is not None:
            for t, (p, m) in enumerate(zip(preds, v.masks)):
                per_frame.append((vi, t, metrics(p, m, threshold)))
    return MetricsReport.mean(reports), reports


def write_loss_csv(path, losses: Sequence[float]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, v in enumerate(losses):
            w.writerow([i, f"{v:.6f}"])


def write_metrics_csv(path, reports: Sequence[MetricsReport], aggregate: MetricsReport,
                      names: Optional[Sequence[str]] = None):
    keys = list(aggregate.as_dict())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["video"] + keys)
        for i, r in enumerate(reports):
            w.writerow([names[i] if names else f"video{i:04d}"] + [f"{getattr(r, k):.6f}" for k in keys])
        w.writerow(["aggregate"] + [f"{getattr(aggregate, k):.6f}" for k in keys])


def block_means(losses: Sequence[float], block: int = 10) -> list[float]:
    """Loss smoothed by averaging consecutive non-overlapping blocks."""
    n = len(losses) // block
    return [float(np.mean(losses[i * block:(i + 1) * block])) for i in range(n)]
