"""Report figures rendered to image files with the non-interactive backend."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 110,
}
COLORS = ["#0C5DA5", "#00A08A", "#F2AD00", "#F98400", "#5BBCD6", "#B40F20"]


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def loss_curve(losses: Sequence[float], path, smooth: int = 10) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        steps = np.arange(len(losses))
        ax.plot(steps, losses, color=COLORS[0], alpha=0.35, lw=0.8, label="per step")
        if len(losses) >= smooth > 1:
            kernel = np.ones(smooth) / smooth
            ax.plot(steps[smooth - 1:], np.convolve(losses, kernel, mode="valid"),
                    color=COLORS[0], lw=1.5, label=f"{smooth}-step mean")
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        return _save(fig, path)


def metric_bars(values: Mapping[str, float], path, ylabel: str = "DSC",
                title: str | None = None) -> Path:
    """One bar per named run or video, annotated with its value."""
    names = list(values)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(3.0, 0.6 * len(names) + 1.5), 3))
        bars = ax.bar(names, [values[n] for n in names],
                      color=[COLORS[i % len(COLORS)] for i in range(len(names))])
        ax.bar_label(bars, fmt="%.3f", fontsize=7)
        ax.set_ylim(0, 1.05)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        ax.tick_params(axis="x", rotation=30 if len(names) > 4 else 0)
        return _save(fig, path)


def mask_overlay(frames: np.ndarray, masks: np.ndarray, preds: np.ndarray, path,
                 count: int = 6, threshold: float = 0.5) -> Path:
    """Frames with ground-truth (green) and predicted (red) contours."""
    idx = np.linspace(0, len(frames) - 1, min(count, len(frames))).astype(int)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(idx), figsize=(1.6 * len(idx), 1.8), squeeze=False)
        for ax, t in zip(axes[0], idx):
            ax.imshow(frames[t], cmap="gray", vmin=0, vmax=1)
            if masks[t].any():
                ax.contour(masks[t], levels=[0.5], colors="#00C000", linewidths=0.8)
            if (preds[t] >= threshold).any():
                ax.contour(preds[t], levels=[threshold], colors="#E00000", linewidths=0.8)
            ax.set_title(f"t={t}")
            ax.axis("off")
        return _save(fig, path)
