"""Command-line entry point: ``mwnet <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import checks, plotting
from .checkpoint import CheckpointError
from .model import ModelConfig, load_model
from .synth import generate_dataset, read_dataset, write_dataset, write_pgm
from .train import TrainingDiverged, evaluate, train, write_loss_csv, write_metrics_csv

log = logging.getLogger("mwnet")

BASES = ("haar", "daubechies2", "symlet2", "adaptive")
COMPONENT_ROWS = [
    # name, backbone, memory, hff
    ("plainconv", "plainconv", False, False),
    ("wtconv", "wtconv", False, False),
    ("wtconv+memory", "wtconv", True, False),
    ("wtconv+memory+hff", "wtconv", True, True),
]


def _split_dir(root, name: str) -> Path:
    """``root/name`` when the dataset was written with a split, else ``root``."""
    root = Path(root)
    return root / name if (root / name).is_dir() else root


def _load_config(args) -> ModelConfig:
    overrides = {}
    for key in ("steps", "seed"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    if args.config:
        return ModelConfig.from_file(args.config, **overrides)
    return ModelConfig(**overrides)


def _train_overrides(args) -> dict:
    out = {}
    if args.no_memory:
        out["memory"] = False
    if args.no_hff:
        out["hff"] = False
    if args.backbone:
        out["backbone"] = args.backbone
    if args.basis:
        out["basis"] = args.basis
    return out


def _progress(every: int):
    def report(step, loss):
        if (step + 1) % every == 0:
            log.info("step %d  loss %.4f", step + 1, loss)
    return report


# ---------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    heldout = args.heldout if args.heldout is not None else max(1, args.videos // 4)
    confuser = {"none": False, "half": "half", "all": True}[args.confuser]
    kw = dict(frames=args.frames, size=args.size, confuser=confuser, speckle=args.speckle,
              blur=args.blur)
    out = Path(args.out)
    write_dataset(generate_dataset(args.videos, seed=2 * args.seed, **kw), out / "train")
    if heldout:
        write_dataset(generate_dataset(heldout, seed=2 * args.seed + 1, **kw), out / "test")
    print(f"wrote {args.videos} training and {heldout} held-out videos to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args).replace(**_train_overrides(args))
    videos = read_dataset(_split_dir(args.data, "train"))
    cfg = cfg.replace(resolution=videos[0].frames.shape[1])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    result = train(videos, cfg, checkpoint_path=out, on_step=_progress(args.log_every))
    write_loss_csv(out.with_suffix(".loss.csv"), result.losses)
    plotting.loss_curve(result.losses, out.with_suffix(".loss.png"))
    print(f"trained {cfg.steps} steps in {result.seconds:.0f} s; "
          f"final loss {np.mean(result.losses[-10:]):.4f}; checkpoint {out}")
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.ckpt)
    data_dir = _split_dir(args.data, "test")
    videos = read_dataset(data_dir)
    names = [p.name for p in sorted(data_dir.glob("video*")) if p.is_dir()]
    per_frame: list = []
    agg, reports = evaluate(model, videos, args.threshold, per_frame=per_frame)
    report = Path(args.report)
    report.parent.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(report, reports, agg, names)
    with open(report.with_suffix(".frames.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        keys = list(agg.as_dict())
        w.writerow(["video", "frame"] + keys)
        for vi, t, m in per_frame:
            w.writerow([names[vi], t] + [f"{getattr(m, k):.6f}" for k in keys])
    plotting.metric_bars({n: r.dsc for n, r in zip(names, reports)},
                         report.with_suffix(".dsc.png"), title="held-out DSC per video")
    first = videos[0]
    preds = model.predict(first.frames)
    plotting.mask_overlay(first.frames, first.masks, preds, report.with_suffix(".overlay.png"),
                          threshold=args.threshold)
    if args.dump_masks:
        _dump_masks(model, videos, names, Path(args.dump_masks), args.threshold)
    print("  ".join(f"{k}={v:.4f}" for k, v in agg.as_dict().items()))
    return 0


def _dump_masks(model, videos, names, root: Path, threshold: float):
    for name, v in zip(names, videos):
        d = root / name
        d.mkdir(parents=True, exist_ok=True)
        for t, p in enumerate(model.predict(v.frames)):
            write_pgm(d / f"pred_{t:04d}.pgm", (p >= threshold).astype(np.uint8) * 255)


def cmd_check(args) -> int:
    return 0 if checks.run_suite(args.suite) else 1


def _ablation_rows(grid: str):
    if grid in ("components", "all"):
        for name, backbone, memory, hff in COMPONENT_ROWS:
            yield name, dict(backbone=backbone, memory=memory, hff=hff)
    if grid in ("basis", "all"):
        for basis in BASES:
            yield f"basis={basis}", dict(basis=basis)


def cmd_ablate(args) -> int:
    base = _load_config(args)
    train_videos = read_dataset(_split_dir(args.data, "train"))
    test_videos = read_dataset(_split_dir(args.data, "test"))
    base = base.replace(resolution=train_videos[0].frames.shape[1])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, changes in _ablation_rows(args.grid):
        cfg = base.replace(**changes)
        log.info("training %s", name)
        result = train(train_videos, cfg, on_step=_progress(args.log_every))
        agg, _ = evaluate(result.model, test_videos)
        rows.append((name, cfg, agg, result.seconds))
        print(f"{name}: dsc={agg.dsc:.4f}")
    keys = list(rows[0][2].as_dict())
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "backbone", "memory", "hff", "basis"] + keys + ["seconds"])
        for name, cfg, agg, secs in rows:
            w.writerow([name, cfg.backbone, int(cfg.memory), int(cfg.hff), cfg.basis]
                       + [f"{getattr(agg, k):.6f}" for k in keys] + [f"{secs:.1f}"])
    plotting.metric_bars({name: agg.dsc for name, _, agg, _ in rows}, out.with_suffix(".png"),
                         title="held-out DSC by variant")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mwnet", description="Wavelet/memory video segmentation "
                                "on synthetic ultrasound-like clips.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic train/test dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--videos", type=int, default=24)
    g.add_argument("--frames", type=int, default=30)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--heldout", type=int, default=None,
                   help="held-out videos (default: a quarter of --videos)")
    g.add_argument("--confuser", nargs="?", const="all", default="half",
                   choices=("none", "half", "all"),
                   help="static look-alike regions; bare flag puts one in every video")
    g.add_argument("--speckle", type=float, default=0.25)
    g.add_argument("--blur", type=float, default=1.0)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--no-memory", action="store_true")
    t.add_argument("--no-hff", action="store_true")
    t.add_argument("--backbone", choices=("wtconv", "plainconv"))
    t.add_argument("--basis", choices=BASES)
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--log-every", type=int, default=50)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on held-out videos")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--dump-masks")
    e.add_argument("--threshold", type=float, default=0.5)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("check", help="run an invariant suite")
    c.add_argument("--suite", required=True, choices=sorted(checks.SUITES))
    c.set_defaults(func=cmd_check)

    a = sub.add_parser("ablate", help="train and evaluate an ablation grid")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--config")
    a.add_argument("--grid", choices=("components", "basis", "all"), default="components")
    a.add_argument("--steps", type=int)
    a.add_argument("--seed", type=int)
    a.add_argument("--log-every", type=int, default=50)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, CheckpointError, TrainingDiverged) as exc:
        msg = str(exc).strip("'\"").splitlines()[0] if str(exc) else type(exc).__name__
        print(f"mwnet {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
