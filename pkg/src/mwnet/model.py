"""Model configuration, assembly and the per-section forward pass."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import checkpoint
from . import tensor as T
from .decoder import Decoder
from .encoder import Encoder, EncoderConfig
from .memory import MemoryBank
from .nn import Module
from .tensor import Tensor


@dataclass
class ModelConfig:
    num_stages: int = 3
    channels: tuple[int, ...] = (32, 64, 128)
    blocks: tuple[int, ...] = (2, 2, 2)
    t0: int = 2
    kernel_size: int = 3
    decoder_width: int = 32
    long_capacity: int = 5
    short_capacity: int = 2
    section_length: int = 10
    resolution: int = 64
    w_dice: float = 1.0
    w_bce: float = 1.0
    lr: float = 1e-3
    steps: int = 2000
    seed: int = 0
    memory: bool = True
    hff: bool = True
    backbone: str = "wtconv"
    basis: str = "adaptive"
    encoder_basis: str = "haar"
    augment: bool = True
    checkpoint_every: int = 500

    def __post_init__(self):
        for f in fields(self):
            setattr(self, f.name, _coerce(f, getattr(self, f.name)))
        if self.section_length < 1:
            raise ValueError("section_length must be at least 1")
        self.encoder_config().check_resolution(self.resolution, self.resolution)
        if self.basis not in ("adaptive", "haar", "daubechies2", "symlet2"):
            raise ValueError(f"unknown basis {self.basis!r}")

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(num_stages=self.num_stages, channels=self.channels,
                             blocks=self.blocks, t0=self.t0, kernel_size=self.kernel_size,
                             basis=self.encoder_basis, backbone=self.backbone,
                             temporal=self.memory)

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(i) for i in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, **overrides) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            values[key] = val
        values.update(overrides)
        return cls(**values)

    @classmethod
    def from_file(cls, path, **overrides) -> "ModelConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), **overrides)


def _coerce(f, v):
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    if kind.startswith("tuple"):
        if isinstance(v, str):
            v = [s for s in v.replace(" ", "").split(",") if s]
        return tuple(int(i) for i in v)
    if kind == "bool":
        if isinstance(v, str):
            low = v.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"{f.name}: not a boolean: {v!r}")
            return low in ("true", "1", "yes")
        return bool(v)
    if kind == "int":
        return int(v)
    if kind == "float":
        return float(v)
    return str(v)


class MWNet(Module):
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.encoder = Encoder(rng, cfg.encoder_config())
        self.bank = (MemoryBank(rng, cfg.channels[-1], cfg.long_capacity, cfg.short_capacity)
                     if cfg.memory else None)
        self.decoder = Decoder(rng, cfg.channels, cfg.decoder_width, cfg.basis, cfg.hff)

    def forward_section(self, frames) -> Tensor:
        """Probability maps (T, 1, H, W) for the frames of one section.

        Backbone and decoder run on all frames as one batch; the memory bank
        is stepped frame by frame.  The bank and temporal buffers start
        empty, so the output depends only on the frames passed in.
        """
        frames = np.asarray(frames)
        if frames.ndim == 4:
            frames = frames[:, 0]
        if frames.ndim != 3 or len(frames) == 0:
            raise ValueError(f"expected frames of shape (T, H, W), got {frames.shape}")
        hw = frames.shape[1:]
        self.cfg.encoder_config().check_resolution(*hw)
        x = Tensor((frames[:, None] - 0.5) * 2.0)
        feats = self.encoder.fuse_section(self.encoder.backbone(x))
        if self.bank is not None:
            self.bank.reset()
            deep = feats[-1]
            feats[-1] = T.concat([self.bank.step(T.select_batch(deep, t))
                                  for t in range(len(frames))], axis=0)
        return self.decoder(feats, hw)

    def predict(self, frames) -> np.ndarray:
        """Section-wise inference over a whole video; returns (T, H, W)."""
        frames = np.asarray(frames)
        n = self.cfg.section_length
        out = []
        for start in range(0, len(frames), n):
            out.extend(self.forward_section(frames[start:start + n]).data[:, 0])
        return np.stack(out)


def save_model(model: MWNet, path):
    tensors = {CONFIG_KEY: checkpoint.encode_text(model.cfg.to_text())}
    tensors.update(model.state_dict())
    checkpoint.save_tensors(path, tensors)


def load_model(path) -> MWNet:
    tensors = checkpoint.load_tensors(path)
    if CONFIG_KEY not in tensors:
        raise checkpoint.CheckpointError(f"{path}: no embedded model config")
    cfg = ModelConfig.from_text(checkpoint.decode_text(tensors.pop(CONFIG_KEY)))
    model = MWNet(cfg)
    model.load_state_dict(tensors)
    return model


CONFIG_KEY = checkpoint.CONFIG_KEY
