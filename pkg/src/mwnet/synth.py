"""Synthetic ultrasound-like videos and their on-disk layout.

A scene is a smooth textured background with one moving dark ellipse (the
target) and optionally a static look-alike ellipse that never appears in
the mask.  Frames are blurred and then corrupted with multiplicative
speckle; masks are the exact rasterized target ellipse.

On disk every video is a directory ``videoNNNN`` holding
``frame_TTTT.pgm`` and ``mask_TTTT.pgm`` (binary 8-bit PGM) plus a
``meta.txt`` of ``key=value`` lines echoing the scene parameters.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter


@dataclass
class SceneSpec:
    frames: int = 30
    height: int = 64
    width: int = 64
    center: tuple[float, float] = (32.0, 32.0)  # (row, col) at t = 0
    velocity: tuple[float, float] = (0.0, 0.0)  # (row, col) per frame
    radii: tuple[float, float] = (6.0, 6.0)
    intensity: float = -0.3
    confuser: Optional[tuple[float, float, float, float]] = None  # row, col, ry, rx
    speckle: float = 0.25
    blur: float = 1.0
    background: float = 0.55
    texture: float = 0.08
    seed: int = 0

    def center_at(self, t: int) -> tuple[float, float]:
        """Straight-line motion that bounces off the frame edges."""
        ry, rx = self.radii
        return (_bounce(self.center[0] + t * self.velocity[0], ry, self.height - 1 - ry),
                _bounce(self.center[1] + t * self.velocity[1], rx, self.width - 1 - rx))

    def validate(self):
        if self.frames < 1 or self.height < 1 or self.width < 1:
            raise ValueError("frames and resolution must be positive")
        if min(self.radii) <= 0:
            raise ValueError("radii must be positive")
        ry, rx = self.radii
        cy, cx = self.center
        if cy - ry < 0 or cy + ry > self.height - 1 or cx - rx < 0 or cx + rx > self.width - 1:
            raise ValueError(f"object starts outside the {self.height}x{self.width} frame "
                             f"(centre {cy:.2f},{cx:.2f}, radii {ry},{rx})")
        if self.speckle < 0 or self.blur < 0:
            raise ValueError("speckle and blur must be non-negative")

    def to_meta(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                v = "none"
            elif isinstance(v, tuple):
                v = ",".join(repr(float(i)) for i in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_meta(cls, text: str) -> "SceneSpec":
        raw = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        kw = {}
        for f in fields(cls):
            if f.name not in raw:
                continue
            v = raw[f.name].strip()
            if f.name in ("center", "velocity", "radii", "confuser"):
                kw[f.name] = None if v == "none" else tuple(float(s) for s in v.split(","))
            elif f.name in ("frames", "height", "width", "seed"):
                kw[f.name] = int(v)
            else:
                kw[f.name] = float(v)
        return cls(**kw)


@dataclass
class VideoSample:
    frames: np.ndarray  # (T, H, W) float in [0, 1]
    masks: np.ndarray  # (T, H, W) uint8 in {0, 1}
    meta: SceneSpec

    def __post_init__(self):
        if self.frames.shape != self.masks.shape:
            raise ValueError(f"frames {self.frames.shape} and masks {self.masks.shape} differ")

    def __len__(self):
        return len(self.frames)


def ellipse_mask(height: int, width: int, cy: float, cx: float, ry: float, rx: float) -> np.ndarray:
    rows = np.arange(height, dtype=np.float64)[:, None]
    cols = np.arange(width, dtype=np.float64)[None, :]
    return (((rows - cy) / ry) ** 2 + ((cols - cx) / rx) ** 2 <= 1.0).astype(np.uint8)


def generate_video(spec: SceneSpec) -> VideoSample:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    tex = gaussian_filter(rng.standard_normal((h, w)), sigma=3.0, mode="wrap")
    tex /= max(tex.std(), 1e-12)
    base = spec.background + spec.texture * tex
    if spec.confuser is not None:
        cy, cx, ry, rx = spec.confuser
        base = base + spec.intensity * ellipse_mask(h, w, cy, cx, ry, rx)
    frames = np.empty((spec.frames, h, w))
    masks = np.empty((spec.frames, h, w), dtype=np.uint8)
    for t in range(spec.frames):
        cy, cx = spec.center_at(t)
        m = ellipse_mask(h, w, cy, cx, *spec.radii)
        img = base + spec.intensity * m
        if spec.blur > 0:
            img = gaussian_filter(img, sigma=spec.blur, mode="nearest")
        if spec.speckle > 0:
            img = img * (1.0 + spec.speckle * rng.standard_normal((h, w)))
        frames[t] = np.clip(img, 0.0, 1.0)
        masks[t] = m
    return VideoSample(frames, masks, spec)


def random_scene(rng: np.random.Generator, frames: int = 30, size: int = 64,
                 confuser: bool = False, speckle: float = 0.25, blur: float = 1.0,
                 radius: tuple[float, float] = (4.0, 8.0),
                 speed: tuple[float, float] = (1.0, 2.0)) -> SceneSpec:
    ry, rx = rng.uniform(*radius, size=2)
    v = rng.uniform(*speed)
    ang = rng.uniform(0, 2 * math.pi)
    center = (rng.uniform(ry, size - 1 - ry), rng.uniform(rx, size - 1 - rx))
    spec = SceneSpec(frames=frames, height=size, width=size, center=center,
                     velocity=(v * math.sin(ang), v * math.cos(ang)), radii=(ry, rx),
                     intensity=-rng.uniform(0.25, 0.35), speckle=speckle, blur=blur,
                     seed=int(rng.integers(2**31)))
    if confuser:
        spec = dataclasses.replace(spec, confuser=_place_confuser(rng, spec, radius))
    return spec


def _bounce(p: float, lo: float, hi: float) -> float:
    span = hi - lo
    if span <= 0:
        return lo
    q = (p - lo) % (2 * span)
    return lo + (q if q <= span else 2 * span - q)


def _place_confuser(rng, spec: SceneSpec, radius) -> Optional[tuple]:
    path = np.array([spec.center_at(t) for t in range(spec.frames)])
    r_obj = max(spec.radii)
    for _ in range(500):
        cry, crx = rng.uniform(*radius, size=2)
        cy = rng.uniform(cry, spec.height - 1 - cry)
        cx = rng.uniform(crx, spec.width - 1 - crx)
        gap = np.min(np.hypot(path[:, 0] - cy, path[:, 1] - cx))
        if gap >= r_obj + max(cry, crx) + 2:
            return (cy, cx, cry, crx)
    return None


def generate_dataset(videos: int, frames: int = 30, size: int = 64, seed: int = 0,
                     confuser: str | bool = "half", speckle: float = 0.25,
                     blur: float = 1.0) -> list[VideoSample]:
    """Independent videos; ``confuser`` is True, False or 'half' (odd indices)."""
    out = []
    for i in range(videos):
        rng = np.random.default_rng([seed, i])
        with_conf = (i % 2 == 1) if confuser == "half" else bool(confuser)
        spec = random_scene(rng, frames, size, with_conf, speckle, blur)
        out.append(generate_video(spec))
    return out


STANDARD_SETS = {
    # name: (generate_dataset kwargs, train seed, held-out seed)
    "default": dict(confuser="half", speckle=0.25, blur=1.0),
    "confuser": dict(confuser=True, speckle=0.25, blur=1.0),
    "blurred": dict(confuser="half", speckle=0.25, blur=2.5),
}


def standard_split(name: str = "default", train: int = 24, heldout: int = 6, frames: int = 30,
                   size: int = 64, seed: int = 0):
    kw = STANDARD_SETS[name]
    return (generate_dataset(train, frames, size, seed=2 * seed, **kw),
            generate_dataset(heldout, frames, size, seed=2 * seed + 1, **kw))


# ---------------------------------------------------------------- PGM I/O


def write_pgm(path, img: np.ndarray):
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("write_pgm expects a 2-D uint8 array")
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(buf[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ValueError(f"{path}: malformed PGM header") from None
    if maxval != 255 or w <= 0 or h <= 0:
        raise ValueError(f"{path}: unsupported PGM header {w}x{h} maxval {maxval}")
    pos += 1  # single whitespace byte before the raster
    data = buf[pos:]
    if len(data) != w * h:
        raise ValueError(f"{path}: expected {w * h} pixel bytes, found {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


def quantize(frames: np.ndarray) -> np.ndarray:
    return np.round(np.clip(frames, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_dataset(samples: Sequence[VideoSample], root):
    root = Path(root)
    for i, s in enumerate(samples):
        d = root / f"video{i:04d}"
        d.mkdir(parents=True, exist_ok=True)
        q = quantize(s.frames)
        for t in range(len(s)):
            write_pgm(d / f"frame_{t:04d}.pgm", q[t])
            write_pgm(d / f"mask_{t:04d}.pgm", (s.masks[t] > 0).astype(np.uint8) * 255)
        (d / "meta.txt").write_text(s.meta.to_meta(), encoding="utf-8")


def read_video(d) -> VideoSample:
    d = Path(d)
    frame_files = sorted(d.glob("frame_*.pgm"))
    if not frame_files:
        raise ValueError(f"{d}: no frame_*.pgm files")
    frames, masks = [], []
    for fp in frame_files:
        mp = d / fp.name.replace("frame_", "mask_")
        if not mp.exists():
            raise ValueError(f"{fp}: missing mask file {mp.name}")
        f = read_pgm(fp)
        m = read_pgm(mp)
        if f.shape != m.shape:
            raise ValueError(f"{mp}: mask size {m.shape} differs from frame size {f.shape}")
        if not np.all((m == 0) | (m == 255)):
            raise ValueError(f"{mp}: mask is not binary")
        frames.append(f.astype(np.float64) / 255.0)
        masks.append((m > 0).astype(np.uint8))
    meta_path = d / "meta.txt"
    meta = SceneSpec.from_meta(meta_path.read_text(encoding="utf-8")) if meta_path.exists() \
        else SceneSpec(frames=len(frames), height=frames[0].shape[0], width=frames[0].shape[1])
    return VideoSample(np.stack(frames), np.stack(masks), meta)


def read_dataset(root) -> list[VideoSample]:
    root = Path(root)
    dirs = sorted(p for p in root.glob("video*") if p.is_dir())
    if not dirs:
        raise ValueError(f"{root}: no video directories")
    return [read_video(d) for d in dirs]
