"""Procedural gesture clips and a distance-indexed degradation model.

Each clip is a stick figure (head, torso, legs, one articulated arm with a hand
marker) on a plain background, moving through a class-specific joint-angle
trajectory. :func:`degrade` then simulates viewing the scene from ``d`` meters:
coarser resolution, pixel noise, Gaussian blur and, beyond 16 m, motion blur.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
from dataclasses import asdict, dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import ConfigError, DistanceRangeError, InvalidInputError

CLIP_MAGIC = b"TSFV"
MIN_DISTANCE = 4.0
MAX_DISTANCE = 28.0
MOTION_BLUR_FROM = 16.0


class GestureClass(IntEnum):
    BECKONING = 0
    STOP = 1
    NULL = 2
    THUMBS_UP = 3
    POINTING = 4
    THUMBS_DOWN = 5

    @property
    def label(self) -> str:
        return self.name.lower()


N_CLASSES = len(GestureClass)


@dataclass
class VideoClip:
    """``frames`` has shape (T, H, W, 3) with values in [0, 1]."""

    frames: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise InvalidInputError(f"clip must be T x H x W x 3, got {self.frames.shape}")
        if min(self.frames.shape[:3]) < 1:
            raise InvalidInputError("clip extents must be positive")

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def H(self) -> int:
        return self.frames.shape[1]

    @property
    def W(self) -> int:
        return self.frames.shape[2]

    def channels_first(self) -> np.ndarray:
        """(3, T, H, W) layout consumed by the model."""
        return np.ascontiguousarray(self.frames.transpose(3, 0, 1, 2))

    def quantized(self) -> VideoClip:
        """Round-trip through 8-bit storage precision."""
        return VideoClip(np.round(self.frames * 255.0) / 255.0)


@dataclass
class Sample:
    clip: VideoClip
    label: GestureClass
    distance: float

    def __post_init__(self):
        self.label = GestureClass(int(self.label))
        check_distance(self.distance)


@dataclass
class SynthConfig:
    T: int = 16
    H: int = 32
    W: int = 32
    samples_per_meter: int = 15
    distance_min: int = 4
    distance_max: int = 28
    seed: int = 0
    blur_scale: float = 2.0
    noise_scale: float = 0.08
    downsample_floor: float = 1.0
    clip_duration_seconds: float = 4.0
    test_per_cell: int = 2

    def __post_init__(self):
        for name in ("T", "H", "W", "samples_per_meter"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.blur_scale < 0 or self.noise_scale < 0:
            raise ConfigError("blur_scale and noise_scale must be non-negative")
        if self.downsample_floor <= 0:
            raise ConfigError("downsample_floor must be positive")
        if not MIN_DISTANCE <= self.distance_min <= self.distance_max <= MAX_DISTANCE:
            raise ConfigError("distance grid must lie within [4, 28] m")
        if not 0 <= self.test_per_cell < self.samples_per_meter:
            raise ConfigError("test_per_cell must be smaller than samples_per_meter")
        if self.clip_duration_seconds <= 0:
            raise ConfigError("clip_duration_seconds must be positive")

    @property
    def fps(self) -> float:
        return self.T / self.clip_duration_seconds

    @property
    def distances(self) -> list[int]:
        return list(range(int(self.distance_min), int(self.distance_max) + 1))

    @classmethod
    def from_dict(cls, d: dict) -> SynthConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown SynthConfig keys: {sorted(unknown)}")
        return cls(**d)


def check_distance(d: float) -> None:
    if not MIN_DISTANCE <= d <= MAX_DISTANCE:
        raise DistanceRangeError(f"distance {d} m outside [{MIN_DISTANCE:g}, {MAX_DISTANCE:g}]")


def sample_seed(master: int, cls: int, distance: int, index: int) -> int:
    """Order-independent per-sample seed from (master seed, class, distance, index)."""
    ss = np.random.SeedSequence([int(master), int(cls), int(distance), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


# -- rendering --------------------------------------------------------------

def _segment_distance(px, py, x0, y0, x1, y1):
    dx, dy = x1 - x0, y1 - y0
    length2 = dx * dx + dy * dy
    if length2 == 0:
        return np.hypot(px - x0, py - y0)
    t = np.clip(((px - x0) * dx + (py - y0) * dy) / length2, 0.0, 1.0)
    return np.hypot(px - (x0 + t * dx), py - (y0 + t * dy))


def _paint(frame, coverage, color):
    a = coverage[..., None]
    frame *= 1.0 - a
    frame += a * np.asarray(color)


def _ease(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


# joint angles in degrees, counter-clockwise from +x with y pointing up
_REST = (-80.0, -90.0)
_POSES = {
    GestureClass.STOP: (55.0, 90.0),
    GestureClass.POINTING: (0.0, 0.0),
    GestureClass.THUMBS_UP: (0.0, 90.0),
    GestureClass.THUMBS_DOWN: (0.0, 90.0),  # same arm as thumbs-up; only the marker differs
    GestureClass.BECKONING: (-10.0, 45.0),
}


def _arm_trajectory(cls: GestureClass, T: int, rng: np.random.Generator):
    """Per-frame (upper arm, forearm) angles plus hand-marker style."""
    t = np.arange(T)
    onset = rng.uniform(0.15, 0.35) * T
    jitter = rng.uniform(-8.0, 8.0, size=2)
    if cls == GestureClass.NULL:
        amp = rng.uniform(3.0, 8.0)
        phase = rng.uniform(0, 2 * math.pi)
        sway = amp * np.sin(2 * math.pi * t / T * rng.uniform(0.5, 1.5) + phase)
        upper = _REST[0] + jitter[0] + sway
        fore = _REST[1] + jitter[1] + 0.5 * sway
        return upper, fore
    target = np.array(_POSES[cls]) + jitter
    ramp = _ease(t / max(onset, 1.0))
    upper = _REST[0] + (target[0] - _REST[0]) * ramp
    fore = _REST[1] + (target[1] - _REST[1]) * ramp
    if cls == GestureClass.BECKONING:
        cycles = rng.uniform(1.5, 2.5)
        amp = rng.uniform(45.0, 60.0)
        phase = rng.uniform(0, 2 * math.pi)
        wave = amp * 0.5 * (1 - np.cos(2 * math.pi * cycles * t / T + phase))
        fore = fore + wave * ramp
    return upper, fore


def render_gesture(cls: GestureClass | int, seed: int, config: SynthConfig) -> VideoClip:
    """Render one clip of gesture ``cls``; bit-identical for equal (cls, seed, config)."""
    cls = GestureClass(int(cls))
    rng = np.random.default_rng([int(seed), 0x5EED])
    T, H, W = config.T, config.H, config.W
    s = H / 32.0
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64) + 0.5

    bg_level = rng.uniform(0.05, 0.35)
    bg = np.clip(bg_level + rng.uniform(-0.04, 0.04, size=3), 0.0, 1.0)
    body = np.clip(rng.uniform(0.75, 0.95) + rng.uniform(-0.05, 0.05, size=3), 0.0, 1.0)
    hand = np.array([0.95, 0.25, 0.2]) + rng.uniform(-0.05, 0.05, size=3)

    anchor_x = W * rng.uniform(0.22, 0.34)
    anchor_y = H * rng.uniform(-0.03, 0.03)
    size = rng.uniform(0.92, 1.08)
    upper_len, fore_len = 7.0 * s * size, 6.0 * s * size
    thick = 2.2 * s

    shoulder = (anchor_x, anchor_y + 15.0 * s)
    neck = (anchor_x, anchor_y + 13.0 * s)
    hip = (anchor_x, anchor_y + 23.5 * s)
    head_c = (anchor_x, anchor_y + 10.0 * s)

    static = np.empty((H, W, 3))
    static[:] = bg
    _paint(static, np.clip(2.8 * s - np.hypot(xx - head_c[0], yy - head_c[1]) + 0.5, 0, 1), body)
    for a, b in ((neck, hip),
                 (hip, (anchor_x - 3.5 * s, anchor_y + 31.0 * s)),
                 (hip, (anchor_x + 3.5 * s, anchor_y + 31.0 * s)),
                 (shoulder, (anchor_x - 3.5 * s, anchor_y + 24.0 * s))):
        d = _segment_distance(xx, yy, *a, *b)
        _paint(static, np.clip(thick / 2 + 0.5 - d, 0, 1), body)

    upper_deg, fore_deg = _arm_trajectory(cls, T, rng)
    marker_r = (2.6 if cls == GestureClass.STOP else 1.9) * s
    frames = np.empty((T, H, W, 3))
    for t in range(T):
        ua, fa = math.radians(upper_deg[t]), math.radians(fore_deg[t])
        elbow = (shoulder[0] + upper_len * math.cos(ua), shoulder[1] - upper_len * math.sin(ua))
        wrist = (elbow[0] + fore_len * math.cos(fa), elbow[1] - fore_len * math.sin(fa))
        frame = static.copy()
        for a, b in ((shoulder, elbow), (elbow, wrist)):
            d = _segment_distance(xx, yy, *a, *b)
            _paint(frame, np.clip(thick / 2 + 0.5 - d, 0, 1), body)
        if cls == GestureClass.THUMBS_UP:
            mc = (wrist[0], wrist[1] - 2.5 * s)
        elif cls == GestureClass.THUMBS_DOWN:
            mc = (wrist[0], wrist[1] + 2.5 * s)
        else:
            mc = (wrist[0] + 1.0 * s * math.cos(fa), wrist[1] - 1.0 * s * math.sin(fa))
        _paint(frame, np.clip(marker_r - np.hypot(xx - mc[0], yy - mc[1]) + 0.5, 0, 1), hand)
        frames[t] = frame
    return VideoClip(np.clip(frames, 0.0, 1.0))


# -- degradation ------------------------------------------------------------

def _resample(frames: np.ndarray, factor: float) -> np.ndarray:
    """Box-average down by ``factor``, then bilinear interpolation back to full size."""
    T, H, W, _ = frames.shape
    h, w = max(1, int(round(H / factor))), max(1, int(round(W / factor)))
    if h == H and w == W:
        return frames
    re = np.round(np.linspace(0, H, h + 1)).astype(int)
    ce = np.round(np.linspace(0, W, w + 1)).astype(int)
    small = np.add.reduceat(np.add.reduceat(frames, re[:-1], axis=1), ce[:-1], axis=2)
    small /= np.diff(re)[None, :, None, None] * np.diff(ce)[None, None, :, None]
    ys = np.clip((np.arange(H) + 0.5) * h / H - 0.5, 0, h - 1)
    xs = np.clip((np.arange(W) + 0.5) * w / W - 0.5, 0, w - 1)
    y0, x0 = np.floor(ys).astype(int), np.floor(xs).astype(int)
    y1, x1 = np.minimum(y0 + 1, h - 1), np.minimum(x0 + 1, w - 1)
    fy, fx = (ys - y0)[None, :, None, None], (xs - x0)[None, None, :, None]
    top = small[:, y0][:, :, x0] * (1 - fx) + small[:, y0][:, :, x1] * fx
    bottom = small[:, y1][:, :, x0] * (1 - fx) + small[:, y1][:, :, x1] * fx
    return top * (1 - fy) + bottom * fy


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _blur_axis(frames: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = len(kernel) // 2
    pad = [(0, 0)] * frames.ndim
    pad[axis] = (r, r)
    padded = np.pad(frames, pad, mode="edge")
    n = frames.shape[axis]
    out = np.zeros_like(frames)
    for i, c in enumerate(kernel):
        out += c * np.take(padded, np.arange(i, i + n), axis=axis)
    return out


def degrade(clip: VideoClip, d: float, seed: int, config: SynthConfig) -> VideoClip:
    """Simulate viewing ``clip`` from ``d`` meters. Identity at 4 m.

    Steps: resolution loss by factor ``max(1, d/4 * downsample_floor)``; additive
    Gaussian pixel noise with std ``noise_scale * (d-4)/24``; separable Gaussian
    blur with sigma ``blur_scale * (d-4)/24`` (radius ``ceil(3 sigma)``); clamp to
    [0, 1]; beyond 16 m, ``frame_t = 0.8 frame_t + 0.2 frame_{t-1}``.

    Noise goes in before the blur so that it is softened along with the image;
    otherwise far clips would read as sharper than near ones.
    """
    check_distance(d)
    far = (d - MIN_DISTANCE) / (MAX_DISTANCE - MIN_DISTANCE)
    frames = _resample(clip.frames, max(1.0, d / 4.0 * config.downsample_floor))
    noise_std = config.noise_scale * far
    if noise_std > 0:
        rng = np.random.default_rng([int(seed), 0xD15C])
        frames = frames + rng.normal(0.0, noise_std, size=frames.shape)
    sigma = config.blur_scale * far
    if sigma > 0:
        k = gaussian_kernel(sigma)
        frames = _blur_axis(_blur_axis(frames, k, 1), k, 2)
    frames = np.clip(frames, 0.0, 1.0)
    if d > MOTION_BLUR_FROM and frames.shape[0] > 1:
        blurred = frames.copy()
        blurred[1:] = 0.8 * frames[1:] + 0.2 * frames[:-1]
        frames = blurred
    return VideoClip(frames)


def distance_views(clip: VideoClip, n_views: int, seed: int, config: SynthConfig,
                   quantize: bool = True) -> list[VideoClip]:
    """``n_views`` re-degradations of ``clip`` at equally spaced distances over [4, 28] m.

    View ``j`` uses seed derived from (seed, j), so it is reproducible per sample.
    Views are quantized to 8-bit like stored clips unless ``quantize`` is False.
    """
    if n_views < 1:
        raise ConfigError("need at least one view")
    out = []
    for j, d in enumerate(np.linspace(MIN_DISTANCE, MAX_DISTANCE, n_views)):
        v = degrade(clip, float(d), sample_seed(seed, 0x71E, j, 0), config)
        out.append(v.quantized() if quantize else v)
    return out


def sharpness_metric(clip: VideoClip) -> float:
    """Mean |discrete Laplacian| (4-neighbour stencil) over interior pixels, frames, channels."""
    f = clip.frames
    if f.shape[1] < 3 or f.shape[2] < 3:
        return 0.0
    lap = (f[:, :-2, 1:-1] + f[:, 2:, 1:-1] + f[:, 1:-1, :-2] + f[:, 1:-1, 2:]
           - 4.0 * f[:, 1:-1, 1:-1])
    return float(np.abs(lap).mean())


# -- storage ----------------------------------------------------------------

def write_clip(path: str | os.PathLike, clip: VideoClip) -> None:
    T, H, W = clip.frames.shape[:3]
    payload = np.round(np.clip(clip.frames, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(CLIP_MAGIC)
        f.write(struct.pack("<3I", T, H, W))
        f.write(payload.tobytes())


def read_clip_bytes(path: str | os.PathLike) -> np.ndarray:
    """Raw uint8 (T, H, W, 3) payload of a clip file."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CLIP_MAGIC:
            raise InvalidInputError(f"{path}: bad clip magic {magic!r}")
        T, H, W = struct.unpack("<3I", f.read(12))
        payload = f.read()
    if len(payload) != T * H * W * 3:
        raise InvalidInputError(f"{path}: truncated clip payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(T, H, W, 3)


def read_clip(path: str | os.PathLike) -> VideoClip:
    return VideoClip(read_clip_bytes(path).astype(np.float64) / 255.0)


@dataclass
class Manifest:
    config: dict
    samples: list[dict] = field(default_factory=list)
    root: Path = Path(".")

    def split(self, name: str) -> list[dict]:
        return [s for s in self.samples if s["split"] == name]

    def path_of(self, row: dict) -> Path:
        return self.root / row["file"]


def load_manifest(path: str | os.PathLike) -> Manifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    with open(path) as f:
        doc = json.load(f)
    return Manifest(config=doc["config"], samples=doc["samples"], root=path.parent)


def manifest_digest(path: str | os.PathLike) -> str:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    return hashlib.sha256(path.read_bytes()).hexdigest()


def generate_dataset(config: SynthConfig, out_path: str | os.PathLike,
                     overwrite: bool = False) -> Manifest:
    """Render and degrade every (class, meter, index) cell; write clips and manifest.json."""
    root = Path(out_path)
    manifest_path = root / "manifest.json"
    if manifest_path.exists() and not overwrite:
        raise FileExistsError(f"{manifest_path} exists; pass overwrite to replace it")
    (root / "clips").mkdir(parents=True, exist_ok=True)
    rows = []
    n = config.samples_per_meter
    for cls in GestureClass:
        for d in config.distances:
            for idx in range(n):
                seed = sample_seed(config.seed, int(cls), d, idx)
                clip = degrade(render_gesture(cls, seed, config), float(d), seed, config)
                name = f"clips/{cls.label}_{d:02d}m_{idx:02d}.tsfv"
                write_clip(root / name, clip)
                rows.append({"file": name, "class": int(cls), "distance_m": float(d),
                             "split": "test" if idx >= n - config.test_per_cell else "train",
                             "seed": seed})
    doc = {"config": asdict(config), "samples": rows}
    with open(manifest_path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")
    return Manifest(config=doc["config"], samples=rows, root=root)
