"""Temporal-Spatiotemporal Fusion Network.

Two branches read the same clip:

* TCN branch: per-frame 2-D encoder, spatial average pooling to a C x T
  sequence, a stack of dilated causal temporal convolutions (each followed by a
  sigmoid), and temporal average pooling.
* R(2+1)D branch: blocks of temporal convolution + sigmoid followed by spatial
  convolution + sigmoid, then average pooling over time and space.

The two pooled vectors are concatenated (TCN first) and passed through three
fully connected layers: sigmoid after the first two, softmax over the logits of
the last.

All batched tensors use the (N, C, T, H, W) layout.
"""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .conv import ConvSpec, conv1d_temporal, conv2d_spatial, output_length
from .errors import ConfigError, DimensionError, IncompatibleCheckpointError, InvalidInputError
from .synth import N_CLASSES, VideoClip
from .tensor import (Tensor, as_tensor, concat, global_avg_pool, linear, mean, power,
                     read_tensor, reshape, sigmoid, softmax, write_tensor)

CHECKPOINT_MAGIC = b"TSFN"
OUTPUT_MODES = ("softmax", "sigmoid")
INPUT_NORMS = ("none", "clip")
NORM_EPS = 1e-6
ABLATIONS = ("full", "tcn_only", "r2plus1d_only")


@dataclass
class ModelConfig:
    frames: int = 16
    height: int = 32
    width: int = 32
    in_channels: int = 3
    encoder_channels: list[int] = field(default_factory=lambda: [8, 16])
    tcn_channels: list[int] = field(default_factory=lambda: [32, 32, 32])
    tcn_dilations: list[int] = field(default_factory=lambda: [1, 2, 4])
    tcn_kernel: int = 3
    r2plus1d_channels: list[int] = field(default_factory=lambda: [16, 32])
    r2plus1d_mid_channels: list[int] | None = None
    r2plus1d_temporal_extent: int = 3
    spatial_extent: int = 3
    spatial_stride: int = 2
    input_pool: int = 1
    init_gain: float = 1.0
    init_centered: bool = False
    input_norm: str = "none"
    fc_widths: list[int] = field(default_factory=lambda: [64, 32, N_CLASSES])
    output_activation: str = "softmax"
    seed: int = 0

    def __post_init__(self):
        if self.r2plus1d_mid_channels is None:
            self.r2plus1d_mid_channels = list(self.r2plus1d_channels)
        self.validate()

    def validate(self) -> None:
        for name in ("encoder_channels", "tcn_channels", "tcn_dilations", "r2plus1d_channels",
                     "r2plus1d_mid_channels", "fc_widths"):
            seq = getattr(self, name)
            if not seq:
                raise ConfigError(f"{name} must be non-empty")
            if any(int(v) < 1 for v in seq):
                raise ConfigError(f"{name} entries must be positive")
        if len(self.tcn_dilations) != len(self.tcn_channels):
            raise ConfigError("tcn_dilations and tcn_channels must have equal length")
        if len(self.r2plus1d_mid_channels) != len(self.r2plus1d_channels):
            raise ConfigError("r2plus1d_mid_channels and r2plus1d_channels must have equal length")
        if len(self.fc_widths) != 3:
            raise ConfigError(f"fc_widths must have exactly 3 entries, got {len(self.fc_widths)}")
        if self.fc_widths[-1] != N_CLASSES:
            raise ConfigError(f"final fc width must be {N_CLASSES}")
        for name in ("frames", "height", "width", "in_channels", "tcn_kernel",
                     "r2plus1d_temporal_extent", "spatial_extent", "spatial_stride", "input_pool"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.height % self.input_pool or self.width % self.input_pool:
            raise ConfigError("input_pool must divide height and width")
        if self.spatial_extent % 2 == 0 or self.r2plus1d_temporal_extent % 2 == 0:
            raise ConfigError("same-padded extents must be odd")
        if self.frames < self.receptive_field:
            raise ConfigError(f"frames={self.frames} shorter than TCN horizon {self.receptive_field}")
        if self.output_activation not in OUTPUT_MODES:
            raise ConfigError(f"output_activation must be one of {OUTPUT_MODES}")
        if self.input_norm not in INPUT_NORMS:
            raise ConfigError(f"input_norm must be one of {INPUT_NORMS}")
        if not (np.isfinite(self.init_gain) and self.init_gain > 0):
            raise ConfigError("init_gain must be positive")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must fit in 64 bits")

    @property
    def receptive_field(self) -> int:
        return (self.tcn_kernel - 1) * max(self.tcn_dilations) + 1

    @property
    def feature_dims(self) -> tuple[int, int]:
        return self.tcn_channels[-1], self.r2plus1d_channels[-1]

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown ModelConfig keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    # conv specs ---------------------------------------------------------------
    def encoder_specs(self) -> list[ConvSpec]:
        chans = [self.in_channels] + list(self.encoder_channels)
        return [ConvSpec(k, c, 1, self.spatial_extent, 1, self.spatial_stride, "same")
                for c, k in zip(chans[:-1], chans[1:])]

    def tcn_specs(self) -> list[ConvSpec]:
        chans = [self.encoder_channels[-1]] + list(self.tcn_channels)
        return [ConvSpec(k, c, self.tcn_kernel, 1, d, 1, "causal")
                for c, k, d in zip(chans[:-1], chans[1:], self.tcn_dilations)]

    def r2plus1d_specs(self) -> list[tuple[ConvSpec, ConvSpec]]:
        chans = [self.in_channels] + list(self.r2plus1d_channels)
        out = []
        for c, k, m in zip(chans[:-1], chans[1:], self.r2plus1d_mid_channels):
            out.append((ConvSpec(m, c, self.r2plus1d_temporal_extent, 1, 1, 1, "same"),
                        ConvSpec(k, m, 1, self.spatial_extent, 1, self.spatial_stride, "same")))
        return out

    def fc_shapes(self) -> list[tuple[int, int]]:
        dims = [sum(self.feature_dims)] + list(self.fc_widths)
        return [(m, n) for n, m in zip(dims[:-1], dims[1:])]


@dataclass
class ModelParams:
    config: ModelConfig
    tcn_frame_encoder: list[tuple[Tensor, Tensor]]
    tcn_temporal_stack: list[tuple[Tensor, Tensor]]
    r2plus1d_blocks: list[tuple[Tensor, Tensor, Tensor, Tensor]]
    fc_stack: list[tuple[Tensor, Tensor]]

    @property
    def class_count(self) -> int:
        return self.fc_stack[-1][0].shape[0]

    def tensors(self) -> list[Tensor]:
        """All parameters in checkpoint order."""
        out: list[Tensor] = []
        for group in (self.tcn_frame_encoder, self.tcn_temporal_stack, self.r2plus1d_blocks,
                      self.fc_stack):
            for layer in group:
                out.extend(layer)
        return out

    def copy(self) -> ModelParams:
        return params_from_tensors(self.config, [Tensor(t.data.copy(), requires_grad=True)
                                                 for t in self.tensors()])


def expected_shapes(config: ModelConfig) -> list[tuple[int, ...]]:
    shapes: list[tuple[int, ...]] = []
    for spec in config.encoder_specs():
        shapes += [spec.spatial_kernel_shape(), (spec.out_channels,)]
    for spec in config.tcn_specs():
        shapes += [spec.temporal_kernel_shape(), (spec.out_channels,)]
    for t_spec, s_spec in config.r2plus1d_specs():
        shapes += [t_spec.temporal_kernel_shape(), (t_spec.out_channels,),
                   s_spec.spatial_kernel_shape(), (s_spec.out_channels,)]
    for m, n in config.fc_shapes():
        shapes += [(m, n), (m,)]
    return shapes


def param_names(config: ModelConfig) -> list[str]:
    """Human-readable names in checkpoint order, e.g. ``r2plus1d[1].spatial_weight``."""
    names = []
    for i, _ in enumerate(config.encoder_specs()):
        names += [f"encoder[{i}].weight", f"encoder[{i}].bias"]
    for i, _ in enumerate(config.tcn_specs()):
        names += [f"tcn[{i}].weight", f"tcn[{i}].bias"]
    for i, _ in enumerate(config.r2plus1d_specs()):
        names += [f"r2plus1d[{i}].temporal_weight", f"r2plus1d[{i}].temporal_bias",
                  f"r2plus1d[{i}].spatial_weight", f"r2plus1d[{i}].spatial_bias"]
    for i, _ in enumerate(config.fc_shapes()):
        names += [f"fc[{i}].weight", f"fc[{i}].bias"]
    return names


def params_from_tensors(config: ModelConfig, tensors: Sequence[Tensor]) -> ModelParams:
    shapes = expected_shapes(config)
    if len(tensors) != len(shapes):
        raise IncompatibleCheckpointError(f"expected {len(shapes)} tensors, got {len(tensors)}")
    for i, (t, s) in enumerate(zip(tensors, shapes)):
        if tuple(t.shape) != tuple(s):
            raise IncompatibleCheckpointError(f"tensor {i} has shape {t.shape}, config implies {s}")
    it = iter(tensors)
    enc = [(next(it), next(it)) for _ in config.encoder_specs()]
    tcn = [(next(it), next(it)) for _ in config.tcn_specs()]
    r21 = [(next(it), next(it), next(it), next(it)) for _ in config.r2plus1d_specs()]
    fc = [(next(it), next(it)) for _ in config.fc_shapes()]
    return ModelParams(config, enc, tcn, r21, fc)


def init_params(config: ModelConfig) -> ModelParams:
    """Uniform(-b, b) weights with b = init_gain * sqrt(6/fan_in), zero biases; deterministic per seed.

    With ``init_centered`` each output unit's weights are shifted to sum to zero,
    so the constant part of a sigmoid layer's output (about 0.5) does not bias the
    next layer's pre-activations.
    """
    config.validate()
    rng = np.random.default_rng(int(config.seed))
    tensors = []
    for shape in expected_shapes(config):
        if len(shape) == 1:
            tensors.append(Tensor(np.zeros(shape), requires_grad=True))
            continue
        fan_in = int(np.prod(shape[1:]))
        bound = config.init_gain * np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=shape)
        if config.init_centered:
            w -= w.mean(axis=tuple(range(1, w.ndim)), keepdims=True)
        tensors.append(Tensor(w, requires_grad=True))
    for t, name in zip(tensors, param_names(config)):
        t.name = name
    return params_from_tensors(config, tensors)


# -- forward ---------------------------------------------------------------

@dataclass
class ClassScores:
    """``probs`` and ``logits`` have shape (6,) for one clip or (N, 6) for a batch."""

    probs: Tensor
    logits: Tensor

    def predictions(self) -> np.ndarray:
        """Argmax of probs; ``np.argmax`` breaks ties toward the lowest class code."""
        return np.argmax(self.probs.data, axis=-1)


def clip_batch(clips) -> Tensor:
    """Stack clips (VideoClip, (T,H,W,3) arrays or an (N,T,H,W,3) array) into (N, 3, T, H, W)."""
    if isinstance(clips, Tensor):
        return clips
    if isinstance(clips, VideoClip):
        clips = [clips]
    if isinstance(clips, np.ndarray) and clips.ndim == 5:
        return Tensor(np.ascontiguousarray(np.asarray(clips, dtype=np.float64).transpose(0, 4, 1, 2, 3)))
    arrs = [c.frames if isinstance(c, VideoClip) else np.asarray(c, dtype=np.float64)
            for c in clips]
    return Tensor(np.ascontiguousarray(np.stack(arrs).transpose(0, 4, 1, 2, 3)))


def _as_batch(clip) -> tuple[Tensor, bool]:
    if isinstance(clip, VideoClip):
        return clip_batch(clip), True
    if isinstance(clip, Tensor) and clip.ndim == 4:
        return clip.reshape((1,) + clip.shape), True
    x = clip_batch(clip)
    return x, False


def _check_clip(x: Tensor, config: ModelConfig) -> None:
    want = (config.in_channels, config.frames, config.height, config.width)
    if x.ndim != 5:
        raise DimensionError(f"expected (N, C, T, H, W) input, got {x.shape}", axis=0)
    for axis, (got, exp, name) in enumerate(zip(x.shape[1:], want, "CTHW"), start=1):
        if got != exp:
            raise DimensionError(f"clip axis {name} has extent {got}, model expects {exp}", axis=axis)


def standardize_clip(x: Tensor) -> Tensor:
    """Zero mean, unit variance per clip and channel over (T, H, W)."""
    n, c = x.shape[:2]
    flat = reshape(x, (n, c, -1))
    centered = flat - mean(flat, axis=2).reshape((n, c, 1))
    var = mean(centered * centered, axis=2).reshape((n, c, 1))
    return reshape(centered * power(var + NORM_EPS, -0.5), x.shape)


def _prepare(clip, config: ModelConfig) -> tuple[Tensor, bool]:
    """Batch, validate and (optionally) standardize and box-pool the input clip(s)."""
    x, single = _as_batch(clip)
    _check_clip(x, config)
    if config.input_norm == "clip":
        x = standardize_clip(x)
    p = config.input_pool
    if p > 1:
        n, c, t, h, w = x.shape
        x = mean(reshape(x, (n, c, t, h // p, p, w // p, p)), (4, 6))
    return x, single


def tcn_sequence(x: Tensor, params: ModelParams) -> Tensor:
    """TCN activations before temporal pooling, shape (N, C_tcn, T), for a prepared batch."""
    cfg = params.config
    h = x
    for (w, b), spec in zip(params.tcn_frame_encoder, cfg.encoder_specs()):
        h = sigmoid(conv2d_spatial(h, w, b, spec))
    h = global_avg_pool(h, (-2, -1))
    for (w, b), spec in zip(params.tcn_temporal_stack, cfg.tcn_specs()):
        h = sigmoid(conv1d_temporal(h, w, b, spec))
    return h


def _tcn_features(x: Tensor, params: ModelParams) -> Tensor:
    return global_avg_pool(tcn_sequence(x, params), (-1,))


def tcn_branch_forward(clip, params: ModelParams) -> Tensor:
    """Pooled TCN feature vector (Y_TCN) for one clip or a batch."""
    x, single = _prepare(clip, params.config)
    y = _tcn_features(x, params)
    return y[0] if single else y


def r2plus1d_block_forward(x: Tensor, block_params, specs: tuple[ConvSpec, ConvSpec]) -> Tensor:
    """``sigmoid(spatial(sigmoid(temporal(x) + b_t)) + b_s)`` on (N, C, T, H, W) or (C, T, H, W)."""
    w_t, b_t, w_s, b_s = block_params
    t_spec, s_spec = specs
    x = as_tensor(x)
    single = x.ndim == 4
    if single:
        x = x.reshape((1,) + x.shape)
    if x.ndim != 5:
        raise DimensionError(f"expected (N, C, T, H, W), got {x.shape}", axis=0)
    h = sigmoid(conv1d_temporal(x, w_t, b_t, t_spec))
    h = sigmoid(conv2d_spatial(h, w_s, b_s, s_spec))
    return h[0] if single else h


def _r2plus1d_features(x: Tensor, params: ModelParams) -> Tensor:
    h = x
    for block, specs in zip(params.r2plus1d_blocks, params.config.r2plus1d_specs()):
        h = r2plus1d_block_forward(h, block, specs)
    return global_avg_pool(h, (-3, -2, -1))


def r2plus1d_branch_forward(clip, params: ModelParams) -> Tensor:
    """Pooled R(2+1)D feature vector for one clip or a batch."""
    x, single = _prepare(clip, params.config)
    y = _r2plus1d_features(x, params)
    return y[0] if single else y


def fuse(y_tcn: Tensor, y_r: Tensor) -> Tensor:
    """Concatenate along the feature axis, TCN features first."""
    y_tcn, y_r = as_tensor(y_tcn), as_tensor(y_r)
    if y_tcn.ndim not in (1, 2) or y_r.ndim != y_tcn.ndim:
        raise DimensionError(f"fuse expects two vectors (or two batches of vectors), got "
                             f"{y_tcn.shape} and {y_r.shape}", axis=0)
    return concat([y_tcn, y_r], axis=-1)


def classify(f: Tensor, params: ModelParams) -> ClassScores:
    f = as_tensor(f)
    n_in = params.fc_stack[0][0].shape[1]
    if f.shape[-1] != n_in:
        raise DimensionError(f"feature length {f.shape[-1]} != first fc input {n_in}",
                             axis=f.ndim - 1)
    h = f
    for w, b in params.fc_stack[:-1]:
        h = sigmoid(linear(h, w, b))
    w, b = params.fc_stack[-1]
    logits = linear(h, w, b)
    if params.config.output_activation == "sigmoid":
        return ClassScores(sigmoid(logits), logits)
    return ClassScores(softmax(logits, axis=-1), logits)


def forward(clip, params: ModelParams) -> ClassScores:
    """Class scores for one clip (VideoClip or (3,T,H,W) tensor) or a batch."""
    return forward_ablation(clip, params, "full")


def forward_ablation(clip, params: ModelParams, branch: str = "full") -> ClassScores:
    """Like :func:`forward`; ``tcn_only`` / ``r2plus1d_only`` zero the other branch's slice."""
    if branch not in ABLATIONS:
        raise ConfigError(f"branch must be one of {ABLATIONS}, got {branch!r}")
    x, single = _prepare(clip, params.config)
    n = x.shape[0]
    a, b = params.config.feature_dims
    y_t = _tcn_features(x, params) if branch != "r2plus1d_only" else Tensor(np.zeros((n, a)))
    y_r = _r2plus1d_features(x, params) if branch != "tcn_only" else Tensor(np.zeros((n, b)))
    scores = classify(fuse(y_t, y_r), params)
    if single:
        return ClassScores(scores.probs[0], scores.logits[0])
    return scores


# -- checkpoint ------------------------------------------------------------

_SCALAR_FIELDS = ("frames", "height", "width", "in_channels", "tcn_kernel",
                  "r2plus1d_temporal_extent", "spatial_extent", "spatial_stride", "input_pool",
                  "init_centered")
_LIST_FIELDS = ("encoder_channels", "tcn_channels", "tcn_dilations", "r2plus1d_channels",
                "r2plus1d_mid_channels", "fc_widths")


def _config_words(config: ModelConfig) -> list[int]:
    words = [int(getattr(config, f)) for f in _SCALAR_FIELDS]
    words.append(OUTPUT_MODES.index(config.output_activation))
    words.append(INPUT_NORMS.index(config.input_norm))
    words += [int(config.seed) & 0xFFFFFFFF, int(config.seed) >> 32]
    words += list(struct.unpack("<2I", struct.pack("<d", float(config.init_gain))))
    for f in _LIST_FIELDS:
        seq = getattr(config, f)
        words.append(len(seq))
        words += [int(v) for v in seq]
    return words


def _config_from_words(words: list[int]) -> ModelConfig:
    it = iter(words)
    kw = {f: next(it) for f in _SCALAR_FIELDS}
    kw["output_activation"] = OUTPUT_MODES[next(it)]
    kw["input_norm"] = INPUT_NORMS[next(it)]
    kw["init_centered"] = bool(kw["init_centered"])
    lo, hi = next(it), next(it)
    kw["seed"] = lo | (hi << 32)
    kw["init_gain"] = struct.unpack("<d", struct.pack("<2I", next(it), next(it)))[0]
    for f in _LIST_FIELDS:
        n = next(it)
        kw[f] = [next(it) for _ in range(n)]
    return ModelConfig(**kw)


def save_checkpoint(path, params: ModelParams) -> None:
    """``TSFN`` magic, u32 word count, u32 config words, then every tensor in ``TSR1`` format."""
    words = _config_words(params.config)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(words)))
        f.write(struct.pack(f"<{len(words)}I", *words))
        for t in params.tensors():
            write_tensor(f, t)


def load_checkpoint(path) -> ModelParams:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise IncompatibleCheckpointError(f"{path}: not a TSFN checkpoint (magic {magic!r})")
        try:
            (n,) = struct.unpack("<I", f.read(4))
            words = list(struct.unpack(f"<{n}I", f.read(4 * n)))
            config = _config_from_words(words)
            tensors = [read_tensor(f) for _ in expected_shapes(config)]
        except (struct.error, StopIteration, InvalidInputError, ConfigError) as exc:
            raise IncompatibleCheckpointError(f"{path}: malformed checkpoint ({exc})") from exc
        if f.read(1):
            raise IncompatibleCheckpointError(f"{path}: trailing bytes after last tensor")
    for t, name in zip(tensors, param_names(config)):
        t.requires_grad = True
        t.name = name
    return params_from_tensors(config, tensors)


def feature_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Per-stage activation shapes for one clip; useful for sizing."""
    h0, w0 = config.height // config.input_pool, config.width // config.input_pool
    h, w = h0, w0
    shapes = {"input": (config.in_channels, config.frames, h, w)}
    for i, spec in enumerate(config.encoder_specs()):
        h = output_length(h, spec.spatial_extent, 1, spec.stride, "same")
        w = output_length(w, spec.spatial_extent, 1, spec.stride, "same")
        shapes[f"encoder{i}"] = (spec.out_channels, config.frames, h, w)
    shapes["tcn"] = (config.tcn_channels[-1], config.frames)
    h, w = h0, w0
    for i, (_, s_spec) in enumerate(config.r2plus1d_specs()):
        h = output_length(h, s_spec.spatial_extent, 1, s_spec.stride, "same")
        w = output_length(w, s_spec.spatial_extent, 1, s_spec.stride, "same")
        shapes[f"r2plus1d{i}"] = (s_spec.out_channels, config.frames, h, w)
    return shapes
