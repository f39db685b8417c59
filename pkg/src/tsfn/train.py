"""Training loop and evaluation over a generated dataset manifest."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigError, IncompatibleCheckpointError, NonFiniteError
from .losses import Batch, LossWeights, composite_loss, cross_entropy
from .metrics import Metrics, compute_metrics
from .model import (ABLATIONS, ModelConfig, ModelParams, forward_ablation, init_params,
                    load_checkpoint, param_names, save_checkpoint)
from .optim import OPTIMIZERS, SCHEDULES, make_optimizer, scheduled_rate
from .synth import Manifest, SynthConfig, VideoClip, distance_views, load_manifest, read_clip_bytes
from .tensor import backward, zero_grad

LOG_HEADER = ("epoch", "total", "ce", "global", "dist", "robust", "train_acc")
STEP_LOG_HEADER = ("step", "epoch", "total", "ce", "global", "dist", "robust")

# Model overrides used by ``train`` unless the config says otherwise.  The plain
# ModelConfig defaults are the reference architecture.  Training adds a 2x2 input
# pool (CPU budget) and per-clip input standardization plus a 4x zero-sum init,
# without which the all-sigmoid stack collapses to a constant predictor.
TRAIN_MODEL_DEFAULTS = {"input_pool": 2, "input_norm": "clip", "init_gain": 4.0,
                        "init_centered": True}


@dataclass
class TrainConfig:
    learning_rate: float = 3e-3
    epochs: int = 12
    batch_size: int = 16
    optimizer: str = "adam"
    loss_weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_path: str = "tsfn.ckpt"
    manifest: str = "data"
    ablation: str = "full"
    model: dict = field(default_factory=lambda: dict(TRAIN_MODEL_DEFAULTS))
    log_path: str | None = None
    lr_schedule: str = "cosine"

    def __post_init__(self):
        if isinstance(self.loss_weights, dict):
            self.loss_weights = LossWeights(**self.loss_weights)
        self.validate()

    def validate(self) -> None:
        # lr == 0 is allowed so a run can be used as a no-op smoke test
        if not np.isfinite(self.learning_rate) or self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if int(self.epochs) < 1:
            raise ConfigError("epochs must be >= 1")
        if int(self.batch_size) < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.lr_schedule not in SCHEDULES:
            raise ConfigError(f"lr_schedule must be one of {SCHEDULES}, got {self.lr_schedule!r}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown TrainConfig keys: {sorted(unknown)}")
        d = dict(d)
        if "model" in d:
            d["model"] = {**TRAIN_MODEL_DEFAULTS, **d["model"]}
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["loss_weights"] = asdict(self.loss_weights)
        return out

    def model_config(self, synth: SynthConfig) -> ModelConfig:
        kw = {"frames": synth.T, "height": synth.H, "width": synth.W, "seed": self.seed}
        kw.update(self.model)
        return ModelConfig.from_dict(kw)

    @property
    def resolved_log_path(self) -> Path:
        return Path(self.log_path) if self.log_path else Path(str(self.checkpoint_path) + ".log.csv")

    @property
    def resolved_step_log_path(self) -> Path:
        """Per-step loss breakdown, next to the per-epoch log."""
        log = self.resolved_log_path
        return log.with_name(log.name.removesuffix(".log.csv").removesuffix(".csv") + ".steps.csv")


# -- data ---------------------------------------------------------------------

@dataclass
class SplitData:
    """A manifest split held in memory as uint8 clips (N, T, H, W, 3)."""

    clips: np.ndarray
    labels: np.ndarray
    distances: np.ndarray
    seeds: np.ndarray
    files: list[str]

    def __len__(self) -> int:
        return len(self.labels)

    def batch(self, idx, views: np.ndarray | None = None) -> Batch:
        return Batch(self.clips[idx] / 255.0, self.labels[idx], self.distances[idx],
                     self.seeds[idx], None if views is None else views[idx] / 255.0)


def load_split(manifest: Manifest | str | os.PathLike, split: str) -> SplitData:
    if not isinstance(manifest, Manifest):
        manifest = load_manifest(manifest)
    rows = manifest.split(split)
    if not rows:
        raise ConfigError(f"manifest has no {split!r} samples")
    clips = np.stack([read_clip_bytes(manifest.path_of(r)) for r in rows])
    return SplitData(clips, np.array([r["class"] for r in rows], dtype=np.int64),
                     np.array([r["distance_m"] for r in rows], dtype=np.float64),
                     np.array([r["seed"] for r in rows], dtype=np.uint64),
                     [r["file"] for r in rows])


def precompute_views(data: SplitData, n_views: int, synth: SynthConfig) -> np.ndarray:
    """Degraded views for every clip, quantized to uint8: (N, M, T, H, W, 3).

    Views depend only on the clip and its manifest seed, so they are computed once
    per run instead of once per step.
    """
    out = np.empty((len(data), n_views) + data.clips.shape[1:], dtype=np.uint8)
    for i, (clip, seed) in enumerate(zip(data.clips, data.seeds)):
        views = distance_views(VideoClip(clip / 255.0), n_views, int(seed), synth)
        for j, v in enumerate(views):
            out[i, j] = np.round(v.frames * 255.0).astype(np.uint8)
    return out


# -- training -----------------------------------------------------------------

@dataclass
class TrainResult:
    params: ModelParams
    log: list[dict]
    checkpoint_path: Path
    log_path: Path
    step_log_path: Path


def _check_finite(breakdown, params: ModelParams, names: list[str], where: str) -> None:
    for key, value in breakdown.as_floats().items():
        if not np.isfinite(value):
            raise NonFiniteError(f"{where}: loss component {key!r} is {value}", name=key)
    for name, t in zip(names, params.tensors()):
        if t.grad is not None and not np.all(np.isfinite(t.grad)):
            raise NonFiniteError(f"{where}: gradient of {name} is not finite", name=name)


def format_log(rows: list[dict], header: tuple[str, ...] = LOG_HEADER) -> str:
    """CSV text; integer columns verbatim, floats with 10 significant digits."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for r in rows:
        writer.writerow([r[k] if isinstance(r[k], (int, np.integer)) else f"{r[k]:.10g}"
                         for k in header])
    return buf.getvalue()


def train(config: TrainConfig, progress: Callable[[str], None] | None = None,
          init: ModelParams | None = None,
          on_epoch: Callable[[int, ModelParams, dict], None] | None = None) -> TrainResult:
    """Minimize the composite loss over the manifest's train split.

    Deterministic for a fixed config on a fixed platform: parameter init, epoch
    shuffles and degraded views are all seeded.
    """
    manifest = load_manifest(config.manifest)
    synth = SynthConfig.from_dict(manifest.config)
    data = load_split(manifest, "train")
    params = init if init is not None else init_params(config.model_config(synth))
    names = param_names(params.config)
    weights = config.loss_weights
    views = precompute_views(data, weights.views, synth) if weights.views >= 2 else None
    opt = make_optimizer(config.optimizer, params.tensors(), config.learning_rate)
    rng = np.random.default_rng([int(config.seed), 1])
    bs = int(config.batch_size)
    total_steps = int(config.epochs) * -(-len(data) // bs)

    rows, steps = [], []
    for epoch in range(1, int(config.epochs) + 1):
        order = rng.permutation(len(data))
        sums = dict.fromkeys(LOG_HEADER[1:6], 0.0)
        correct = 0
        for start in range(0, len(order), bs):
            idx = order[start:start + bs]
            batch = data.batch(idx, views)
            lb = composite_loss(params, batch, weights, branch=config.ablation)
            zero_grad(params.tensors())
            backward(lb.total)
            _check_finite(lb, params, names, f"epoch {epoch}, batch {start // bs}")
            opt.lr = scheduled_rate(config.lr_schedule, config.learning_rate, len(steps), total_steps)
            opt.step()
            parts = lb.as_floats()
            steps.append({"step": len(steps) + 1, "epoch": epoch, **parts})
            for key, value in parts.items():
                sums[key] += value * len(idx)
            correct += int(np.sum(lb.scores.predictions() == batch.labels))
        row = {"epoch": epoch, **{k: v / len(data) for k, v in sums.items()},
               "train_acc": correct / len(data)}
        rows.append(row)
        if progress:
            progress(f"epoch {epoch}: " + " ".join(f"{k}={row[k]:.4f}" for k in LOG_HEADER[1:]))
        if on_epoch:
            on_epoch(epoch, params, row)

    ckpt = Path(config.checkpoint_path)
    save_checkpoint(ckpt, params)
    log_path = config.resolved_log_path
    log_path.write_text(format_log(rows))
    step_path = config.resolved_step_log_path
    step_path.write_text(format_log(steps, STEP_LOG_HEADER))
    return TrainResult(params, rows, ckpt, log_path, step_path)


# -- evaluation ---------------------------------------------------------------

def predict_split(params: ModelParams, data: SplitData, branch: str = "full",
                  chunk: int = 50) -> np.ndarray:
    """Class probabilities (N, 6) for every clip, in manifest order."""
    out = []
    for start in range(0, len(data), chunk):
        clips = data.clips[start:start + chunk] / 255.0
        out.append(forward_ablation(clips, params, branch).probs.data)
    return np.concatenate(out)


def _check_compatible(params: ModelParams, synth: SynthConfig) -> None:
    c = params.config
    if (c.frames, c.height, c.width) != (synth.T, synth.H, synth.W):
        raise IncompatibleCheckpointError(
            f"checkpoint expects {c.frames}x{c.height}x{c.width} clips, "
            f"dataset has {synth.T}x{synth.H}x{synth.W}")


def evaluate(checkpoint: ModelParams | str | os.PathLike, manifest: Manifest | str | os.PathLike,
             split: str = "test", branch: str = "full", components: bool = False,
             weights: LossWeights | None = None, dump_path: str | os.PathLike | None = None) -> Metrics:
    """Accuracy, plain cross-entropy, mAP and per-distance accuracy on one split.

    Never mutates the checkpoint.  ``components`` adds the composite-loss breakdown
    (averaged over the split); ``dump_path`` writes one CSV row per sample.
    """
    params = checkpoint if isinstance(checkpoint, ModelParams) else load_checkpoint(checkpoint)
    if not isinstance(manifest, Manifest):
        manifest = load_manifest(manifest)
    synth = SynthConfig.from_dict(manifest.config)
    _check_compatible(params, synth)
    data = load_split(manifest, split)
    probs = predict_split(params, data, branch)
    losses = cross_entropy(probs, data.labels).data
    metrics = compute_metrics(probs, data.labels, data.distances, losses)
    if components:
        metrics.components = loss_components(params, data, weights or LossWeights(), synth, branch)
    if dump_path is not None:
        write_predictions(dump_path, data, probs)
    return metrics


def loss_components(params: ModelParams, data: SplitData, weights: LossWeights,
                    synth: SynthConfig, branch: str = "full", chunk: int = 25) -> dict[str, float]:
    views = precompute_views(data, weights.views, synth) if weights.views >= 2 else None
    sums: dict[str, float] = {}
    for start in range(0, len(data), chunk):
        idx = np.arange(start, min(start + chunk, len(data)))
        lb = composite_loss(params, data.batch(idx, views), weights, branch=branch)
        for key, value in lb.as_floats().items():
            sums[key] = sums.get(key, 0.0) + value * len(idx)
    return {k: v / len(data) for k, v in sums.items()}


def write_predictions(path: str | os.PathLike, data: SplitData, probs: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["index", "file", "label", "prediction", "distance_m"]
                        + [f"p{c}" for c in range(probs.shape[1])])
        for i, (name, y, d, p) in enumerate(zip(data.files, data.labels, data.distances, probs)):
            writer.writerow([i, name, int(y), int(np.argmax(p)), f"{d:g}"]
                            + [f"{v:.10g}" for v in p])
