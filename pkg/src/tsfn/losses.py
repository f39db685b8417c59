"""Composite training objective.

``total = ce + alpha * global_context + beta * distance + gamma * robustness``

* ``ce``: mean cross-entropy over the batch.
* ``distance``: ``mean_i d_i * CE_i`` with raw distances in meters.
* ``robustness``: ``mean_i sum_j (CE_ij - mean_j CE_ij)^2`` over ``M`` re-degraded
  views of each clip, i.e. ``M`` times the per-sample population variance.
* ``global_context``: symmetrized KL divergence between predictions on the full
  clip and on a stride-2 temporal subsample front-padded back to ``T`` frames.

All probabilities are clamped at ``PROB_FLOOR`` before taking logarithms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, InvalidInputError
from .model import ClassScores, ModelParams, clip_batch, forward_ablation
from .synth import N_CLASSES, Sample, SynthConfig, VideoClip, check_distance, distance_views
from .tensor import Tensor, as_tensor, concat, getitem, log, mean, mul, reshape, tsum

PROB_FLOOR = 1e-12


@dataclass
class LossWeights:
    alpha: float = 0.1
    beta: float = 0.05
    gamma: float = 0.1
    views: int = 3

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.gamma > 0 and self.views < 2:
            raise ConfigError("robustness term needs at least 2 views")


@dataclass
class Batch:
    """Clips as an (N, T, H, W, 3) array plus labels, distances and per-sample seeds.

    ``views`` optionally holds precomputed degraded views, shape (N, M, T, H, W, 3).
    """

    clips: np.ndarray
    labels: np.ndarray
    distances: np.ndarray
    seeds: np.ndarray | None = None
    views: np.ndarray | None = None

    def __post_init__(self):
        self.clips = np.asarray(self.clips, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.distances = np.asarray(self.distances, dtype=np.float64)
        n = len(self.labels)
        if n < 1:
            raise InvalidInputError("batch must hold at least one sample")
        if self.clips.ndim != 5 or self.clips.shape[0] != n or len(self.distances) != n:
            raise DimensionError("clips, labels and distances must share the batch axis", axis=0)
        if np.any((self.labels < 0) | (self.labels >= N_CLASSES)):
            raise InvalidInputError(f"labels must lie in 0..{N_CLASSES - 1}")
        for d in self.distances:
            check_distance(float(d))
        if self.seeds is None:
            self.seeds = np.arange(n, dtype=np.uint64)

    @property
    def size(self) -> int:
        return len(self.labels)

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], seeds=None) -> Batch:
        return cls(np.stack([s.clip.frames for s in samples]),
                   np.array([int(s.label) for s in samples]),
                   np.array([s.distance for s in samples]),
                   None if seeds is None else np.asarray(seeds, dtype=np.uint64))


@dataclass
class ViewGenerator:
    """Produces ``M`` views of a clip at equally spaced distances spanning [4, 28] m."""

    synth: SynthConfig = field(default_factory=SynthConfig)

    def __call__(self, clip: VideoClip, seed: int, n_views: int) -> list[VideoClip]:
        return distance_views(clip, n_views, int(seed), self.synth)

    def batch_views(self, batch: Batch, n_views: int) -> np.ndarray:
        if batch.views is not None and batch.views.shape[1] == n_views:
            return batch.views
        return np.stack([np.stack([v.frames for v in self(VideoClip(c), int(s), n_views)])
                         for c, s in zip(batch.clips, batch.seeds)])


@dataclass
class LossBreakdown:
    total: Tensor
    ce: Tensor
    global_context: Tensor
    distance: Tensor
    robustness: Tensor
    scores: ClassScores | None = None

    def as_floats(self) -> dict[str, float]:
        return {"total": self.total.item(), "ce": self.ce.item(),
                "global": self.global_context.item(), "dist": self.distance.item(),
                "robust": self.robustness.item()}


# -- components ---------------------------------------------------------------

def cross_entropy(scores, y) -> Tensor:
    """``-log(max(probs[y], 1e-12))``; scalar for one sample, (N,) for a batch."""
    probs = scores.probs if isinstance(scores, ClassScores) else as_tensor(scores)
    y_arr = np.asarray(y, dtype=np.int64)
    n_classes = probs.shape[-1]
    if np.any((y_arr < 0) | (y_arr >= n_classes)):
        raise InvalidInputError(f"label {y} out of range 0..{n_classes - 1}")
    if probs.ndim == 1:
        picked = getitem(probs, int(y_arr))
    else:
        if y_arr.shape != (probs.shape[0],):
            raise DimensionError(f"{y_arr.shape[0] if y_arr.ndim else 1} labels for "
                                 f"{probs.shape[0]} score rows", axis=0)
        picked = getitem(probs, (np.arange(probs.shape[0]), y_arr))
    return mul(log(picked, floor=PROB_FLOOR), -1.0)


def distance_loss(distances, per_sample_ce) -> Tensor:
    """``(1/N) sum_i d_i * CE_i`` with distances in meters."""
    if isinstance(distances, Batch):
        distances = distances.distances
    d = np.asarray(distances, dtype=np.float64)
    ce = per_sample_ce if isinstance(per_sample_ce, Tensor) else Tensor(per_sample_ce)
    if ce.shape != d.shape:
        raise DimensionError(f"{len(d)} distances for {ce.shape} cross-entropies", axis=0)
    return mean(mul(ce, d))


def view_variance_loss(view_ce) -> Tensor:
    """``mean_i sum_j (CE_ij - mean_j CE_ij)^2`` for an (N, M) or (M,) array of view CEs."""
    ce = view_ce if isinstance(view_ce, Tensor) else Tensor(view_ce)
    if ce.ndim == 1:
        ce = reshape(ce, (1, ce.shape[0]))
    if ce.shape[1] < 2:
        raise ConfigError("robustness term needs at least 2 views")
    centered = ce - mean(ce, axis=1).reshape((ce.shape[0], 1))
    return mean(tsum(centered * centered, axis=1))


def symmetric_kl(p, q) -> Tensor:
    """``KL(p||q) + KL(q||p) = sum (p - q)(log p - log q)`` along the last axis, clamped."""
    p, q = as_tensor(p), as_tensor(q)
    return tsum((p - q) * (log(p, floor=PROB_FLOOR) - log(q, floor=PROB_FLOOR)), axis=-1)


def subsample_clip(frames: np.ndarray, stride: int = 2) -> np.ndarray:
    """Keep every ``stride``-th frame along axis -4 and front-pad with the first kept frame."""
    T = frames.shape[-4]
    if T < 4:
        raise InvalidInputError(f"global-context term needs at least 4 frames, got {T}")
    kept = frames[..., ::stride, :, :, :]
    pad = T - kept.shape[-4]
    first = np.repeat(kept[..., :1, :, :, :], pad, axis=-4)
    return np.concatenate([first, kept], axis=-4)


# -- model-level terms --------------------------------------------------------

def _scores(params: ModelParams, clips: np.ndarray, branch: str) -> ClassScores:
    return forward_ablation(clip_batch(clips), params, branch)


def global_context_loss(params: ModelParams, sample, branch: str = "full") -> Tensor:
    """Mean symmetrized KL between full-clip and subsampled-clip predictions."""
    clips = _clips_of(sample)
    full = _scores(params, clips, branch).probs
    sub = _scores(params, subsample_clip(clips), branch).probs
    return mean(symmetric_kl(full, sub))


def robustness_loss(params: ModelParams, sample, weights: LossWeights,
                    degrade: ViewGenerator | None = None, branch: str = "full") -> Tensor:
    """View-variance term for one Sample (or a Batch, averaged over samples)."""
    if weights.views < 2:
        raise ConfigError("robustness term needs at least 2 views")
    batch = sample if isinstance(sample, Batch) else Batch.from_samples([sample])
    views = (degrade or ViewGenerator()).batch_views(batch, weights.views)
    n, m = views.shape[:2]
    scores = _scores(params, views.reshape((n * m,) + views.shape[2:]), branch)
    ce = cross_entropy(scores, np.repeat(batch.labels, m))
    return view_variance_loss(reshape(ce, (n, m)))


def _clips_of(sample) -> np.ndarray:
    if isinstance(sample, Batch):
        return sample.clips
    if isinstance(sample, Sample):
        return sample.clip.frames[None]
    if isinstance(sample, VideoClip):
        return sample.frames[None]
    return np.asarray(sample, dtype=np.float64)


def composite_loss(params: ModelParams, batch: Batch, weights: LossWeights,
                   degrade: ViewGenerator | None = None, branch: str = "full") -> LossBreakdown:
    """Total loss and its four components from a single batched forward pass.

    Full clips, subsampled clips and degraded views are stacked into one batch so
    the whole objective shares one graph.
    """
    n = batch.size
    m = weights.views
    views = (degrade or ViewGenerator()).batch_views(batch, m) if m >= 2 else None
    # The 4 m view is an identity degradation; when it matches the clip exactly
    # its cross-entropy is the clip's own and needs no extra forward pass.
    reuse_first = views is not None and np.array_equal(views[:, 0], batch.clips)
    parts = [batch.clips, subsample_clip(batch.clips)]
    if views is not None:
        rest = views[:, 1:] if reuse_first else views
        parts.append(rest.reshape((-1,) + views.shape[2:]))
    scores = _scores(params, np.concatenate(parts), branch)
    probs = scores.probs

    full = probs[:n]
    ce_each = cross_entropy(full, batch.labels)
    ce = mean(ce_each)
    glob = mean(symmetric_kl(full, probs[n:2 * n]))
    dist = distance_loss(batch.distances, ce_each)
    if views is not None:
        k = m - 1 if reuse_first else m
        view_ce = reshape(cross_entropy(probs[2 * n:], np.repeat(batch.labels, k)), (n, k))
        if reuse_first:
            view_ce = concat([reshape(ce_each, (n, 1)), view_ce], axis=1)
        robust = view_variance_loss(view_ce)
    else:
        robust = Tensor(0.0)
    total = ce + weights.alpha * glob + weights.beta * dist + weights.gamma * robust
    first = ClassScores(full, scores.logits[:n])
    return LossBreakdown(total, ce, glob, dist, robust, first)


def mean_cross_entropy(params: ModelParams, batch: Batch, branch: str = "full") -> Tensor:
    return mean(cross_entropy(_scores(params, batch.clips, branch), batch.labels))
