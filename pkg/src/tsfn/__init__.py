"""Temporal-spatiotemporal fusion network for long-range gesture recognition.

A small reverse-mode autodiff engine over numpy, the two-branch TSFN model, its
distance-aware composite loss, a procedural gesture-video generator with a
distance degradation model, and a training / evaluation harness.
"""

from .conv import ConvSpec, conv1d_temporal, conv2d_spatial, conv3d_reference
from .errors import (ConfigError, DimensionError, DistanceRangeError, IncompatibleCheckpointError,
                     InvalidInputError, NonFiniteError, TSFNError)
from .gradcheck import grad_check
from .losses import (Batch, LossBreakdown, LossWeights, ViewGenerator, composite_loss,
                     cross_entropy, distance_loss, global_context_loss, robustness_loss,
                     view_variance_loss)
from .metrics import Metrics, average_precision, emit_distance_curve, report_comparison
from .model import (ClassScores, ModelConfig, ModelParams, forward, forward_ablation, fuse,
                    init_params, load_checkpoint, r2plus1d_branch_forward, save_checkpoint,
                    tcn_branch_forward)
from .optim import SGD, Adam, make_optimizer
from .synth import (GestureClass, Sample, SynthConfig, VideoClip, degrade, generate_dataset,
                    render_gesture, sharpness_metric)
from .tensor import Tensor, backward, zero_grad
from .train import TrainConfig, evaluate, train

__version__ = "0.1.0"
