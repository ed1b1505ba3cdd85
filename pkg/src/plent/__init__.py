"""plent: training with partial (weight-subset) local-entropy smoothing.

The package bundles a small from-scratch network engine, the family of
subset-restricted smoothed losses (PLEA / PLA and their finite-sharpness
variants), per-layer gradient-signal telemetry, a momentum-SGD trainer,
dataset loaders, and a config-driven experiment harness.
"""

from .net import (
    Conv3x3,
    Dense,
    FlatGradient,
    Flatten,
    MaxPool2x2,
    Network,
    ReLU,
    ShapeError,
    TanH,
    cross_entropy,
    kaiming_init,
)
from .entropic import (
    SmoothingSpec,
    WeightMask,
    kernel,
    kernel_averaged_loss,
    make_loss_fn,
    pla_loss,
    plea_loss,
    restricted_distance,
    sample_displacements,
    soft_distance,
    soft_plea_loss,
)
from .telemetry import SignalRecorder, detect_regimes, layer_signal
from .trainer import OptimizerState, Schedule, TrainReport, evaluate, sgd_step, train
from .data import AugmentSpec, Dataset, augment, load_cifar10, load_idx, subset
from .models import ARCHITECTURES, build_model

__version__ = "0.1.0"
