"""Invertible GAN: joint generation and one-pass latent inference.

The discriminator carries a second head that embeds images into the
generator's latent space in a single forward pass, trained jointly with
the adversarial game. On top of that sit reconstruction and editing,
patch-grid inversion of larger images, and a metric suite.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, DatasetSpec, load_dataset
from .errors import ConfigError, IntegrityError, UnsupportedOperationError
from .evaluation import MetricsReport, fid, metrics_suite, semantic_consistency
from .inversion import interpolate_midpoint, invert, reconstruct, style_mix
from .losses import KernelSpec, LossWeights
from .models import BackboneSpec, DiscriminatorOutput, InvGan, build_model, sample_noise
from .tiling import TileGrid, tiled_invert, tiled_reconstruct
from .training import MODEL_VARIANTS, TrainConfig, TrainState, train

__version__ = "0.1.0"

__all__ = [
    "BackboneSpec",
    "ConfigError",
    "Dataset",
    "DatasetSpec",
    "DiscriminatorOutput",
    "IntegrityError",
    "InvGan",
    "KernelSpec",
    "LossWeights",
    "MODEL_VARIANTS",
    "MetricsReport",
    "TileGrid",
    "TrainConfig",
    "TrainState",
    "UnsupportedOperationError",
    "build_model",
    "fid",
    "interpolate_midpoint",
    "invert",
    "load_checkpoint",
    "load_dataset",
    "metrics_suite",
    "reconstruct",
    "sample_noise",
    "save_checkpoint",
    "semantic_consistency",
    "style_mix",
    "tiled_invert",
    "tiled_reconstruct",
    "train",
    "__version__",
]
