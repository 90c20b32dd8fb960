"""Face frontalization GAN with global and per-landmark local pathways."""

from .data import (
    DatasetManifest,
    FaceSample,
    canonicalize_flip,
    generate_synthetic,
    load_sample,
)
from .errors import (
    CheckpointError,
    ConfigurationError,
    FacefrontError,
    ManifestError,
    NumericsError,
    ValidationError,
)
from .estimators import FrontalizationGAN, IdentityEmbedder
from .losses import LossReport, LossWeights
from .patches import DEFAULT_PATCH_SPECS, PatchSpec, crop_patches, place_and_fuse
from .training import TrainingConfig, train

__version__ = "0.1.0"

__all__ = [
    "DatasetManifest",
    "FaceSample",
    "canonicalize_flip",
    "generate_synthetic",
    "load_sample",
    "FacefrontError",
    "ValidationError",
    "ManifestError",
    "CheckpointError",
    "ConfigurationError",
    "NumericsError",
    "FrontalizationGAN",
    "IdentityEmbedder",
    "LossReport",
    "LossWeights",
    "PatchSpec",
    "DEFAULT_PATCH_SPECS",
    "crop_patches",
    "place_and_fuse",
    "TrainingConfig",
    "train",
    "__version__",
]
