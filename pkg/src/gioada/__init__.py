"""Geometry-guided input/output adversarial domain adaptation for semantic segmentation."""

from .core import (ClassSet, DepthNormalizer, Domain, LossWeights, Sample, encode_input, normalize_depth,
                   one_hot)
from .trainer import GIOAdaTrainer, InputLevel, OutputLevel, Variant, run_training, variant_wiring

__version__ = "0.1.0"

__all__ = [
    "ClassSet", "DepthNormalizer", "Domain", "GIOAdaTrainer", "InputLevel", "LossWeights", "OutputLevel",
    "Sample", "Variant", "encode_input", "normalize_depth", "one_hot", "run_training", "variant_wiring",
]
