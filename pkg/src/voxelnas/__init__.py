"""Differentiable architecture search for volumetric classification.

A supernet of 3D mobile-inverted-bottleneck candidates is searched with
Gumbel-Softmax sampling (hard forward, soft backward), the best architectures
are shortlisted and retrained stand-alone, and trained models explain their
predictions through class activation maps. Includes a from-scratch autodiff
engine whose convolution kernels run on a compiled extension when available
(pure numpy otherwise) and a self-contained volumetric data pipeline.
"""

from . import cam, checkpoint, data, dnas, metrics, numerics, search_space
from .errors import (
    ArgumentError,
    ConfigError,
    DimensionError,
    FormatError,
    NumericsError,
    StateError,
    VoxelNasError,
)

__version__ = "0.1.0"

__all__ = [
    "cam", "checkpoint", "data", "dnas", "metrics", "numerics", "search_space",
    "ArgumentError", "ConfigError", "DimensionError", "FormatError",
    "NumericsError", "StateError", "VoxelNasError", "__version__",
]
