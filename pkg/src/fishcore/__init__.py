"""Desk-scale GFSQ codec, Firefly-style conv codec and Dual-AR streaming generator."""

from .errors import (
    CapacityError,
    ConfigError,
    DataError,
    DomainError,
    FishcoreError,
    FormatError,
    LengthError,
    ShapeError,
    TrainingError,
)
from .gfsq import (
    CodeGrid,
    GfsqConfig,
    RvqConfig,
    code_entropy,
    code_histogram,
    codebook_size,
    fsq_quantize_dim,
    gfsq_decode,
    gfsq_encode,
    grid_quantize,
    grid_to_indices,
    rvq_decode,
    rvq_encode,
    utilization,
)

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "CodeGrid",
    "ConfigError",
    "DataError",
    "DomainError",
    "FishcoreError",
    "FormatError",
    "GfsqConfig",
    "LengthError",
    "RvqConfig",
    "ShapeError",
    "TrainingError",
    "code_entropy",
    "code_histogram",
    "codebook_size",
    "fsq_quantize_dim",
    "gfsq_decode",
    "gfsq_encode",
    "grid_quantize",
    "grid_to_indices",
    "rvq_decode",
    "rvq_encode",
    "utilization",
]
