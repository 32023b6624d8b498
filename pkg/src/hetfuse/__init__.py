"""Heterogeneous spatio-spectral-temporal fusion with a deep residual cycle GAN."""

from hetfuse.errors import (
    BandMismatch,
    ConfigError,
    DegenerateReference,
    DivergenceError,
    FormatError,
    HetfuseError,
    NotDivisible,
    PatchTooLarge,
    ShapeError,
    SizeMismatch,
    StrategyMismatch,
    TooSmall,
)
from hetfuse.imagery import Kind, NormStats, RasterImage, ValueRange

__version__ = "0.1.0"

__all__ = [
    "BandMismatch",
    "ConfigError",
    "DegenerateReference",
    "DivergenceError",
    "FormatError",
    "HetfuseError",
    "Kind",
    "NormStats",
    "NotDivisible",
    "PatchTooLarge",
    "RasterImage",
    "ShapeError",
    "SizeMismatch",
    "StrategyMismatch",
    "TooSmall",
    "ValueRange",
]
