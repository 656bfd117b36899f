"""The Corruption Restoration Transformer pipeline."""

from __future__ import annotations

from .corruption import CorruptionParams, CorruptionSpec, corrupt, sample_spec
from .exceptions import ConfigError, CrtError, DataError, NumericalError, ShapeError
from .restore import RestorationFilter

__all__ = [
    "ConfigError",
    "CorruptionParams",
    "CorruptionSpec",
    "CrtError",
    "DataError",
    "NumericalError",
    "RestorationFilter",
    "ShapeError",
    "corrupt",
    "sample_spec",
]
