"""Exceptions raised by the crt_restore package."""

from __future__ import annotations

from typing import Any


class CrtError(Exception):
    """Base error for the restoration pipeline."""


class ConfigError(CrtError):
    """Invalid configuration, profile or command-line flag."""


class DataError(CrtError):
    """Unreadable, missing or inconsistent image or dataset data."""


class ShapeError(CrtError, ValueError):
    """Operand shapes are invalid for an autodiff op."""

    def __init__(self, op: str, *shapes: tuple[int, ...], detail: str = "") -> None:
        """Initialize with the op-kind and the offending shapes."""
        self.op = op
        self.shapes = shapes
        joined = " vs ".join(str(tuple(s)) for s in shapes)
        msg = f"{op}: incompatible shapes {joined}"
        if detail:
            msg = f"{msg} ({detail})"
        super().__init__(msg)


class NumericalError(CrtError):
    """A loss, gradient or gradient check produced a non-finite or failing value."""

    def __init__(self, message: str, details: dict[str, Any] | None = None) -> None:
        """Initialize with an optional breakdown for diagnostics."""
        super().__init__(message)
        self.details: dict[str, Any] = details or {}
