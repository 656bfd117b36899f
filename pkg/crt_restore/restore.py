"""Restoration filter placed upstream of a downstream policy."""

from __future__ import annotations

from collections.abc import Sequence
import logging
from pathlib import Path

import numpy as np

from .autodiff import no_grad
from .checkpoint import Checkpoint, load_checkpoint
from .exceptions import ConfigError, DataError
from .imaging import Image, check_image, stack_images
from .model import ModelConfig, ParameterSet, generator_forward

_LOGGER = logging.getLogger(__name__)


def restore_batch(params: ParameterSet, images: np.ndarray) -> np.ndarray:
    """Run the generator on a [B, H, W, 3] batch without recording a graph."""
    with no_grad():
        restored = generator_forward(params, images)
    return np.clip(restored.data, 0.0, 1.0).astype(np.float32)


class RestorationFilter:
    """Callable frame -> frame restorer backed by one checkpoint.

    The checkpoint is loaded once; every call is a pure generator forward
    pass.
    """

    def __init__(self, checkpoint: str | Path | Checkpoint, batch_size: int = 8) -> None:
        """Initialize from a checkpoint path or an already loaded checkpoint."""
        if batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {batch_size}")
        if not isinstance(checkpoint, Checkpoint):
            checkpoint = load_checkpoint(checkpoint)
        self.params = checkpoint.params
        self.batch_size = batch_size
        _LOGGER.debug("Restoration filter ready (image size %d)", self.config.image_size)

    @property
    def config(self) -> ModelConfig:
        """Return the model config."""
        return self.params.config

    def _check(self, frame: Image, index: int) -> Image:
        arr = check_image(frame, f"frame {index}")
        side = self.config.image_size
        if arr.shape[:2] != (side, side):
            raise DataError(
                f"frame {index}: size {arr.shape[0]}x{arr.shape[1]} does not match"
                f" model image size {side}x{side}"
            )
        return arr

    def __call__(self, frame: Image) -> Image:
        """Restore one frame."""
        return self.restore_many([frame])[0]

    def restore_many(self, frames: Sequence[Image]) -> list[Image]:
        """Restore frames in batches of batch_size, preserving order."""
        checked = [self._check(frame, i) for i, frame in enumerate(frames)]
        out: list[Image] = []
        for start in range(0, len(checked), self.batch_size):
            batch = stack_images(checked[start : start + self.batch_size])
            out.extend(restore_batch(self.params, batch))
        return out
