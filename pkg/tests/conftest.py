"""Common fixtures for the crt_restore tests."""

from __future__ import annotations

from pathlib import Path
import sys

import numpy as np
import pytest

# Make the package importable without installing it
sys.path.insert(0, str(Path(__file__).parent.parent))

from crt_restore.const import KIND_GAUSSIAN_NOISE, KIND_IDENTITY
from crt_restore.dataset import Manifest, build_dataset
from crt_restore.imaging import save_image
from crt_restore.model import ModelConfig, ParameterSet, init_params


def frame_image(side: int, trajectory: int, frame: int) -> np.ndarray:
    """Return a smooth, non-constant RGB frame that differs per (trajectory, frame)."""
    rows = np.linspace(0.0, 1.0, side)[:, None]
    cols = np.linspace(0.0, 1.0, side)[None, :]
    base = 0.15 + 0.5 * rows + 0.25 * cols + 0.03 * trajectory + 0.01 * frame
    stripes = 0.05 * np.sin(2.0 * np.pi * (cols * 3.0 + rows * (1 + trajectory)))
    img = np.stack([base + stripes, base * 0.8, 0.9 - 0.6 * rows + stripes], axis=-1)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def write_frames(root: Path, trajectories: int = 2, frames: int = 3, side: int = 32) -> Path:
    """Write trajectory subdirectories of PNG frames under root."""
    for t in range(trajectories):
        for f in range(frames):
            save_image(frame_image(side, t, f), root / f"traj_{t:02d}" / f"{f:06d}.png")
    return root


@pytest.fixture
def frames_root(tmp_path: Path) -> Path:
    """Two trajectories of three 32x32 frames."""
    return write_frames(tmp_path / "frames")


@pytest.fixture
def dataset(tmp_path: Path, frames_root: Path) -> Manifest:
    """Identity and gaussian-noise pairs built from frames_root."""
    return build_dataset(
        frames_root, tmp_path / "dataset", [KIND_IDENTITY, KIND_GAUSSIAN_NOISE], seed=3
    )


@pytest.fixture
def tiny_config() -> ModelConfig:
    """Smallest model the architecture allows on 32x32 images."""
    return ModelConfig(image_size=32, patch_size=8, embed_dim=16, depth=1, num_heads=2)


@pytest.fixture
def tiny_params(tiny_config: ModelConfig) -> ParameterSet:
    """Freshly initialized tiny parameters."""
    return init_params(tiny_config, seed=0)
