"""Image I/O, Gaussian blur and the PSNR / SSIM quality metrics.

An image is a channels-last float array of shape (H, W, 3) with values in
[0, 1]. Files are 8-bit RGB PNG; floats are quantized only on save.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
import logging
import math
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt
from PIL import Image as PILImage, UnidentifiedImageError

from .autodiff import Tensor, correlate2d
from .const import (
    CHANNELS,
    MIN_IMAGE_SIDE,
    PSNR_CAP_DB,
    SSIM_K1,
    SSIM_K2,
    SSIM_SIGMA,
    SSIM_WINDOW,
)
from .exceptions import DataError

Image = npt.NDArray[np.floating[Any]]

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class SsimParams:
    """Gaussian window and stabilizers for SSIM."""

    window_size: int = SSIM_WINDOW
    sigma: float = SSIM_SIGMA
    k1: float = SSIM_K1
    k2: float = SSIM_K2
    dynamic_range: float = 1.0

    def __post_init__(self) -> None:
        """Validate the window."""
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ValueError(f"SSIM window must be odd and positive, got {self.window_size}")
        if self.sigma <= 0:
            raise ValueError(f"SSIM window sigma must be positive, got {self.sigma}")

    @property
    def c1(self) -> float:
        """Return the luminance stabilizer (K1 L)^2."""
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        """Return the contrast stabilizer (K2 L)^2."""
        return (self.k2 * self.dynamic_range) ** 2

    @cached_property
    def window(self) -> npt.NDArray[np.float64]:
        """Return the normalized 2D Gaussian window."""
        radius = self.window_size // 2
        line = gaussian_kernel1d(self.sigma, radius)
        return np.outer(line, line)


DEFAULT_SSIM = SsimParams()


def check_image(x: Any, what: str = "image") -> Image:
    """Validate an image array and return it.

    Raises:
        DataError: Wrong rank or channel count, too small, non-finite or out
            of [0, 1]
    """
    arr = np.asarray(x)
    if arr.ndim != 3 or arr.shape[2] != CHANNELS:
        raise DataError(f"{what}: non-RGB array of shape {arr.shape}")
    if arr.shape[0] < MIN_IMAGE_SIDE or arr.shape[1] < MIN_IMAGE_SIDE:
        raise DataError(
            f"{what}: dimensions {arr.shape[0]}x{arr.shape[1]} below minimum {MIN_IMAGE_SIDE}"
        )
    if not np.issubdtype(arr.dtype, np.floating):
        raise DataError(f"{what}: expected floating-point pixels, got {arr.dtype}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{what}: non-finite pixel values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise DataError(f"{what}: pixel values outside [0, 1]")
    return arr


def load_image(path: str | Path) -> Image:
    """Read an 8-bit RGB file into a float32 image in [0, 1]."""
    path = Path(path)
    try:
        with PILImage.open(path) as img:
            img.load()
            mode = img.mode
            if mode != "RGB":
                raise DataError(f"{path}: non-RGB image (mode {mode})")
            raw = np.asarray(img, dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as err:
        raise DataError(f"{path}: unreadable image ({err})") from err
    if raw.shape[0] < MIN_IMAGE_SIDE or raw.shape[1] < MIN_IMAGE_SIDE:
        raise DataError(
            f"{path}: dimensions {raw.shape[0]}x{raw.shape[1]} below minimum {MIN_IMAGE_SIDE}"
        )
    return raw.astype(np.float32) / np.float32(255.0)


def quantize(x: Image) -> npt.NDArray[np.uint8]:
    """Map [0, 1] floats to 8-bit values, rounding half up."""
    scaled = np.floor(np.asarray(x, dtype=np.float64) * 255.0 + 0.5)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def save_image(x: Image, path: str | Path) -> None:
    """Write an image as 8-bit RGB PNG."""
    check_image(x)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        PILImage.fromarray(quantize(x)).save(path, format="PNG")
    except OSError as err:
        raise DataError(f"{path}: cannot write image ({err})") from err


def _check_pair(a: Image, b: Image, what: str) -> None:
    if np.shape(a) != np.shape(b):
        raise DataError(f"{what}: dimension mismatch {np.shape(a)} vs {np.shape(b)}")


def psnr(a: Image, b: Image) -> float:
    """Return the peak signal-to-noise ratio in dB for unit dynamic range.

    Identical images return the 99 dB cap.
    """
    _check_pair(a, b, "psnr")
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, -10.0 * math.log10(mse))


def gaussian_kernel1d(sigma: float, radius: int) -> npt.NDArray[np.float64]:
    """Return a normalized 1D Gaussian of length 2 * radius + 1."""
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    weights = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return weights / weights.sum()


def _filter_valid(
    x: npt.NDArray[np.float64], window: npt.NDArray[np.float64]
) -> npt.NDArray[np.float64]:
    views = np.lib.stride_tricks.sliding_window_view(x, window.shape, axis=(0, 1))
    return np.einsum("ijcuv,uv->ijc", views, window)


def ssim(a: Image, b: Image, params: SsimParams = DEFAULT_SSIM) -> float:
    """Return windowed SSIM averaged over window positions and channels.

    Local statistics use the Gaussian window at every valid position; each
    channel is scored separately.
    """
    _check_pair(a, b, "ssim")
    a64 = np.asarray(a, dtype=np.float64)
    b64 = np.asarray(b, dtype=np.float64)
    if a64.ndim != 3:
        raise DataError(f"ssim: expected (H, W, C) images, got {a64.shape}")
    if min(a64.shape[:2]) < params.window_size:
        raise DataError(f"ssim: image {a64.shape[:2]} smaller than window {params.window_size}")
    w = params.window
    mu_a = _filter_valid(a64, w)
    mu_b = _filter_valid(b64, w)
    var_a = _filter_valid(a64 * a64, w) - mu_a * mu_a
    var_b = _filter_valid(b64 * b64, w) - mu_b * mu_b
    cov = _filter_valid(a64 * b64, w) - mu_a * mu_b
    c1, c2 = params.c1, params.c2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim_tensor(a: Tensor, b: Tensor, params: SsimParams = DEFAULT_SSIM) -> Tensor:
    """Differentiable SSIM over (..., H, W, C) tensors, averaged to a scalar.

    Mirrors ssim() operation for operation on the autodiff engine.
    """
    if a.shape != b.shape:
        raise DataError(f"ssim: dimension mismatch {a.shape} vs {b.shape}")
    if min(a.shape[-3], a.shape[-2]) < params.window_size:
        raise DataError(f"ssim: image {a.shape[-3:-1]} smaller than window {params.window_size}")
    w = params.window
    mu_a = correlate2d(a, w)
    mu_b = correlate2d(b, w)
    mu_aa = mu_a * mu_a
    mu_bb = mu_b * mu_b
    mu_ab = mu_a * mu_b
    var_a = correlate2d(a * a, w) - mu_aa
    var_b = correlate2d(b * b, w) - mu_bb
    cov = correlate2d(a * b, w) - mu_ab
    num = (mu_ab * 2.0 + params.c1) * (cov * 2.0 + params.c2)
    den = (mu_aa + mu_bb + params.c1) * (var_a + var_b + params.c2)
    return (num / den).mean()


def gaussian_blur(x: Image, sigma: float) -> Image:
    """Separable Gaussian blur with radius ceil(3 sigma) and clamp-to-edge borders."""
    if sigma <= 0:
        raise ValueError(f"blur sigma must be positive, got {sigma}")
    arr = np.asarray(x)
    radius = math.ceil(3.0 * sigma)
    kernel = gaussian_kernel1d(sigma, radius)
    height, width = arr.shape[0], arr.shape[1]
    padded = np.pad(
        arr.astype(np.float64),
        ((radius, radius), (radius, radius), (0, 0)),
        mode="edge",
    )
    rows = np.zeros((height, padded.shape[1], arr.shape[2]), dtype=np.float64)
    for k, weight in enumerate(kernel):
        rows += weight * padded[k : k + height]
    out = np.zeros((height, width, arr.shape[2]), dtype=np.float64)
    for k, weight in enumerate(kernel):
        out += weight * rows[:, k : k + width]
    return np.clip(out, 0.0, 1.0).astype(arr.dtype)


def stack_images(images: list[Image]) -> npt.NDArray[np.float32]:
    """Stack equally sized images into a float32 (B, H, W, 3) batch."""
    if not images:
        raise DataError("cannot stack an empty image list")
    first = np.shape(images[0])
    for img in images[1:]:
        if np.shape(img) != first:
            raise DataError(f"batch dimension mismatch {first} vs {np.shape(img)}")
    return np.stack([np.asarray(img, dtype=np.float32) for img in images])
