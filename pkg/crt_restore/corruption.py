"""Seeded synthesis of the five sensor corruptions x' = C(x, M).

sample_spec resolves every random choice (line bands, drop geometry) into a
CorruptionSpec; corrupt is then a pure function of (image, spec). Gaussian
noise is drawn at corruption time from a stream keyed by the spec's seed, so
the stored spec still reproduces the corrupted image bit for bit.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
import logging
import math
from typing import Any

import numpy as np

from .const import (
    CORRUPTION_KINDS,
    DEFAULT_DROPS_ALPHA,
    DEFAULT_DROPS_COUNT_RANGE,
    DEFAULT_DROPS_RADIUS_RANGE,
    DEFAULT_LINES_FRACTION,
    DEFAULT_LINES_THICKNESS,
    DEFAULT_NOISE_SIGMA,
    DEFAULT_SQUARE_FRACTION,
    KIND_CENTERED_SQUARE,
    KIND_GAUSSIAN_NOISE,
    KIND_HORIZONTAL_LINES,
    KIND_IDENTITY,
    KIND_WATER_DROPS,
)
from .exceptions import ConfigError, DataError
from .helpers import round_half_up
from .imaging import Image, gaussian_blur
from .rng import Rng

_LOGGER = logging.getLogger(__name__)


def _check_fraction(name: str, value: float) -> None:
    if not 0.0 < value < 1.0:
        raise ConfigError(f"{name} must lie in (0, 1), got {value}")


@dataclass(frozen=True)
class CorruptionParams:
    """Unresolved magnitudes for every corruption kind."""

    square_fraction: float = DEFAULT_SQUARE_FRACTION
    noise_sigma: float = DEFAULT_NOISE_SIGMA
    lines_fraction: float = DEFAULT_LINES_FRACTION
    lines_thickness: int = DEFAULT_LINES_THICKNESS
    drops_count_min: int = DEFAULT_DROPS_COUNT_RANGE[0]
    drops_count_max: int = DEFAULT_DROPS_COUNT_RANGE[1]
    drops_radius_min: float = DEFAULT_DROPS_RADIUS_RANGE[0]
    drops_radius_max: float = DEFAULT_DROPS_RADIUS_RANGE[1]
    drops_alpha: float = DEFAULT_DROPS_ALPHA

    def __post_init__(self) -> None:
        """Validate ranges."""
        _check_fraction("square_fraction", self.square_fraction)
        _check_fraction("lines_fraction", self.lines_fraction)
        _check_fraction("drops_radius_min", self.drops_radius_min)
        _check_fraction("drops_radius_max", self.drops_radius_max)
        _check_fraction("drops_alpha", self.drops_alpha)
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.lines_thickness < 1:
            raise ConfigError(f"lines_thickness must be >= 1, got {self.lines_thickness}")
        if not 1 <= self.drops_count_min <= self.drops_count_max:
            raise ConfigError(
                f"drop count range [{self.drops_count_min}, {self.drops_count_max}] is invalid"
            )
        if self.drops_radius_min > self.drops_radius_max:
            raise ConfigError("drops_radius_min exceeds drops_radius_max")

    def with_overrides(self, **overrides: Any) -> CorruptionParams:
        """Return a copy with the given fields replaced."""
        return replace(self, **overrides)


@dataclass(frozen=True)
class WaterDrop:
    """One lens drop: circle center (row, col) and radius in pixels."""

    row: float
    col: float
    radius: float


@dataclass(frozen=True)
class CorruptionSpec:
    """Fully resolved, seeded description of one corruption instance."""

    kind: str
    seed: int
    height: int
    width: int
    square_side: int | None = None
    noise_sigma: float | None = None
    lines_fraction: float | None = None
    lines_thickness: int | None = None
    line_bands: tuple[tuple[int, int], ...] = ()
    drops_alpha: float | None = None
    drops: tuple[WaterDrop, ...] = ()

    @property
    def label(self) -> str:
        """Return the reporting label; line corruptions carry their intensity."""
        if self.kind == KIND_HORIZONTAL_LINES and self.lines_fraction is not None:
            return f"{self.kind}-{self.lines_fraction:g}"
        return self.kind

    def to_record(self) -> dict[str, Any]:
        """Return a flat JSON-friendly record, omitting unused fields."""
        record: dict[str, Any] = {"kind": self.kind, "seed": self.seed}
        record["height"], record["width"] = self.height, self.width
        for key, value in asdict(self).items():
            if key in record or value is None or value == ():
                continue
            if key == "line_bands":
                value = [list(band) for band in self.line_bands]
            elif key == "drops":
                value = [[d.row, d.col, d.radius] for d in self.drops]
            record[key] = value
        return record

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> CorruptionSpec:
        """Rebuild a spec from to_record() output."""
        data = dict(record)
        data["line_bands"] = tuple(tuple(band) for band in data.get("line_bands", ()))
        data["drops"] = tuple(WaterDrop(*drop) for drop in data.get("drops", ()))
        try:
            spec = cls(**data)
        except TypeError as err:
            raise DataError(f"malformed corruption record: {err}") from err
        validate_spec(spec)
        return spec


def parse_kind_label(label: str) -> tuple[str, dict[str, Any]]:
    """Split a kind label into (kind, parameter overrides).

    "horizontal-lines-0.2" selects horizontal lines at 20% coverage.
    """
    if label in CORRUPTION_KINDS:
        return label, {}
    prefix = f"{KIND_HORIZONTAL_LINES}-"
    if label.startswith(prefix):
        try:
            fraction = float(label.removeprefix(prefix))
        except ValueError:
            pass
        else:
            _check_fraction("lines_fraction", fraction)
            return KIND_HORIZONTAL_LINES, {"lines_fraction": fraction}
    raise ConfigError(f"unknown corruption kind {label!r}; expected one of {CORRUPTION_KINDS}")


def canonical_label(kind: str, params: CorruptionParams | None = None) -> str:
    """Return the label a kind resolves to, e.g. "horizontal-lines-0.5"."""
    kind, overrides = parse_kind_label(kind)
    if kind != KIND_HORIZONTAL_LINES:
        return kind
    fraction = overrides.get("lines_fraction", (params or CorruptionParams()).lines_fraction)
    return f"{kind}-{fraction:g}"


def validate_spec(spec: CorruptionSpec) -> None:
    """Check the corruption spec is well formed.

    Raises:
        ConfigError: Unknown kind or out-of-range parameter
    """
    if spec.kind not in CORRUPTION_KINDS:
        raise ConfigError(f"unknown corruption kind {spec.kind!r}")
    if spec.noise_sigma is not None and spec.noise_sigma < 0:
        raise ConfigError(f"noise sigma must be >= 0, got {spec.noise_sigma}")
    if spec.lines_fraction is not None:
        _check_fraction("lines_fraction", spec.lines_fraction)
    if spec.lines_thickness is not None and spec.lines_thickness < 1:
        raise ConfigError(f"line thickness must be >= 1, got {spec.lines_thickness}")
    if spec.drops_alpha is not None:
        _check_fraction("drops_alpha", spec.drops_alpha)
    if spec.kind == KIND_WATER_DROPS and not spec.drops:
        raise ConfigError("water-drops spec needs at least one drop")


def _line_bands(
    rng: Rng, height: int, fraction: float, thickness: int
) -> tuple[tuple[int, int], ...]:
    """Place non-overlapping bands covering exactly round(fraction * height) rows.

    Full bands have `thickness` rows; when the target is not a multiple of
    the thickness one band is shortened to the remainder.
    """
    target = round_half_up(fraction * height)
    lengths = [thickness] * (target // thickness)
    if target % thickness:
        lengths.append(target % thickness)
    if not lengths:
        return ()
    lengths = [lengths[i] for i in rng.split("lengths").permutation(len(lengths))]
    free = height - target
    slots = rng.split("slots").sorted_sample(free + len(lengths), len(lengths))
    bands = []
    covered = 0
    for i, (slot, length) in enumerate(zip(slots, lengths, strict=True)):
        start = slot - i + covered
        bands.append((start, length))
        covered += length
    return tuple(bands)


def sample_spec(
    kind: str,
    seed: int,
    dims: tuple[int, int],
    params: CorruptionParams | None = None,
) -> CorruptionSpec:
    """Resolve every random choice of a corruption for an image size.

    Args:
        kind: Corruption kind or label such as "horizontal-lines-0.2"
        seed: 64-bit seed; equal (kind, seed, dims, params) give equal specs
        dims: Image (height, width)
        params: Magnitudes; defaults per kind when omitted

    Returns:
        The resolved spec
    """
    kind, overrides = parse_kind_label(kind)
    params = (params or CorruptionParams()).with_overrides(**overrides)
    height, width = int(dims[0]), int(dims[1])
    rng = Rng(seed, kind, height, width)
    base = CorruptionSpec(kind=kind, seed=int(seed), height=height, width=width)

    if kind == KIND_CENTERED_SQUARE:
        side = round_half_up(params.square_fraction * min(height, width))
        return replace(base, square_side=side)
    if kind == KIND_GAUSSIAN_NOISE:
        return replace(base, noise_sigma=params.noise_sigma)
    if kind == KIND_HORIZONTAL_LINES:
        bands = _line_bands(rng, height, params.lines_fraction, params.lines_thickness)
        return replace(
            base,
            lines_fraction=params.lines_fraction,
            lines_thickness=params.lines_thickness,
            line_bands=bands,
        )
    if kind == KIND_WATER_DROPS:
        drop_rng = rng.split("drops")
        count = drop_rng.integer(params.drops_count_min, params.drops_count_max)
        short = min(height, width)
        drops = []
        for index in range(count):
            one = drop_rng.split(index)
            radius = one.uniform(params.drops_radius_min, params.drops_radius_max) * short
            drops.append(
                WaterDrop(row=one.uniform(0.0, height), col=one.uniform(0.0, width), radius=radius)
            )
        return replace(base, drops_alpha=params.drops_alpha, drops=tuple(drops))
    return base


def _square_box(spec: CorruptionSpec) -> tuple[int, int, int]:
    side = spec.square_side or 0
    return (spec.height - side) // 2, (spec.width - side) // 2, side


def _drop_mask(
    drop: WaterDrop, rows: np.ndarray, cols: np.ndarray
) -> np.ndarray:
    return (rows[:, None] - drop.row) ** 2 + (cols[None, :] - drop.col) ** 2 <= drop.radius**2


def _apply_drop(out: Image, drop: WaterDrop, alpha: float) -> None:
    """Blend one blurred circle into out in place."""
    height, width = out.shape[:2]
    margin = math.ceil(drop.radius)
    top = max(0, math.floor(drop.row - drop.radius) - margin)
    bottom = min(height, math.ceil(drop.row + drop.radius) + margin + 1)
    left = max(0, math.floor(drop.col - drop.radius) - margin)
    right = min(width, math.ceil(drop.col + drop.radius) + margin + 1)
    crop = out[top:bottom, left:right]
    mask = _drop_mask(drop, np.arange(top, bottom), np.arange(left, right))
    if not mask.any():
        return
    blurred = gaussian_blur(crop, drop.radius / 3.0).astype(np.float64)
    original = crop.astype(np.float64)
    mixed = alpha * blurred + (1.0 - alpha) * original
    crop[mask] = mixed[mask].astype(out.dtype)


def corrupt(x: Image, spec: CorruptionSpec) -> Image:
    """Apply a resolved corruption to an image.

    Raises:
        DataError: The spec was resolved for different image dimensions
    """
    arr = np.asarray(x)
    if arr.shape[:2] != (spec.height, spec.width):
        raise DataError(
            f"{spec.kind}: spec resolved for {spec.height}x{spec.width},"
            f" image is {arr.shape[0]}x{arr.shape[1]}"
        )
    out = arr.copy()
    if spec.kind == KIND_IDENTITY:
        return out
    if spec.kind == KIND_CENTERED_SQUARE:
        top, left, side = _square_box(spec)
        out[top : top + side, left : left + side, :] = 0.0
        return out
    if spec.kind == KIND_HORIZONTAL_LINES:
        for start, rows in spec.line_bands:
            out[start : start + rows, :, :] = 0.0
        return out
    if spec.kind == KIND_GAUSSIAN_NOISE:
        sigma = spec.noise_sigma or 0.0
        if sigma == 0.0:
            return out
        noise = Rng(spec.seed, spec.kind, "noise").normal(sigma, arr.shape)
        return np.clip(arr.astype(np.float64) + noise, 0.0, 1.0).astype(arr.dtype)
    if spec.kind == KIND_WATER_DROPS:
        alpha = spec.drops_alpha if spec.drops_alpha is not None else DEFAULT_DROPS_ALPHA
        for drop in spec.drops:
            _apply_drop(out, drop, alpha)
        return out
    raise DataError(f"unknown corruption kind {spec.kind!r}")


def corrupted_fraction(
    spec: CorruptionSpec, dims: tuple[int, int], image: Image | None = None
) -> float:
    """Return the fraction of pixel positions the corruption modifies.

    Masking kinds are computed exactly from the spec. For noise and drops,
    an image is compared directly when given; otherwise noise counts every
    pixel (or none when sigma is 0) and drops count the union of their
    declared circles.
    """
    height, width = int(dims[0]), int(dims[1])
    total = float(height * width)
    if spec.kind == KIND_IDENTITY:
        return 0.0
    if spec.kind == KIND_CENTERED_SQUARE:
        side = min(spec.square_side or 0, height, width)
        return side * side / total
    if spec.kind == KIND_HORIZONTAL_LINES:
        return sum(rows for _, rows in spec.line_bands) / float(height)
    if image is not None:
        changed = np.any(corrupt(image, spec) != np.asarray(image), axis=2)
        return float(changed.sum()) / total
    if spec.kind == KIND_GAUSSIAN_NOISE:
        return 1.0 if (spec.noise_sigma or 0.0) > 0 else 0.0
    covered = np.zeros((height, width), dtype=bool)
    rows, cols = np.arange(height), np.arange(width)
    for drop in spec.drops:
        covered |= _drop_mask(drop, rows, cols)
    return float(covered.sum()) / total
