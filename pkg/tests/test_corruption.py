"""Tests for the corruption kinds."""

from __future__ import annotations

import numpy as np
import pytest

from crt_restore.const import (
    DEFAULT_LINES_THICKNESS,
    KIND_CENTERED_SQUARE,
    KIND_GAUSSIAN_NOISE,
    KIND_HORIZONTAL_LINES,
    KIND_IDENTITY,
    KIND_WATER_DROPS,
    LINES_FRACTIONS,
)
from crt_restore.corruption import (
    CorruptionParams,
    CorruptionSpec,
    canonical_label,
    corrupt,
    corrupted_fraction,
    parse_kind_label,
    sample_spec,
)
from crt_restore.exceptions import ConfigError, DataError
from crt_restore.helpers import round_half_up

from .conftest import frame_image


def _black_rows(img: np.ndarray) -> int:
    return int(np.all(img == 0.0, axis=(1, 2)).sum())


class TestSampleSpec:
    """Tests for sample_spec."""

    def test_deterministic(self) -> None:
        """Test equal (kind, seed, dims) give equal specs."""
        for kind in (KIND_HORIZONTAL_LINES, KIND_WATER_DROPS, KIND_GAUSSIAN_NOISE):
            assert sample_spec(kind, 11, (64, 48)) == sample_spec(kind, 11, (64, 48))

    def test_seed_changes_layout(self) -> None:
        """Test different seeds move the line bands."""
        a = sample_spec(KIND_HORIZONTAL_LINES, 1, (120, 32))
        b = sample_spec(KIND_HORIZONTAL_LINES, 2, (120, 32))
        assert a.line_bands != b.line_bands

    def test_square_side(self) -> None:
        """Test the square side is round(0.4 * side)."""
        assert sample_spec(KIND_CENTERED_SQUARE, 0, (480, 480)).square_side == 192
        assert sample_spec(KIND_CENTERED_SQUARE, 0, (360, 360)).square_side == 144

    def test_water_drop_count_range(self) -> None:
        """Test drop counts stay within the default range over many seeds."""
        counts = {len(sample_spec(KIND_WATER_DROPS, seed, (64, 64)).drops) for seed in range(1000)}
        assert min(counts) >= 5
        assert max(counts) <= 12
        assert len(counts) > 1

    def test_water_drop_radius_range(self) -> None:
        """Test radii are a 3-10% fraction of the short side and centers lie in the frame."""
        spec = sample_spec(KIND_WATER_DROPS, 4, (100, 200))
        for drop in spec.drops:
            assert 3.0 <= drop.radius <= 10.0
            assert 0.0 <= drop.row < 100.0
            assert 0.0 <= drop.col < 200.0

    def test_lines_label(self) -> None:
        """Test a line label selects the intensity."""
        spec = sample_spec("horizontal-lines-0.2", 0, (100, 32))
        assert spec.kind == KIND_HORIZONTAL_LINES
        assert spec.lines_fraction == 0.2
        assert spec.label == "horizontal-lines-0.2"

    def test_params_override(self) -> None:
        """Test explicit params replace the defaults."""
        spec = sample_spec(KIND_GAUSSIAN_NOISE, 0, (32, 32), CorruptionParams(noise_sigma=0.05))
        assert spec.noise_sigma == 0.05

    def test_unknown_kind(self) -> None:
        """Test an unknown kind is a configuration error."""
        with pytest.raises(ConfigError):
            sample_spec("motion-blur", 0, (32, 32))


class TestHorizontalLines:
    """Tests for the horizontal-lines kind."""

    def test_half_coverage_on_360(self) -> None:
        """Test f = 0.5 on 360 rows blackens exactly 180 rows."""
        img = np.ones((360, 16, 3), dtype=np.float32)
        out = corrupt(img, sample_spec("horizontal-lines-0.5", 5, (360, 16)))
        assert _black_rows(out) == 180
        assert np.all((out == 0.0) | (out == 1.0))

    def test_low_intensity_on_360(self) -> None:
        """Test f = 0.2 on 360 rows blackens exactly 72 rows."""
        img = np.ones((360, 16, 3), dtype=np.float32)
        assert _black_rows(corrupt(img, sample_spec("horizontal-lines-0.2", 5, (360, 16)))) == 72

    def test_bands_do_not_overlap(self) -> None:
        """Test bands are disjoint, in range and use the configured thickness."""
        for seed in range(20):
            spec = sample_spec(KIND_HORIZONTAL_LINES, seed, (50, 16))
            rows = [r for start, n in spec.line_bands for r in range(start, start + n)]
            assert len(rows) == len(set(rows)) == 25
            assert min(rows) >= 0
            assert max(rows) < 50
            lengths = sorted(n for _, n in spec.line_bands)
            assert lengths == [1, 4, 4, 4, 4, 4, 4]

    @pytest.mark.parametrize("fraction", LINES_FRACTIONS)
    def test_exact_row_count_sweep(self, fraction: float) -> None:
        """Test every height from 16 to 512 gets exactly round(f * H) black rows."""
        label = f"{KIND_HORIZONTAL_LINES}-{fraction}"
        for height in range(16, 513):
            target = round_half_up(fraction * height)
            spec = sample_spec(label, height, (height, 16))
            out = corrupt(np.ones((height, 16, 3), dtype=np.float32), spec)
            assert _black_rows(out) == target, height
            assert int(np.count_nonzero(out == 0.0)) == target * 16 * 3, height
            rows = [r for start, n in spec.line_bands for r in range(start, start + n)]
            assert len(rows) == len(set(rows)) == target, height
            assert all(0 <= r < height for r in rows), height
            lengths = [n for _, n in spec.line_bands]
            thickness = DEFAULT_LINES_THICKNESS
            assert lengths.count(thickness) == target // thickness, height
            # at most one band is cut short, holding the remainder
            short = [n for n in lengths if n < thickness]
            assert short == ([target % thickness] if target % thickness else []), height

    def test_thickness_override(self) -> None:
        """Test a custom band thickness."""
        params = CorruptionParams(lines_thickness=2)
        spec = sample_spec(KIND_HORIZONTAL_LINES, 0, (40, 16), params)
        assert all(n == 2 for _, n in spec.line_bands)
        assert sum(n for _, n in spec.line_bands) == 20


class TestCorrupt:
    """Tests for corrupt."""

    def test_identity(self) -> None:
        """Test identity returns an equal copy."""
        img = frame_image(32, 0, 0)
        out = corrupt(img, sample_spec(KIND_IDENTITY, 0, (32, 32)))
        np.testing.assert_array_equal(out, img)
        assert out is not img

    def test_zero_noise_bit_exact(self) -> None:
        """Test sigma 0 leaves the image bit-identical."""
        img = frame_image(32, 1, 0)
        spec = sample_spec(KIND_GAUSSIAN_NOISE, 3, (32, 32), CorruptionParams(noise_sigma=0.0))
        np.testing.assert_array_equal(corrupt(img, spec), img)

    def test_noise_standard_deviation(self) -> None:
        """Test sigma 0.2 noise on mid-gray has sample std close to 0.2."""
        img = np.full((360, 360, 3), 0.5, dtype=np.float32)
        out = corrupt(img, sample_spec(KIND_GAUSSIAN_NOISE, 9, (360, 360)))
        std = float(np.std(out.astype(np.float64) - 0.5))
        assert 0.19 <= std <= 0.21
        assert out.min() >= 0.0
        assert out.max() <= 1.0

    def test_repeatable(self) -> None:
        """Test corrupting twice with the same spec is bit-identical."""
        img = frame_image(48, 0, 2)
        for kind in (KIND_GAUSSIAN_NOISE, KIND_WATER_DROPS, KIND_HORIZONTAL_LINES):
            spec = sample_spec(kind, 21, (48, 48))
            np.testing.assert_array_equal(corrupt(img, spec), corrupt(img, spec))

    def test_centered_square(self) -> None:
        """Test the centered square is black and the rest untouched."""
        img = np.ones((40, 40, 3), dtype=np.float32)
        spec = sample_spec(KIND_CENTERED_SQUARE, 0, (40, 40))
        out = corrupt(img, spec)
        assert spec.square_side == 16
        assert np.all(out[12:28, 12:28] == 0.0)
        assert float(out.sum()) == pytest.approx(3 * (1600 - 256))

    def test_water_drops_stay_inside_circles(self) -> None:
        """Test drops change only pixels inside their circles."""
        img = frame_image(64, 1, 1)
        spec = sample_spec(KIND_WATER_DROPS, 8, (64, 64))
        changed = np.any(corrupt(img, spec) != img, axis=2)
        rows, cols = np.mgrid[0:64, 0:64]
        inside = np.zeros((64, 64), dtype=bool)
        for drop in spec.drops:
            inside |= (rows - drop.row) ** 2 + (cols - drop.col) ** 2 <= drop.radius**2
        assert changed.any()
        assert not np.any(changed & ~inside)

    def test_dimension_mismatch(self) -> None:
        """Test a spec resolved for another size is rejected."""
        spec = sample_spec(KIND_CENTERED_SQUARE, 0, (64, 64))
        with pytest.raises(DataError):
            corrupt(frame_image(32, 0, 0), spec)


class TestCorruptedFraction:
    """Tests for corrupted_fraction."""

    def test_identity(self) -> None:
        """Test identity modifies nothing."""
        assert corrupted_fraction(sample_spec(KIND_IDENTITY, 0, (360, 360)), (360, 360)) == 0.0

    def test_lines(self) -> None:
        """Test 20% lines cover exactly 0.2 of the rows."""
        spec = sample_spec("horizontal-lines-0.2", 0, (360, 360))
        assert corrupted_fraction(spec, (360, 360)) == 0.2

    def test_square(self) -> None:
        """Test the 0.4 square covers 0.16 of a square image."""
        spec = sample_spec(KIND_CENTERED_SQUARE, 0, (360, 360))
        assert corrupted_fraction(spec, (360, 360)) == pytest.approx(0.16)

    def test_noise(self) -> None:
        """Test noise covers every pixel unless sigma is zero."""
        assert corrupted_fraction(sample_spec(KIND_GAUSSIAN_NOISE, 0, (32, 32)), (32, 32)) == 1.0
        quiet = sample_spec(KIND_GAUSSIAN_NOISE, 0, (32, 32), CorruptionParams(noise_sigma=0.0))
        assert corrupted_fraction(quiet, (32, 32)) == 0.0

    def test_drops_with_image_bounded_by_circles(self) -> None:
        """Test the measured drop fraction never exceeds the circle coverage."""
        spec = sample_spec(KIND_WATER_DROPS, 2, (64, 64))
        measured = corrupted_fraction(spec, (64, 64), frame_image(64, 0, 0))
        assert 0.0 < measured <= corrupted_fraction(spec, (64, 64))


class TestLabels:
    """Tests for kind labels and spec records."""

    def test_parse_plain_kind(self) -> None:
        """Test a plain kind parses without overrides."""
        assert parse_kind_label(KIND_WATER_DROPS) == (KIND_WATER_DROPS, {})

    def test_parse_lines_intensity(self) -> None:
        """Test the line intensity suffix."""
        assert parse_kind_label("horizontal-lines-0.5") == (
            KIND_HORIZONTAL_LINES,
            {"lines_fraction": 0.5},
        )

    def test_parse_rejects_bad_fraction(self) -> None:
        """Test a fraction outside (0, 1) is rejected."""
        with pytest.raises(ConfigError):
            parse_kind_label("horizontal-lines-1.5")

    def test_canonical_label(self) -> None:
        """Test plain horizontal-lines resolves to its default intensity."""
        assert canonical_label(KIND_HORIZONTAL_LINES) == "horizontal-lines-0.5"
        assert canonical_label(KIND_IDENTITY) == KIND_IDENTITY

    def test_record_restores_spec(self) -> None:
        """Test a drops spec survives its manifest record."""
        spec = sample_spec(KIND_WATER_DROPS, 6, (64, 64))
        assert CorruptionSpec.from_record(spec.to_record()) == spec

    def test_malformed_record(self) -> None:
        """Test an unknown field is a data error."""
        with pytest.raises(DataError):
            CorruptionSpec.from_record(
                {"kind": KIND_IDENTITY, "seed": 0, "height": 16, "width": 16, "colour": "red"}
            )


class TestCorruptionParams:
    """Tests for CorruptionParams validation."""

    def test_bad_fraction(self) -> None:
        """Test fractions must lie in (0, 1)."""
        with pytest.raises(ConfigError):
            CorruptionParams(square_fraction=1.2)

    def test_bad_drop_range(self) -> None:
        """Test the drop count range must be ordered."""
        with pytest.raises(ConfigError):
            CorruptionParams(drops_count_min=6, drops_count_max=3)

    def test_negative_sigma(self) -> None:
        """Test sigma must be non-negative."""
        with pytest.raises(ConfigError):
            CorruptionParams(noise_sigma=-0.1)
