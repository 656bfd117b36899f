"""Tests for the crt_restore helper utilities."""

from __future__ import annotations

from crt_restore.helpers import make_pair_id, round_half_up, slugify, stable_hash64


class TestSlugify:
    """Tests for the slugify function."""

    def test_simple_text(self) -> None:
        """Test slugify with simple text."""
        assert slugify("traj") == "traj"
        assert slugify("Traj") == "traj"

    def test_text_with_special_characters(self) -> None:
        """Test slugify with separators and punctuation."""
        assert slugify("pick up-cube") == "pick_up_cube"
        assert slugify("frame.0001") == "frame_0001"
        assert slugify("a/b") == "a_b"

    def test_strips_leading_trailing_underscores(self) -> None:
        """Test that leading/trailing separators are stripped."""
        assert slugify("_traj_") == "traj"
        assert slugify("  traj  ") == "traj"

    def test_numbers_survive(self) -> None:
        """Test slugify keeps digits."""
        assert slugify("000012") == "000012"

    def test_empty_string(self) -> None:
        """Test slugify with empty string."""
        assert slugify("") == ""
        assert slugify("---") == ""


class TestRoundHalfUp:
    """Tests for round_half_up."""

    def test_halves_go_up(self) -> None:
        """Test that .5 always rounds up, unlike banker's rounding."""
        assert round_half_up(8.5) == 9
        assert round_half_up(0.5) == 1
        assert round_half_up(2.5) == 3

    def test_counts_used_by_corruptions(self) -> None:
        """Test the line and square counts used by the corruption kinds."""
        assert round_half_up(0.5 * 360) == 180
        assert round_half_up(0.2 * 360) == 72
        assert round_half_up(0.4 * 480) == 192

    def test_below_half_goes_down(self) -> None:
        """Test values below .5 round down."""
        assert round_half_up(3.49) == 3
        assert round_half_up(0.0) == 0


class TestStableHash64:
    """Tests for stable_hash64."""

    def test_deterministic(self) -> None:
        """Test the same parts give the same hash."""
        assert stable_hash64(7, "pair") == stable_hash64(7, "pair")

    def test_parts_matter(self) -> None:
        """Test that different parts or ordering give different hashes."""
        assert stable_hash64(7, "a") != stable_hash64(7, "b")
        assert stable_hash64("a", "b") != stable_hash64("b", "a")

    def test_range(self) -> None:
        """Test the hash fits in 64 unsigned bits."""
        for i in range(50):
            assert 0 <= stable_hash64(i) < 2**64


class TestMakePairId:
    """Tests for make_pair_id."""

    def test_format(self) -> None:
        """Test the pair-id combines slugified trajectory, frame and label."""
        assert make_pair_id("traj_01", "000012", "gaussian-noise") == (
            "traj_01-000012-gaussian-noise"
        )

    def test_label_kept_verbatim(self) -> None:
        """Test labels with intensity suffixes are not slugified."""
        assert make_pair_id("T", "f", "horizontal-lines-0.2").endswith("horizontal-lines-0.2")
