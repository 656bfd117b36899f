"""Tests for the keyed random streams."""

from __future__ import annotations

import numpy as np
import pytest

from crt_restore.rng import Rng


class TestRng:
    """Tests for Rng."""

    def test_same_key_same_stream(self) -> None:
        """Test identical keys reproduce identical draws."""
        a = Rng(5, "noise", 32).normal(1.0, (4, 4))
        b = Rng(5, "noise", 32).normal(1.0, (4, 4))
        np.testing.assert_array_equal(a, b)

    def test_labels_separate_streams(self) -> None:
        """Test different label paths give different draws."""
        a = Rng(5, "noise").normal(1.0, (16,))
        b = Rng(5, "drops").normal(1.0, (16,))
        assert not np.array_equal(a, b)

    def test_split_matches_explicit_labels(self) -> None:
        """Test split() is equivalent to constructing with the extended path."""
        child = Rng(9, "a").split("b", 3)
        direct = Rng(9, "a", "b", 3)
        assert child.uniform(0, 1) == direct.uniform(0, 1)

    def test_split_independent_of_parent_use(self) -> None:
        """Test drawing from a parent does not change a child stream."""
        parent = Rng(1, "p")
        first = parent.split("c").integer(0, 1000)
        parent.normal(1.0, (100,))
        assert parent.split("c").integer(0, 1000) == first

    def test_integer_inclusive(self) -> None:
        """Test integer() covers both ends."""
        rng = Rng(0, "int")
        seen = {rng.integer(5, 7) for _ in range(200)}
        assert seen == {5, 6, 7}

    def test_sorted_sample(self) -> None:
        """Test sorted_sample returns distinct ascending values."""
        picks = Rng(3).sorted_sample(20, 6)
        assert picks == sorted(set(picks))
        assert len(picks) == 6
        assert all(0 <= p < 20 for p in picks)
        assert Rng(3).sorted_sample(5, 0) == []

    def test_permutation(self) -> None:
        """Test permutation covers the range once."""
        assert sorted(Rng(4).permutation(10)) == list(range(10))

    def test_truncated_normal_bound(self) -> None:
        """Test truncated normal samples stay within the bound."""
        values = Rng(2, "init").truncated_normal(0.02, (64, 64))
        assert np.all(np.abs(values) <= 0.04)

    def test_random_range(self) -> None:
        """Test random() respects its interval."""
        values = Rng(2).random((100,), 0.5, 1.5)
        assert values.min() >= 0.5
        assert values.max() < 1.5

    def test_seed_out_of_range(self) -> None:
        """Test seeds must fit in 64 bits."""
        with pytest.raises(ValueError):
            Rng(2**64)
        with pytest.raises(ValueError):
            Rng(-1)
