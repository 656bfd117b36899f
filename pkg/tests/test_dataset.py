"""Tests for dataset construction, the manifest and batching."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
import pytest

from crt_restore.const import (
    KIND_GAUSSIAN_NOISE,
    KIND_IDENTITY,
    MANIFEST_FILE,
    SPLIT_TRAIN,
    SPLIT_VAL,
)
from crt_restore.corruption import corrupt
from crt_restore.dataset import (
    Manifest,
    assign_splits,
    batch_iterator,
    batch_order,
    build_dataset,
    load_pair,
)
from crt_restore.exceptions import ConfigError, DataError
from crt_restore.helpers import stable_hash64
from crt_restore.imaging import load_image, quantize, save_image, ssim

from .conftest import frame_image, write_frames


class TestBuildDataset:
    """Tests for build_dataset."""

    def test_pair_counts(self, dataset: Manifest) -> None:
        """Test every frame is paired with every kind and split 80/20."""
        assert len(dataset) == 12
        assert dataset.counts == {SPLIT_TRAIN: 10, SPLIT_VAL: 2}
        assert dataset.kinds == (KIND_IDENTITY, KIND_GAUSSIAN_NOISE)
        assert dataset.image_dims() == {(32, 32)}

    def test_layout(self, dataset: Manifest) -> None:
        """Test clean and corrupted files are laid out by label and trajectory."""
        record = dataset.get("traj_00-000001-gaussian-noise")
        assert record.clean_path == "clean/traj_00/000001.png"
        assert record.corrupted_path == "corrupted/gaussian-noise/traj_00/000001.png"
        assert record.frame_index == 1
        assert (dataset.root / record.corrupted_path).is_file()
        assert (dataset.root / MANIFEST_FILE).is_file()

    def test_identity_pairs_bit_exact(self, dataset: Manifest) -> None:
        """Test identity-corrupted files equal their clean files."""
        for record in dataset.pairs.values():
            if record.label != KIND_IDENTITY:
                continue
            corrupted, clean = load_pair(dataset, record.pair_id)
            np.testing.assert_array_equal(corrupted, clean)
            assert ssim(corrupted, clean) == pytest.approx(1.0, abs=1e-9)

    def test_noise_pair_regenerates(self, dataset: Manifest) -> None:
        """Test a stored noise spec regenerates the stored corrupted file exactly."""
        record = dataset.get("traj_01-000002-gaussian-noise")
        clean = load_image(dataset.root / record.clean_path)
        with PILImage.open(dataset.root / record.corrupted_path) as img:
            stored = np.asarray(img.convert("RGB"))
        np.testing.assert_array_equal(quantize(corrupt(clean, record.spec)), stored)

    def test_rebuild_is_byte_identical(self, tmp_path: Path, frames_root: Path) -> None:
        """Test two builds with the same seed write the same manifest."""
        kinds = [KIND_IDENTITY, KIND_GAUSSIAN_NOISE]
        a = build_dataset(frames_root, tmp_path / "a", kinds, seed=3)
        b = build_dataset(frames_root, tmp_path / "b", kinds, seed=3)
        assert a.path.read_bytes() == b.path.read_bytes()
        again = build_dataset(frames_root, tmp_path / "a", kinds, seed=3)
        assert again.path.read_bytes() == b.path.read_bytes()

    def test_different_seed_changes_noise(self, tmp_path: Path, frames_root: Path) -> None:
        """Test the seed feeds the corruption specs."""
        a = build_dataset(frames_root, tmp_path / "a", [KIND_GAUSSIAN_NOISE], seed=1)
        b = build_dataset(frames_root, tmp_path / "b", [KIND_GAUSSIAN_NOISE], seed=2)
        pid = "traj_00-000000-gaussian-noise"
        assert a.get(pid).spec.seed != b.get(pid).spec.seed

    def test_load_round_trip(self, dataset: Manifest) -> None:
        """Test the written manifest loads back to the same records."""
        loaded = Manifest.load(dataset.root)
        assert loaded.pairs == dataset.pairs
        assert loaded.header() == dataset.header()

    def test_growing_keeps_splits(self, tmp_path: Path, frames_root: Path) -> None:
        """Test adding a kind keeps existing assignments."""
        first = build_dataset(frames_root, tmp_path / "ds", [KIND_IDENTITY], seed=4)
        grown = build_dataset(
            frames_root, tmp_path / "ds", [KIND_IDENTITY, KIND_GAUSSIAN_NOISE], seed=4
        )
        assert len(grown) == 12
        for pid, record in first.pairs.items():
            assert grown.get(pid).split == record.split
        assert grown.kinds == (KIND_IDENTITY, KIND_GAUSSIAN_NOISE)

    def test_growing_with_other_seed(self, tmp_path: Path, frames_root: Path) -> None:
        """Test a seed differing from the existing manifest is rejected."""
        build_dataset(frames_root, tmp_path / "ds", [KIND_IDENTITY], seed=4)
        with pytest.raises(ConfigError, match="seed"):
            build_dataset(frames_root, tmp_path / "ds", [KIND_IDENTITY], seed=5)

    def test_mixed_dimensions_rejected(self, tmp_path: Path) -> None:
        """Test frames of one trajectory must share a size."""
        root = write_frames(tmp_path / "frames", trajectories=1, frames=2)
        save_image(frame_image(40, 0, 9), root / "traj_00" / "000009.png")
        with pytest.raises(DataError, match="differ"):
            build_dataset(root, tmp_path / "ds", [KIND_IDENTITY], seed=0)
        assert not (tmp_path / "ds").exists()

    def test_slug_collision_rejected(self, tmp_path: Path) -> None:
        """Test two trajectories that slugify alike fail before any file is written."""
        root = tmp_path / "frames"
        save_image(frame_image(32, 0, 0), root / "pick up" / "000000.png")
        save_image(frame_image(32, 1, 0), root / "pick-up" / "000000.png")
        with pytest.raises(DataError, match="collides"):
            build_dataset(root, tmp_path / "ds", [KIND_IDENTITY], seed=0)
        assert not (tmp_path / "ds").exists()

    def test_unreadable_frame_writes_nothing(self, tmp_path: Path) -> None:
        """Test a broken frame late in the tree leaves the output untouched."""
        root = write_frames(tmp_path / "frames", trajectories=2, frames=2)
        (root / "traj_01" / "000001.png").write_bytes(b"not a png")
        with pytest.raises(DataError):
            build_dataset(root, tmp_path / "ds", [KIND_IDENTITY], seed=0)
        assert not (tmp_path / "ds").exists()

    def test_empty_tree(self, tmp_path: Path) -> None:
        """Test a frames root without frames is rejected."""
        (tmp_path / "frames" / "traj").mkdir(parents=True)
        with pytest.raises(DataError):
            build_dataset(tmp_path / "frames", tmp_path / "ds", [KIND_IDENTITY], seed=0)

    def test_unknown_kind(self, tmp_path: Path, frames_root: Path) -> None:
        """Test an unknown kind is rejected before any file is written."""
        with pytest.raises(ConfigError):
            build_dataset(frames_root, tmp_path / "ds", ["snow"], seed=0)
        assert not (tmp_path / "ds").exists()


class TestAssignSplits:
    """Tests for assign_splits."""

    def test_thousand_pairs(self) -> None:
        """Test 1000 pairs split 800 / 200."""
        ids = [f"traj_{t:02d}-{f:06d}-identity" for t in range(10) for f in range(100)]
        splits = assign_splits(ids, seed=0, split_ratio=0.8)
        assert sum(1 for s in splits.values() if s == SPLIT_TRAIN) == 800
        assert sum(1 for s in splits.values() if s == SPLIT_VAL) == 200

    def test_order_independent(self) -> None:
        """Test the assignment does not depend on the input order."""
        ids = [f"p{i}" for i in range(30)]
        assert assign_splits(ids, 1, 0.7) == assign_splits(list(reversed(ids)), 1, 0.7)

    def test_existing_kept(self) -> None:
        """Test prior assignments survive and new ids fill the remainder."""
        existing = {f"p{i}": SPLIT_VAL for i in range(5)}
        splits = assign_splits([f"p{i}" for i in range(10)], 0, 0.5, existing)
        assert all(splits[f"p{i}"] == SPLIT_VAL for i in range(5))
        assert all(splits[f"p{i}"] == SPLIT_TRAIN for i in range(5, 10))

    def test_growth_stable_but_fresh_superset_may_move(self) -> None:
        """Test growing keeps splits while a fresh build of more ids can reassign them."""
        moved = False
        for seed in range(20):
            first = assign_splits(["a"], seed, 0.5)
            assert first == {"a": SPLIT_TRAIN}
            grown = assign_splits(["a", "b"], seed, 0.5, first)
            assert grown == {"a": SPLIT_TRAIN, "b": SPLIT_VAL}
            fresh = assign_splits(["a", "b"], seed, 0.5)
            assert sorted(fresh.values()) == [SPLIT_TRAIN, SPLIT_VAL]
            moved |= fresh["a"] != first["a"]
        assert moved

    def test_fresh_train_set_is_lowest_hashes(self) -> None:
        """Test a fresh build sends the lowest-hashed ids to train."""
        ids = [f"p{i}" for i in range(40)]
        splits = assign_splits(ids, 3, 0.75)
        ranked = sorted(ids, key=lambda pid: (stable_hash64(3, "split", pid), pid))
        assert {pid for pid, s in splits.items() if s == SPLIT_TRAIN} == set(ranked[:30])

    def test_bad_ratio(self) -> None:
        """Test the ratio must lie strictly between 0 and 1."""
        with pytest.raises(ConfigError):
            assign_splits(["a"], 0, 1.0)


class TestLoadPair:
    """Tests for load_pair."""

    def test_unknown_pair(self, dataset: Manifest) -> None:
        """Test an unknown pair-id is rejected."""
        with pytest.raises(DataError, match="nope"):
            load_pair(dataset, "nope")

    def test_missing_file(self, dataset: Manifest) -> None:
        """Test a deleted file is reported with its pair-id."""
        record = dataset.get("traj_00-000000-identity")
        (dataset.root / record.corrupted_path).unlink()
        with pytest.raises(DataError, match="traj_00-000000-identity"):
            load_pair(dataset, record.pair_id)


class TestBatchIterator:
    """Tests for batch_iterator."""

    def test_partial_final_batch(self, dataset: Manifest) -> None:
        """Test 10 training pairs in batches of 4 give sizes 4, 4, 2."""
        sizes = [b.size for b in batch_iterator(dataset, SPLIT_TRAIN, 4, epoch_seed=0)]
        assert sizes == [4, 4, 2]

    def test_batch_shapes(self, dataset: Manifest) -> None:
        """Test batches stack aligned corrupted and clean images."""
        batch = next(iter(batch_iterator(dataset, SPLIT_TRAIN, 3, epoch_seed=0, prefetch=0)))
        assert batch.corrupted.shape == batch.clean.shape == (3, 32, 32, 3)
        assert batch.corrupted.dtype == np.float32
        assert len(batch.labels) == 3

    def test_same_seed_same_order(self, dataset: Manifest) -> None:
        """Test the shuffle is reproducible and seed dependent."""
        first = [r.pair_id for r in batch_order(dataset, SPLIT_TRAIN, 7)]
        assert first == [r.pair_id for r in batch_order(dataset, SPLIT_TRAIN, 7)]
        orders = {tuple(r.pair_id for r in batch_order(dataset, SPLIT_TRAIN, s)) for s in range(5)}
        assert len(orders) > 1

    def test_prefetch_matches_inline(self, dataset: Manifest) -> None:
        """Test prefetching yields the same batches in the same order."""
        inline = list(batch_iterator(dataset, SPLIT_TRAIN, 4, 2, prefetch=0))
        ahead = list(batch_iterator(dataset, SPLIT_TRAIN, 4, 2, prefetch=2))
        assert [b.pair_ids for b in inline] == [b.pair_ids for b in ahead]
        for a, b in zip(inline, ahead, strict=True):
            np.testing.assert_array_equal(a.corrupted, b.corrupted)

    def test_prefetch_propagates_errors(self, dataset: Manifest) -> None:
        """Test a loader failure surfaces in the consumer."""
        for record in dataset.split_pairs(SPLIT_TRAIN):
            (dataset.root / record.clean_path).unlink(missing_ok=True)
        with pytest.raises(DataError):
            list(batch_iterator(dataset, SPLIT_TRAIN, 4, 0, prefetch=2))

    def test_empty_split(self, dataset: Manifest) -> None:
        """Test iterating an empty split is a data error."""
        only_train = replace(
            dataset, pairs={k: replace(r, split=SPLIT_TRAIN) for k, r in dataset.pairs.items()}
        )
        with pytest.raises(DataError, match="empty"):
            batch_iterator(only_train, SPLIT_VAL, 4, 0)

    def test_bad_batch_size(self, dataset: Manifest) -> None:
        """Test the batch size must be positive."""
        with pytest.raises(ConfigError):
            batch_iterator(dataset, SPLIT_TRAIN, 0, 0)
