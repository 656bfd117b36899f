"""Paired (corrupted, clean) dataset construction, manifest and batching."""

from __future__ import annotations

from collections.abc import Callable, Iterable, Iterator, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
import logging
from pathlib import Path
import queue
import threading
from typing import Any

from atomicwrites import atomic_write
import numpy as np
import numpy.typing as npt
import orjson

from .const import (
    CLEAN_DIR,
    CORRUPTED_DIR,
    DEFAULT_PREFETCH,
    DEFAULT_SPLIT_RATIO,
    IMAGE_SUFFIXES,
    MANIFEST_FILE,
    MANIFEST_VERSION,
    SPLIT_TRAIN,
    SPLIT_VAL,
)
from .corruption import CorruptionParams, CorruptionSpec, canonical_label, corrupt, sample_spec
from .exceptions import ConfigError, DataError
from .helpers import make_pair_id, round_half_up, slugify, stable_hash64
from .imaging import Image, load_image, save_image, stack_images
from .rng import Rng

_LOGGER = logging.getLogger(__name__)

SPLITS = (SPLIT_TRAIN, SPLIT_VAL)


@dataclass(frozen=True)
class PairRecord:
    """One aligned (corrupted, clean) pair and its provenance.

    The split is fixed when the pair first enters a manifest and never moves
    as that manifest grows. It depends on the dataset seed, the pair-id and
    the ids present at that build, so a fresh build over a superset of frames
    may place an existing id differently; grow in place to keep splits.
    """

    pair_id: str
    trajectory: str
    frame_index: int
    frame_name: str
    clean_path: str
    corrupted_path: str
    spec: CorruptionSpec
    split: str

    @property
    def label(self) -> str:
        """Return the corruption label used for grouping and reports."""
        return self.spec.label

    @property
    def dims(self) -> tuple[int, int]:
        """Return (height, width)."""
        return self.spec.height, self.spec.width

    def to_record(self) -> dict[str, Any]:
        """Return the manifest line for this pair."""
        return {
            "record": "pair",
            "pair_id": self.pair_id,
            "trajectory": self.trajectory,
            "frame_index": self.frame_index,
            "frame_name": self.frame_name,
            "clean_path": self.clean_path,
            "corrupted_path": self.corrupted_path,
            "label": self.label,
            "spec": self.spec.to_record(),
            "split": self.split,
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> PairRecord:
        """Rebuild a pair from its manifest line."""
        try:
            split = record["split"]
            if split not in SPLITS:
                raise DataError(f"pair {record.get('pair_id')!r}: unknown split {split!r}")
            return cls(
                pair_id=record["pair_id"],
                trajectory=record["trajectory"],
                frame_index=int(record["frame_index"]),
                frame_name=record["frame_name"],
                clean_path=record["clean_path"],
                corrupted_path=record["corrupted_path"],
                spec=CorruptionSpec.from_record(record["spec"]),
                split=split,
            )
        except (KeyError, TypeError, ValueError) as err:
            raise DataError(f"malformed manifest pair record: {err}") from err


@dataclass
class Manifest:
    """All pairs of a dataset with their split assignment."""

    root: Path
    name: str
    seed: int
    kinds: tuple[str, ...]
    split_ratio: float = DEFAULT_SPLIT_RATIO
    pairs: dict[str, PairRecord] = field(default_factory=dict)

    @property
    def path(self) -> Path:
        """Return the manifest file path."""
        return self.root / MANIFEST_FILE

    @property
    def counts(self) -> dict[str, int]:
        """Return the number of pairs per split."""
        counts = dict.fromkeys(SPLITS, 0)
        for record in self.pairs.values():
            counts[record.split] += 1
        return counts

    def __len__(self) -> int:
        """Return the number of pairs."""
        return len(self.pairs)

    def get(self, pair_id: str) -> PairRecord:
        """Return one pair.

        Raises:
            DataError: Unknown pair-id
        """
        try:
            return self.pairs[pair_id]
        except KeyError:
            raise DataError(f"pair {pair_id!r} not in manifest {self.path}") from None

    def split_pairs(self, split: str) -> list[PairRecord]:
        """Return the pairs of one split sorted by pair-id."""
        if split not in SPLITS:
            raise ConfigError(f"unknown split {split!r}; expected one of {SPLITS}")
        return [r for _, r in sorted(self.pairs.items()) if r.split == split]

    def image_dims(self) -> set[tuple[int, int]]:
        """Return every distinct (height, width) in the dataset."""
        return {record.dims for record in self.pairs.values()}

    def header(self) -> dict[str, Any]:
        """Return the header record."""
        return {
            "record": "header",
            "version": MANIFEST_VERSION,
            "name": self.name,
            "seed": self.seed,
            "kinds": list(self.kinds),
            "split_ratio": self.split_ratio,
            "counts": self.counts,
        }

    def dumps(self) -> bytes:
        """Serialize to line-delimited JSON with sorted keys."""
        lines = [self.header()] + [r.to_record() for _, r in sorted(self.pairs.items())]
        return b"".join(orjson.dumps(line, option=orjson.OPT_SORT_KEYS) + b"\n" for line in lines)

    def write(self) -> Path:
        """Publish the manifest atomically."""
        self.root.mkdir(parents=True, exist_ok=True)
        with atomic_write(self.path, mode="wb", overwrite=True) as fdesc:
            fdesc.write(self.dumps())
        return self.path

    @classmethod
    def load(cls, root: str | Path) -> Manifest:
        """Read the manifest of a dataset directory.

        Raises:
            DataError: Missing or malformed manifest
        """
        root = Path(root)
        path = root / MANIFEST_FILE
        try:
            raw = path.read_bytes()
        except OSError as err:
            raise DataError(f"{path}: cannot read manifest ({err})") from err
        lines = [line for line in raw.splitlines() if line.strip()]
        if not lines:
            raise DataError(f"{path}: empty manifest")
        try:
            header = orjson.loads(lines[0])
            records = [orjson.loads(line) for line in lines[1:]]
        except orjson.JSONDecodeError as err:
            raise DataError(f"{path}: malformed manifest ({err})") from err
        if header.get("record") != "header" or header.get("version") != MANIFEST_VERSION:
            raise DataError(f"{path}: missing or unsupported manifest header")
        manifest = cls(
            root=root,
            name=header["name"],
            seed=int(header["seed"]),
            kinds=tuple(header["kinds"]),
            split_ratio=float(header["split_ratio"]),
        )
        for record in records:
            pair = PairRecord.from_record(record)
            if pair.pair_id in manifest.pairs:
                raise DataError(f"{path}: duplicate pair {pair.pair_id!r}")
            manifest.pairs[pair.pair_id] = pair
        _LOGGER.debug("Loaded manifest %s with %d pairs", path, len(manifest))
        return manifest


@dataclass(frozen=True)
class Batch:
    """A stacked micro-batch of aligned pairs."""

    corrupted: npt.NDArray[np.float32]
    clean: npt.NDArray[np.float32]
    pair_ids: tuple[str, ...]
    labels: tuple[str, ...]

    @property
    def size(self) -> int:
        """Return the number of pairs."""
        return len(self.pair_ids)


@dataclass(frozen=True)
class _FrameJob:
    trajectory: str
    frame_index: int
    path: Path


def _discover_frames(frames_root: Path) -> list[_FrameJob]:
    if not frames_root.is_dir():
        raise DataError(f"{frames_root}: frames root is not a directory")
    jobs: list[_FrameJob] = []
    for traj_dir in sorted(p for p in frames_root.iterdir() if p.is_dir()):
        if traj_dir.name.startswith("."):
            continue
        frames = sorted(
            p for p in traj_dir.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
        )
        jobs.extend(_FrameJob(traj_dir.name, i, p) for i, p in enumerate(frames))
    if not jobs:
        raise DataError(f"{frames_root}: no trajectory frames found")
    return jobs


def _resolve_labels(kinds: Sequence[str], params: CorruptionParams) -> list[str]:
    if not kinds:
        raise ConfigError("at least one corruption kind is required")
    labels: list[str] = []
    for kind in kinds:
        label = canonical_label(kind, params)
        if label not in labels:
            labels.append(label)
    return labels


def _clean_rel(job: _FrameJob) -> str:
    return f"{CLEAN_DIR}/{slugify(job.trajectory)}/{slugify(job.path.stem)}.png"


def _frame_dims(job: _FrameJob) -> tuple[int, int]:
    clean = load_image(job.path)
    return int(clean.shape[0]), int(clean.shape[1])


def _check_frames(
    jobs: Sequence[_FrameJob], dims: Sequence[tuple[int, int]], labels: Sequence[str]
) -> None:
    """Reject mixed sizes within a trajectory and frames whose slugs collide."""
    traj_dims: dict[str, tuple[int, int]] = {}
    clean_paths: dict[str, Path] = {}
    pair_ids: set[str] = set()
    for job, frame_dims in zip(jobs, dims, strict=True):
        first = traj_dims.setdefault(job.trajectory, frame_dims)
        if frame_dims != first:
            raise DataError(
                f"{job.path}: dimensions {frame_dims[0]}x{frame_dims[1]} differ from"
                f" {first[0]}x{first[1]} in trajectory {job.trajectory!r}"
            )
        clean_rel = _clean_rel(job)
        other = clean_paths.setdefault(clean_rel, job.path)
        if other != job.path:
            raise DataError(f"{job.path}: collides with {other} at {clean_rel}")
        for label in labels:
            pair_id = make_pair_id(job.trajectory, job.path.stem, label)
            if pair_id in pair_ids:
                raise DataError(f"{job.path}: duplicate pair-id {pair_id!r}")
            pair_ids.add(pair_id)


def _build_frame(
    job: _FrameJob,
    labels: Sequence[str],
    seed: int,
    out_dir: Path,
    params: CorruptionParams,
) -> list[PairRecord]:
    clean = load_image(job.path)
    dims = (int(clean.shape[0]), int(clean.shape[1]))
    traj, stem = slugify(job.trajectory), slugify(job.path.stem)
    clean_rel = _clean_rel(job)
    save_image(clean, out_dir / clean_rel)
    pairs = []
    for label in labels:
        pair_id = make_pair_id(job.trajectory, job.path.stem, label)
        spec = sample_spec(label, stable_hash64(seed, pair_id), dims, params)
        corrupted = corrupt(clean, spec)
        corrupted_rel = f"{CORRUPTED_DIR}/{label}/{traj}/{stem}.png"
        save_image(corrupted, out_dir / corrupted_rel)
        record = PairRecord(
            pair_id=pair_id,
            trajectory=job.trajectory,
            frame_index=job.frame_index,
            frame_name=job.path.name,
            clean_path=clean_rel,
            corrupted_path=corrupted_rel,
            spec=spec,
            split=SPLIT_TRAIN,
        )
        pairs.append(record)
    return pairs


def assign_splits(
    pair_ids: Iterable[str],
    seed: int,
    split_ratio: float,
    existing: dict[str, str] | None = None,
) -> dict[str, str]:
    """Assign every pair-id to train or val.

    Existing assignments are kept. New pair-ids are ranked by a seeded hash
    and the first ones go to train until the overall train count reaches
    round(split_ratio * n), so counts stay within one record of the ratio.
    A new id's split therefore depends on which other ids are new alongside it.
    """
    if not 0.0 < split_ratio < 1.0:
        raise ConfigError(f"split ratio must lie in (0, 1), got {split_ratio}")
    existing = existing or {}
    ids = sorted(set(pair_ids))
    kept = {pid: existing[pid] for pid in ids if pid in existing}
    new = sorted(
        (pid for pid in ids if pid not in existing),
        key=lambda pid: (stable_hash64(seed, "split", pid), pid),
    )
    target = round_half_up(split_ratio * len(ids))
    have = sum(1 for split in kept.values() if split == SPLIT_TRAIN)
    take = min(max(target - have, 0), len(new))
    assigned = dict(kept)
    for rank, pid in enumerate(new):
        assigned[pid] = SPLIT_TRAIN if rank < take else SPLIT_VAL
    return assigned


def build_dataset(
    frames_root: str | Path,
    out_dir: str | Path,
    kinds: Sequence[str],
    seed: int,
    split_ratio: float = DEFAULT_SPLIT_RATIO,
    *,
    params: CorruptionParams | None = None,
    name: str | None = None,
    workers: int | None = None,
) -> Manifest:
    """Corrupt every clean frame with every kind and publish the manifest.

    frames_root holds one subdirectory of PNG frames per trajectory. When
    out_dir already holds a manifest, existing pair-ids keep their split. Every
    frame is decoded and checked before the first file is written.

    Raises:
        DataError: Empty tree, unreadable frame, mixed dimensions within a
            trajectory or two frames whose slugs collide
        ConfigError: Unknown kind, bad ratio or a seed differing from the
            existing manifest
    """
    frames_root, out_dir = Path(frames_root), Path(out_dir)
    params = params or CorruptionParams()
    labels = _resolve_labels(kinds, params)
    jobs = _discover_frames(frames_root)

    previous: Manifest | None = None
    if (out_dir / MANIFEST_FILE).exists():
        previous = Manifest.load(out_dir)
        if previous.seed != seed:
            raise ConfigError(
                f"{previous.path}: existing dataset uses seed {previous.seed}, got {seed}"
            )
        _LOGGER.info("Growing dataset %s (%d existing pairs)", out_dir, len(previous))

    _LOGGER.info(
        "Building dataset from %s: %d frames x %d kinds", frames_root, len(jobs), len(labels)
    )
    with ThreadPoolExecutor(max_workers=workers) as pool:
        _check_frames(jobs, list(pool.map(_frame_dims, jobs)), labels)
        results = list(
            pool.map(lambda job: _build_frame(job, labels, seed, out_dir, params), jobs)
        )
    records = {record.pair_id: record for pairs in results for record in pairs}

    existing_splits: dict[str, str] = {}
    all_records = dict(records)
    all_labels = list(labels)
    if previous is not None:
        existing_splits = {pid: r.split for pid, r in previous.pairs.items()}
        for pid, record in previous.pairs.items():
            all_records.setdefault(pid, record)
        all_labels = list(previous.kinds) + [lb for lb in labels if lb not in previous.kinds]
        split_ratio = previous.split_ratio

    splits = assign_splits(all_records, seed, split_ratio, existing_splits)
    manifest = Manifest(
        root=out_dir,
        name=name or (previous.name if previous else frames_root.name),
        seed=seed,
        kinds=tuple(all_labels),
        split_ratio=split_ratio,
        pairs={
            pid: replace(record, split=splits[pid])
            for pid, record in sorted(all_records.items())
        },
    )
    manifest.write()
    counts = manifest.counts
    _LOGGER.info(
        "Wrote %s: %d pairs (%d train / %d val)",
        manifest.path,
        len(manifest),
        counts[SPLIT_TRAIN],
        counts[SPLIT_VAL],
    )
    return manifest


def load_pair(manifest: Manifest, pair_id: str) -> tuple[Image, Image]:
    """Return the (corrupted, clean) images of one pair.

    Raises:
        DataError: Unknown pair-id, missing file or mismatched dimensions
    """
    record = manifest.get(pair_id)
    images = []
    for rel in (record.corrupted_path, record.clean_path):
        path = manifest.root / rel
        if not path.is_file():
            raise DataError(f"pair {pair_id!r}: missing file {path}")
        images.append(load_image(path))
    corrupted, clean = images
    if corrupted.shape != clean.shape:
        raise DataError(
            f"pair {pair_id!r}: corrupted {corrupted.shape} and clean {clean.shape} differ"
        )
    return corrupted, clean


def _load_batch(manifest: Manifest, records: Sequence[PairRecord]) -> Batch:
    pairs = [load_pair(manifest, r.pair_id) for r in records]
    return Batch(
        corrupted=stack_images([p[0] for p in pairs]),
        clean=stack_images([p[1] for p in pairs]),
        pair_ids=tuple(r.pair_id for r in records),
        labels=tuple(r.label for r in records),
    )


def _prefetched(loaders: Sequence[Callable[[], Batch]], depth: int) -> Iterator[Batch]:
    """Run loaders on a background thread, at most depth batches ahead.

    Batches are yielded in loader order, so results do not depend on
    thread timing.
    """
    if depth <= 0:
        for load in loaders:
            yield load()
        return

    slots: queue.Queue[tuple[str, Any]] = queue.Queue(maxsize=depth)
    stop = threading.Event()

    def _put(item: tuple[str, Any]) -> None:
        while not stop.is_set():
            try:
                slots.put(item, timeout=0.1)
            except queue.Full:
                continue
            return

    def _worker() -> None:
        try:
            for load in loaders:
                if stop.is_set():
                    return
                _put(("batch", load()))
        except Exception as err:  # pylint: disable=broad-except  # noqa: BLE001
            _put(("error", err))
            return
        _put(("done", None))

    thread = threading.Thread(target=_worker, name="crt-batch-prefetch", daemon=True)
    thread.start()
    try:
        while True:
            kind, payload = slots.get()
            if kind == "done":
                return
            if kind == "error":
                raise payload
            yield payload
    finally:
        stop.set()
        thread.join(timeout=5.0)


def batch_order(manifest: Manifest, split: str, epoch_seed: int) -> list[PairRecord]:
    """Return the seeded shuffle of a split for one epoch."""
    records = manifest.split_pairs(split)
    perm = Rng(epoch_seed, "shuffle", split).permutation(len(records))
    return [records[i] for i in perm]


def batch_iterator(
    manifest: Manifest,
    split: str,
    batch_size: int,
    epoch_seed: int,
    *,
    prefetch: int = DEFAULT_PREFETCH,
) -> Iterator[Batch]:
    """Iterate a split in seeded order; the final partial batch is kept.

    Raises:
        ConfigError: batch_size < 1
        DataError: The split is empty
    """
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    order = batch_order(manifest, split, epoch_seed)
    if not order:
        raise DataError(f"split {split!r} of {manifest.path} is empty")
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    loaders = [lambda chunk=chunk: _load_batch(manifest, chunk) for chunk in chunks]
    return _prefetched(loaders, prefetch)
