"""Helper utilities for the crt_restore package."""

from __future__ import annotations

import hashlib
import math


def slugify(text: str) -> str:
    """Make text safe for use as a pair-id or file name component.

    Converts text to lowercase alphanumeric with underscores.
    """
    return "".join(ch if ch.isalnum() else "_" for ch in str(text)).strip("_").lower()


def round_half_up(value: float) -> int:
    """Round to the nearest integer with halves going up: 8.5 -> 9."""
    return int(math.floor(value + 0.5))


def stable_hash64(*parts: object) -> int:
    """Return a platform-independent 64-bit hash of the given parts.

    Args:
        parts: Values joined with a separator and hashed with BLAKE2b

    Returns:
        Unsigned 64-bit integer
    """
    payload = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def make_pair_id(trajectory: str, frame: str, label: str) -> str:
    """Build the pair-id for one (trajectory, frame, corruption label).

    Example: traj_01/000012/gaussian-noise -> traj_01-000012-gaussian-noise
    """
    return f"{slugify(trajectory)}-{slugify(frame)}-{label}"
