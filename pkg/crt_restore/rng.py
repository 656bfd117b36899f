"""Counter-based random streams keyed by (seed, labels)."""

from __future__ import annotations

import hashlib

import numpy as np
import numpy.typing as npt


def _derive_key(seed: int, labels: tuple[object, ...]) -> int:
    payload = "\x1f".join([str(int(seed)), *(str(label) for label in labels)])
    digest = hashlib.blake2b(payload.encode("utf-8"), digest_size=16).digest()
    return int.from_bytes(digest, "little")


class Rng:
    """Philox stream whose key is a hash of the seed and a label path.

    The same (seed, labels) always yields the same stream, independent of
    the platform default generator and of the order in which streams are
    created. split() derives an independent child stream.
    """

    def __init__(self, seed: int, *labels: object) -> None:
        """Initialize the stream for seed and label path."""
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must fit in 64 bits, got {seed}")
        self.seed = int(seed)
        self.labels = labels
        self._gen = np.random.Generator(np.random.Philox(key=_derive_key(self.seed, labels)))

    def __repr__(self) -> str:
        """Return the key path."""
        return f"Rng(seed={self.seed}, labels={self.labels!r})"

    def split(self, *labels: object) -> Rng:
        """Return a child stream keyed by the extended label path."""
        return Rng(self.seed, *self.labels, *labels)

    def normal(self, sigma: float, shape: tuple[int, ...]) -> npt.NDArray[np.float64]:
        """Draw zero-mean Gaussian samples."""
        return self._gen.normal(0.0, sigma, size=shape)

    def uniform(self, low: float, high: float) -> float:
        """Draw one uniform float in [low, high)."""
        return float(self._gen.uniform(low, high))

    def random(
        self, shape: tuple[int, ...], low: float = 0.0, high: float = 1.0
    ) -> npt.NDArray[np.float64]:
        """Draw an array of uniform floats in [low, high)."""
        return self._gen.uniform(low, high, size=shape)

    def integer(self, low: int, high: int) -> int:
        """Draw one integer in [low, high], both ends inclusive."""
        return int(self._gen.integers(low, high, endpoint=True))

    def sorted_sample(self, population: int, count: int) -> list[int]:
        """Return count distinct values from range(population), ascending."""
        if count == 0:
            return []
        picks = self._gen.choice(population, size=count, replace=False)
        return sorted(int(p) for p in picks)

    def permutation(self, n: int) -> list[int]:
        """Return a random permutation of range(n)."""
        return [int(i) for i in self._gen.permutation(n)]

    def truncated_normal(
        self, std: float, shape: tuple[int, ...], bound: float = 2.0
    ) -> npt.NDArray[np.float64]:
        """Draw normal samples, redrawing those beyond bound * std."""
        values = self._gen.normal(0.0, std, size=shape)
        outside = np.abs(values) > bound * std
        while np.any(outside):
            values[outside] = self._gen.normal(0.0, std, size=int(outside.sum()))
            outside = np.abs(values) > bound * std
        return values
