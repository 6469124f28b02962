"""Deterministic, derivable random streams.

Every random draw in the package comes from an `RngStream`. A stream is
identified by a key tuple (run seed plus any mix of integer indices and
string purpose tags), and deriving a child stream with the same key parts
always yields the same draws, no matter in which order streams are created
or consumed. This is what makes training runs, grid cells, and parallel
workers reproducible.
"""

from __future__ import annotations

import zlib

import numpy as np


def _encode_part(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFFFFFFFFFF
    raise TypeError(f"rng key parts must be int or str, got {type(part).__name__}")


class RngStream:
    """An independent random substream addressed by a key tuple."""

    def __init__(self, *key_parts):
        self.key = tuple(_encode_part(p) for p in key_parts)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.key)))

    def derive(self, *key_parts) -> "RngStream":
        """Child stream for (self.key + key_parts); same parts, same draws."""
        child = object.__new__(RngStream)
        child.key = self.key + tuple(_encode_part(p) for p in key_parts)
        child._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(child.key)))
        return child

    def derive_seed(self, *key_parts) -> int:
        """A 64-bit seed derived from this stream's key; for APIs that take seeds."""
        return int(self.derive(*key_parts)._gen.integers(0, 2**63))

    # Draw methods: the narrow surface the rest of the package uses, so test
    # doubles can script them.

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        return float(self._gen.uniform(low, high))

    def integers(self, low: int, high: int) -> int:
        """One integer in [low, high)."""
        return int(self._gen.integers(low, high))

    def integer_array(self, low: int, high: int, size: int) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def beta(self, a: float, b: float) -> float:
        return float(self._gen.beta(a, b))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        return self._gen.choice(n, size=k, replace=False)

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)
