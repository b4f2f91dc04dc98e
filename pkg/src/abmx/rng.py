"""Counter-based splittable random streams.

Every draw is a pure function of ``(key, counter)``, so any slot of any
replica can be replayed without touching the others.  The mixing function is
the SplitMix64 finalizer; stream ``key`` yields, at counter ``i``::

    fmix(key + (i + 1) * GOLDEN)

Split schedule used across the package: an operation derives its stream as
``rng.fold(<operation tag>).split(<step index>)`` and slot ``i`` consumes
counter ``i`` of that stream (or of a further ``fold`` for a second draw).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_SPLIT_SALT = 0xD1B54A32D192ED03

_U_GOLDEN = np.uint64(GOLDEN)
_U_M1 = np.uint64(_M1)
_U_M2 = np.uint64(_M2)


def _fmix_int(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _fmix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _U_M1
    z = (z ^ (z >> np.uint64(27))) * _U_M2
    return z ^ (z >> np.uint64(31))


def _tag_value(tag: str) -> int:
    return int.from_bytes(hashlib.blake2b(tag.encode(), digest_size=8).digest(), "little")


@dataclass(frozen=True)
class RngState:
    """Immutable 64-bit stream key."""

    key: int

    def __post_init__(self) -> None:
        if not 0 <= int(self.key) <= MASK64:
            raise ValueError(f"rng key must fit in 64 unsigned bits, got {self.key}")
        object.__setattr__(self, "key", int(self.key))

    @classmethod
    def from_seed(cls, seed: int) -> RngState:
        return cls(_fmix_int(int(seed) & MASK64))

    def split(self, index: int) -> RngState:
        """Child stream ``index``; a deterministic function of (key, index)."""
        if index < 0:
            raise ValueError("split index must be non-negative")
        base = _fmix_int(self.key ^ _SPLIT_SALT)
        return RngState(_fmix_int(base + (index + 1) * GOLDEN))

    def fold(self, tag: str) -> RngState:
        """Child stream named by a string tag."""
        return self.split(_tag_value(tag) >> 1)

    def bits(self, n: int, start: int = 0) -> np.ndarray:
        counters = np.arange(start + 1, start + n + 1, dtype=np.uint64)
        return _fmix_array(np.uint64(self.key) + counters * _U_GOLDEN)

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Reals in ``[low, high)``; 53-bit resolution."""
        u = (self.bits(n) >> np.uint64(11)).astype(np.float64) * (2.0**-53)
        if low == 0.0 and high == 1.0:
            return u
        return low + u * (high - low)

    def integers(self, low: int, high: int, n: int) -> np.ndarray:
        """Integers in ``[low, high)``."""
        if high <= low:
            raise ValueError(f"empty integer range [{low}, {high})")
        span = high - low
        draws = np.floor(self.uniform(n) * span).astype(np.int64)
        return low + np.minimum(draws, span - 1)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")
