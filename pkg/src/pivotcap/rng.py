"""Seedable, splittable random streams built on xoshiro256**.

A :class:`Rng` runs ``LANES`` independent xoshiro256** generators in lock-step.
Each request for ``n`` values consumes ``ceil(n / LANES)`` full rounds and reads
the outputs round-major, lane-minor; leftovers of the final round are dropped.

Seeding: a 64-bit key is expanded with splitmix64 into the ``4 * LANES`` state
words (lane ``j`` takes words ``4j .. 4j+3``).  Stream splitting is by label:
``rng.derive("init", "captioner")`` hashes the labels with FNV-1a into the parent
key through splitmix64, so a child stream never depends on how much of the
parent has been consumed.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels

LANES = 64
_MASK = (1 << 64) - 1


def splitmix64(x: int) -> tuple[int, int]:
    """One splitmix64 step: returns ``(output, next_state)``."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31), x


def fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & _MASK
    return h


def mix_key(key: int, label) -> int:
    out, _ = splitmix64(key ^ fnv1a64(str(label)))
    return out


class Rng:
    """Deterministic random stream; see module docstring for the exact layout."""

    def __init__(self, seed: int, *labels):
        key = int(seed) & _MASK
        for label in labels:
            key = mix_key(key, label)
        self.key = key
        words = []
        x = key
        for _ in range(4 * LANES):
            out, x = splitmix64(x)
            words.append(out)
        state = np.array(words, dtype=np.uint64).reshape(LANES, 4).T.copy()
        if not state.any(axis=0).all():  # an all-zero lane would stay zero forever
            raise ValueError("degenerate xoshiro lane state")
        self.state = state

    def derive(self, *labels) -> "Rng":
        return Rng(self.key, *labels)

    # -- raw draws ---------------------------------------------------------
    def bits(self, n: int) -> np.ndarray:
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        rounds = -(-n // LANES)
        return kernels.xoshiro_fill(self.state, rounds)[:n]

    def random(self, shape=()) -> np.ndarray:
        """Uniform doubles in [0, 1) with 53 random bits."""
        n = int(np.prod(shape, dtype=np.int64))
        out = (self.bits(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return out.reshape(shape)

    def uniform(self, low: float, high: float, shape=()) -> np.ndarray:
        return low + (high - low) * self.random(shape)

    def normal(self, shape=(), scale: float = 1.0) -> np.ndarray:
        """Box-Muller, cosine branch only: each normal costs two uniforms."""
        n = int(np.prod(shape, dtype=np.int64))
        u = self.random((2, n))
        u1 = 1.0 - u[0]  # (0, 1]
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u[1])
        return (scale * z).reshape(shape)

    def integers(self, high: int, shape=()) -> np.ndarray:
        """Integers in [0, high) by scaling 53-bit uniforms."""
        if high <= 0:
            raise ValueError("high must be positive")
        return np.minimum((self.random(shape) * high).astype(np.int64), high - 1)

    def permutation(self, n: int) -> np.ndarray:
        keys = self.bits(n)
        return np.argsort(keys, kind="stable").astype(np.int64)

    def choice(self, n: int, p=None) -> int:
        if p is None:
            return int(self.integers(n))
        cdf = np.cumsum(np.asarray(p, dtype=np.float64))
        u = float(self.random()) * cdf[-1]
        return int(min(np.searchsorted(cdf, u, side="right"), n - 1))
