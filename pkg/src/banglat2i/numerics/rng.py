"""Deterministic, labelled random streams.

Counter-based SplitMix64: a stream is (base, counter) and every draw is a
pure function of those, so identical (seed, stream_label, draw sequence)
reproduces bit-identical values on any platform. Separate labels give
independent streams, so adding draws to one consumer never perturbs another.
"""

from __future__ import annotations

import numpy as np

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def _fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


class RngStream:
    """One named random stream derived from a 64-bit seed."""

    def __init__(self, seed: int, stream_label: str):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_label = stream_label
        base = self.seed ^ _fnv1a64(stream_label.encode("utf-8"))
        self._base = _mix64(np.uint64(base & 0xFFFFFFFFFFFFFFFF))
        self._counter = 0

    def split(self, label: str) -> "RngStream":
        """Child stream with an independent label; does not consume draws."""
        return RngStream(int(self._base), f"{self.stream_label}/{label}")

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter, self._counter + n, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            return _mix64(self._base + _GOLDEN * idx)

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Doubles in [low, high) with 53-bit resolution."""
        n = int(np.prod(shape)) if shape else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * (2.0**-53)
        out = low + (high - low) * u
        return out.reshape(shape) if shape else out[0]

    def normal(self, shape=()) -> np.ndarray:
        """Standard normals via Box-Muller on paired uniforms."""
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        raw = self._raw(2 * pairs)
        u1 = ((raw[:pairs] >> np.uint64(11)).astype(np.float64) + 1.0) * (2.0**-53)
        u2 = (raw[pairs:] >> np.uint64(11)).astype(np.float64) * (2.0**-53)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape) if shape else z[0]

    def integers(self, upper: int, size: int) -> np.ndarray:
        """size draws uniform over [0, upper) via 128-bit multiply-shift."""
        if upper <= 0:
            raise ValueError("upper must be positive")
        raw = self._raw(size)
        out = [(int(r) * upper) >> 64 for r in raw]
        return np.asarray(out, dtype=np.int64)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n), one draw per swap."""
        perm = np.arange(n, dtype=np.int64)
        if n < 2:
            return perm
        raw = self._raw(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = (int(raw[k]) * (i + 1)) >> 64
            perm[i], perm[j] = perm[j], perm[i]
        return perm
