"""Portable seeded PRNG.

Every random draw in the simulator (blob means and samples, initial weights,
holdout shuffles) goes through this generator so that a seed reproduces the
same stream on any platform and in any re-implementation:

    seeding      state = splitmix64(seed)   (0 is replaced by the golden gamma)
    step         x ^= x >> 12; x ^= x << 25; x ^= x >> 27       (xorshift64*)
    output       x * 0x2545F4914F6CDD1D  mod 2**64
    uniform01    (output >> 11) * 2**-53                         in [0, 1)
    gauss        Box-Muller, cosine branch, two uniforms per draw
    permutation  Fisher-Yates from the top, j = floor(u * (i + 1))
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_XORSHIFT_MULT = 0x2545F4914F6CDD1D
_INV_2_53 = 1.0 / 9007199254740992.0


def splitmix64(value: int) -> int:
    z = (value + _GOLDEN_GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, stream: int) -> int:
    """Independent sub-seed for one purpose (data, init, split, ...)."""
    return splitmix64((seed & _MASK64) ^ ((stream * _GOLDEN_GAMMA) & _MASK64))


class Xorshift64Star:
    def __init__(self, seed: int) -> None:
        state = splitmix64(int(seed) & _MASK64)
        self._state = state or _GOLDEN_GAMMA

    def next_u64(self) -> int:
        x = self._state
        x ^= x >> 12
        x ^= (x << 25) & _MASK64
        x ^= x >> 27
        self._state = x
        return (x * _XORSHIFT_MULT) & _MASK64

    def random(self) -> float:
        return (self.next_u64() >> 11) * _INV_2_53

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def gauss(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        # 1 - u keeps the log argument in (0, 1]
        u1 = 1.0 - self.random()
        u2 = self.random()
        return mu + sigma * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def uniform_array(self, size: int, low: float, high: float) -> np.ndarray:
        return np.array([self.uniform(low, high) for _ in range(size)], dtype=np.float64)

    def gauss_array(self, size: int, mu: float = 0.0, sigma: float = 1.0) -> np.ndarray:
        return np.array([self.gauss(mu, sigma) for _ in range(size)], dtype=np.float64)

    def permutation(self, n: int) -> list[int]:
        out = list(range(n))
        for i in range(n - 1, 0, -1):
            j = int(self.random() * (i + 1))
            out[i], out[j] = out[j], out[i]
        return out
