"""Portable pseudo-random streams.

xoshiro256** seeded through splitmix64, so a given 64-bit seed yields the same
stream on every platform.  Floats are built from the top 53 bits of each
output.  The generator core is compiled with numba; ``uint64`` arithmetic
there wraps modulo 2**64 exactly as the reference algorithm requires.
"""

from __future__ import annotations

import math

import numba
import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_INV_2_53 = 1.0 / 9007199254740992.0


def splitmix64(state: int) -> int:
    """One splitmix64 step: advance ``state`` by the golden gamma and mix it."""
    z = (state + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def sub_seed(master_seed: int, index: int) -> int:
    """Per-item seed for parallel-safe streams: ``splitmix64(master ^ index)``."""
    return splitmix64((int(master_seed) ^ int(index)) & MASK64)


@numba.njit(cache=True)
def _fill(s, out):
    for i in range(out.shape[0]):
        s1 = s[1]
        x = s1 * np.uint64(5)
        r = (x << np.uint64(7)) | (x >> np.uint64(57))
        out[i] = r * np.uint64(9)
        t = s1 << np.uint64(17)
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = (s[3] << np.uint64(45)) | (s[3] >> np.uint64(19))


@numba.njit(cache=True)
def _fill_unit(s, out):
    scale = 1.0 / 9007199254740992.0
    for i in range(out.shape[0]):
        s1 = s[1]
        x = s1 * np.uint64(5)
        r = ((x << np.uint64(7)) | (x >> np.uint64(57))) * np.uint64(9)
        out[i] = np.float64(r >> np.uint64(11)) * scale
        t = s1 << np.uint64(17)
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = (s[3] << np.uint64(45)) | (s[3] >> np.uint64(19))


class Xoshiro256:
    """xoshiro256** generator.

    The 256-bit state is four consecutive splitmix64 outputs of the seed.
    Instances are mutable and not thread safe; give each worker its own.
    """

    __slots__ = ("_s", "_one")

    def __init__(self, seed: int = 0, *, state=None):
        if state is None:
            s = int(seed) & MASK64
            words = []
            for _ in range(4):
                words.append(splitmix64(s))
                s = (s + GOLDEN_GAMMA) & MASK64
        else:
            words = [int(w) & MASK64 for w in state]
            if len(words) != 4 or not any(words):
                raise ValueError("xoshiro256** state must be four words, not all zero")
        self._s = np.array(words, dtype=np.uint64)
        self._one = np.empty(1, dtype=np.uint64)

    @property
    def state(self) -> tuple[int, int, int, int]:
        return tuple(int(w) for w in self._s)

    def next_u64(self) -> int:
        _fill(self._s, self._one)
        return int(self._one[0])

    def u64_array(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.uint64)
        _fill(self._s, out)
        return out

    def random(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * _INV_2_53

    def uniform_array(self, n: int) -> np.ndarray:
        """``n`` uniform doubles in [0, 1), in stream order."""
        out = np.empty(n, dtype=np.float64)
        _fill_unit(self._s, out)
        return out

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in the closed range [low, high], by rejection (unbiased)."""
        if high < low:
            raise ValueError(f"empty range [{low}, {high}]")
        span = high - low + 1
        if span > MASK64:
            return low + self.next_u64()
        limit = (MASK64 + 1) - ((MASK64 + 1) % span)
        while True:
            r = self.next_u64()
            if r < limit:
                return low + r % span

    def normal_array(self, n: int) -> np.ndarray:
        """Standard normal draws by Box-Muller, one uniform pair per two outputs."""
        m = (n + 1) // 2
        u = self.uniform_array(2 * m)
        r = np.sqrt(-2.0 * np.log(1.0 - u[0::2]))  # 1 - u keeps the log finite
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(2.0 * math.pi * u[1::2])
        z[1::2] = r * np.sin(2.0 * math.pi * u[1::2])
        return z[:n]

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        idx = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integers(0, i)
            idx[i], idx[j] = idx[j], idx[i]
        return np.array(idx, dtype=np.int64)

    def spawn(self) -> "Xoshiro256":
        """Independent child stream seeded from this stream's next output."""
        return Xoshiro256(self.next_u64())
