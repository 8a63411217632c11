"""Deterministic randomness built on SplitMix64, plus the FNV-1a hash.

Every random quantity in the package (weight init, corpus synthesis, batch
order) comes from a `Stream` keyed by a 64-bit seed and a string label.
Streams derived from different labels are independent, so components never
share generator state and any artifact is a pure function of its config.
SplitMix64 is a published, fixed algorithm; the only platform dependence
left is libm's log/cos/sin used by the Box-Muller transform.
"""

from __future__ import annotations

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def _mix(x: np.ndarray) -> np.ndarray:
    """SplitMix64 output function applied elementwise to uint64 states."""
    z = x.copy()
    z ^= z >> np.uint64(30)
    z *= np.uint64(_MIX1)
    z ^= z >> np.uint64(27)
    z *= np.uint64(_MIX2)
    z ^= z >> np.uint64(31)
    return z


class Stream:
    """A seekable SplitMix64 stream identified by (seed, label).

    The stream state is the counter of how many 64-bit words were drawn;
    word i is mix(base + (i+1) * golden) where base folds the seed and the
    FNV-1a hash of the label. Disjoint labels give unrelated streams.
    """

    def __init__(self, seed: int, label: str):
        self.seed = seed
        self.label = label
        self._base = (seed ^ fnv1a64(label.encode("utf-8"))) & _MASK64
        self._count = 0

    def words(self, n: int) -> np.ndarray:
        """Next n raw uint64 words."""
        idx = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        with np.errstate(over="ignore"):
            states = np.uint64(self._base) + idx * np.uint64(_GOLDEN)
            return _mix(states)

    def uniform(self, n: int) -> np.ndarray:
        """n doubles uniform on [0, 1), using the top 53 bits of each word."""
        return (self.words(n) >> np.uint64(11)) * 2.0**-53

    def gaussian(self, shape) -> np.ndarray:
        """Standard normal samples via Box-Muller on uniform pairs."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        half = (n + 1) // 2
        # u1 shifted into (0, 1] so log never sees zero
        u1 = (self.uniform(half) * (1.0 - 2.0**-53)) + 2.0**-53
        u2 = self.uniform(half)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return out.reshape(shape)

    def randint(self, n: int) -> int:
        """One integer uniform on [0, n). Modulo bias is ~2^-64 * n."""
        return int(self.words(1)[0] % np.uint64(n))

    def randints(self, count: int, n: int) -> np.ndarray:
        """count integers uniform on [0, n)."""
        return (self.words(count) % np.uint64(n)).astype(np.int64)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        m = len(items)
        if m < 2:
            return
        draws = self.words(m - 1)
        for i in range(m - 1, 0, -1):
            j = int(draws[m - 1 - i] % np.uint64(i + 1))
            items[i], items[j] = items[j], items[i]

    def sample(self, items: list, k: int) -> list:
        """k items without replacement via a partial Fisher-Yates pass."""
        pool = list(items)
        m = len(pool)
        if k > m:
            raise ValueError(f"cannot sample {k} from {m} items")
        draws = self.words(k)
        for i in range(k):
            j = i + int(draws[i] % np.uint64(m - i))
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]


def xavier_uniform(shape, fan_in: int, fan_out: int, seed: int, label: str) -> np.ndarray:
    """Centered uniform with half-width sqrt(6 / (fan_in + fan_out))."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    stream = Stream(seed, label)
    n = int(np.prod(shape))
    return ((stream.uniform(n) * 2.0 - 1.0) * bound).reshape(shape)
