"""Deterministic counter-based randomness.

A stream is identified by (seed, stream_id); the i-th output word is a
splitmix-style 64-bit mix of the counter, so identical draw sequences
reproduce bit-for-bit within this implementation. Streams never share state,
which lets replay (e.g. augmentation noise) restart from a recorded counter.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_A = np.uint64(0xBF58476D1CE4E5B9)
_MIX_B = np.uint64(0x94D049BB133111EB)
_STREAM_SALT = np.uint64(0x632BE59BD9B4E019)

_U64_MASK = (1 << 64) - 1
_INV_2_53 = 2.0 ** -53


def _mix64(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64, copy=True)
    with np.errstate(over="ignore"):  # modular 64-bit wraparound is intended
        x ^= x >> np.uint64(30)
        x *= _MIX_A
        x ^= x >> np.uint64(27)
        x *= _MIX_B
        x ^= x >> np.uint64(31)
    return x


def fnv1a64(name: str) -> int:
    """64-bit FNV-1a of a stream name; used to derive named stream ids."""
    h = 0xCBF29CE484222325
    for byte in name.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _U64_MASK
    return h


class RngStream:
    """Counter-based stream of uniforms, normals, shuffles, and integers."""

    def __init__(self, seed: int, stream_id: int, counter: int = 0):
        self.seed = seed & _U64_MASK
        self.stream_id = stream_id & _U64_MASK
        self.counter = counter
        salted = _mix64(np.uint64((self.stream_id + int(_STREAM_SALT)) & _U64_MASK))
        self._base = _mix64(np.uint64(self.seed) ^ salted)

    def named(self, name: str) -> "RngStream":
        """Derive an independent stream keyed by (this stream's id, name)."""
        sub = (self.stream_id * 0x9E3779B97F4A7C15 + fnv1a64(name)) & _U64_MASK
        return RngStream(self.seed, sub)

    def at(self, counter: int) -> "RngStream":
        """Clone positioned at an absolute counter, for replaying draws."""
        return RngStream(self.seed, self.stream_id, counter)

    def _words(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix64(self._base + idx * _GOLDEN)

    def uniform(self, shape=None) -> np.ndarray | float:
        """Uniform draws in [0, 1) with 53-bit resolution."""
        if shape is None:
            return float(self._words(1)[0] >> np.uint64(11)) * _INV_2_53
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        u = (self._words(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return u.reshape(shape)

    def normal(self, shape=None) -> np.ndarray | float:
        """Standard normals via Box-Muller over pairs of uniforms."""
        scalar = shape is None
        shape = (1,) if scalar else ((shape,) if isinstance(shape, int) else tuple(shape))
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        u = (self._words(2 * pairs) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        u1, u2 = u[:pairs], u[pairs:]
        r = np.sqrt(-2.0 * np.log1p(-u1))
        theta = (2.0 * np.pi) * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return float(z[0]) if scalar else z.reshape(shape)

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError("randint needs n >= 1")
        return min(int(self.uniform() * n), n - 1)

    def shuffle(self, n: int) -> np.ndarray:
        """Uniform permutation of range(n) via Fisher-Yates."""
        perm = np.arange(n, dtype=np.int64)
        if n <= 1:
            return perm
        u = self.uniform(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = min(int(u[k] * (i + 1)), i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def stream_for(seed: int, name: str) -> RngStream:
    """Top-level named stream for a run seed."""
    return RngStream(seed, fnv1a64(name))
