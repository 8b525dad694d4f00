"""Portable counter-based random numbers.

Every random draw in the package (key matrices, weight initialization,
minibatch shuffles, synthetic data) comes from this generator so that a
seed reproduces the same numbers on any platform with IEEE-754 doubles.

Algorithm
---------
SplitMix64. Output ``k`` (k = 0, 1, ...) of a stream with seed ``s`` is::

    z = (s + (k + 1) * 0x9E3779B97F4A7C15) mod 2**64
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 mod 2**64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB mod 2**64
    out = z ^ (z >> 31)

Derived quantities:

* uniform double in [0, 1): ``(out >> 11) * 2**-53``
* integer in [0, n): ``floor(uniform * n)``
* standard normal: Box-Muller on consecutive pairs ``(a, b)`` of outputs,
  ``u1 = 1 - uniform(a)`` (so u1 is in (0, 1]), ``u2 = uniform(b)``,
  giving ``r*cos(2*pi*u2)`` then ``r*sin(2*pi*u2)`` with
  ``r = sqrt(-2 ln u1)``.  Normals are emitted in that interleaved order.

Streams split by name: ``child seed = mix(parent seed XOR fnv1a64(name))``
where ``mix`` is the three-line finalizer above.
"""

from __future__ import annotations

import numpy as np

GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & _MASK64
    return h


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= _MASK64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


class SplitMix64:
    """Counter-based SplitMix64 stream.

    >>> SplitMix64(0).next_uint64(1)[0] == 0xE220A8397B1DCDAF
    True
    """

    def __init__(self, seed: int):
        self.seed = check_seed(seed)
        self.counter = 0

    def spawn(self, name: str | int) -> "SplitMix64":
        """Independent child stream; does not advance this one."""
        tag = fnv1a64(str(name))
        child = _mix(np.array([self.seed ^ tag], dtype=np.uint64))[0]
        return SplitMix64(int(child))

    def next_uint64(self, n: int) -> np.ndarray:
        k = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + k * GOLDEN_GAMMA
        return _mix(z)

    def uniform(self, n: int) -> np.ndarray:
        return (self.next_uint64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def integers(self, high: int, n: int) -> np.ndarray:
        """``n`` draws from [0, high)."""
        if high < 1:
            raise ValueError("high must be >= 1")
        out = np.floor(self.uniform(n) * high).astype(np.int64)
        return np.minimum(out, high - 1)

    def normal(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        raw = self.uniform(2 * pairs).reshape(pairs, 2)
        u1 = 1.0 - raw[:, 0]
        u2 = raw[:, 1]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty((pairs, 2))
        out[:, 0] = r * np.cos(theta)
        out[:, 1] = r * np.sin(theta)
        return out.reshape(-1)[:n]

    def permutation(self, n: int) -> np.ndarray:
        keys = self.next_uint64(n)
        return np.argsort(keys, kind="stable")
