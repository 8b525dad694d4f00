"""Secret projection keys.

A key is a ``T x M`` matrix ``X``. Three families are supported:

``direct``
    each row holds a single 1; bit j is carried by one mean weight.
``diff``
    each row holds one +1 and one -1 at distinct columns; bit j is carried
    by the difference of two mean weights.
``random``
    i.i.d. standard normal entries; every bit is spread over all weights.

Column choices for ``direct``/``diff`` are drawn uniformly with replacement
across rows, so two rows may use the same column.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, ValidationError
from ..rng import SplitMix64, check_seed

KEY_FAMILIES = ("direct", "diff", "random")


@dataclass(eq=False)
class KeyMatrix:
    family: str
    T: int
    M: int
    seed: int
    X: np.ndarray = field(repr=False)
    explicit: bool = False

    @property
    def shape(self):
        return (self.T, self.M)

    def __eq__(self, other):
        if not isinstance(other, KeyMatrix):
            return NotImplemented
        return (
            (self.family, self.T, self.M, self.seed) == (other.family, other.T, other.M, other.seed)
            and np.array_equal(self.X, other.X)
        )


def _draw_matrix(family, T, M, seed):
    rng = SplitMix64(seed)
    if family == "random":
        return rng.normal(T * M).reshape(T, M)
    X = np.zeros((T, M))
    rows = np.arange(T)
    if family == "direct":
        X[rows, rng.integers(M, T)] = 1.0
        return X
    # diff: the +1 column is uniform, the -1 column uniform over the rest.
    plus = rng.integers(M, T)
    minus = (plus + 1 + rng.integers(M - 1, T)) % M
    X[rows, plus] = 1.0
    X[rows, minus] = -1.0
    return X


def generate_key(family: str, T: int, M: int, seed: int) -> KeyMatrix:
    """Deterministic key for ``(family, T, M, seed)``."""
    if family not in KEY_FAMILIES:
        raise ConfigurationError(f"unknown key family {family!r}; choose from {KEY_FAMILIES}")
    T, M = int(T), int(M)
    if T < 1 or M < 1:
        raise ConfigurationError("T and M must be >= 1")
    if family == "diff" and M < 2:
        raise ConfigurationError("diff keys need M >= 2")
    seed = check_seed(seed)
    return KeyMatrix(family, T, M, seed, _draw_matrix(family, T, M, seed))


def validate_key_matrix(family: str, X) -> np.ndarray:
    """Check ``X`` against the structural rule of its family."""
    X = np.asarray(X, dtype=np.float64)
    if family not in KEY_FAMILIES:
        raise ValidationError(f"unknown key family {family!r}")
    if X.ndim != 2 or X.size == 0:
        raise ValidationError("key matrix must be a non-empty 2-D array")
    if not np.all(np.isfinite(X)):
        raise ValidationError("key matrix has non-finite entries")
    if family == "random":
        return X
    nonzero = X != 0
    if family == "direct":
        ok = (nonzero.sum(axis=1) == 1) & np.all((X == 0) | (X == 1), axis=1)
    else:
        ok = (
            (np.sum(X == 1, axis=1) == 1)
            & (np.sum(X == -1, axis=1) == 1)
            & (nonzero.sum(axis=1) == 2)
        )
    bad = np.flatnonzero(~ok)
    if bad.size:
        raise ValidationError(f"row {int(bad[0])} violates the {family} key structure")
    return X


def key_from_matrix(family: str, X, seed: int = 0) -> KeyMatrix:
    X = validate_key_matrix(family, X)
    return KeyMatrix(family, X.shape[0], X.shape[1], check_seed(seed), X, explicit=True)
