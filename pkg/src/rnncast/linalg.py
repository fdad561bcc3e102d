"""Dense float64 matrix kernels and a deterministic, portable RNG.

Everything downstream (cells, training, evaluation) is built on the handful
of operations in this module.  Matrices are plain 2-D ``numpy.ndarray``
objects in row-major (C) order with dtype float64; vectors are represented
as n-by-1 matrices so there is a single container type throughout.

The random generator is splitmix64, a counter-based 64-bit generator: draw
``i`` of a stream seeded with ``s`` is ``mix64(s + i * GOLDEN)`` where the
sum wraps modulo 2**64.  Because each draw depends only on (seed, counter),
scalar and vectorized draws produce the same stream, and the generator is
trivial to replicate in any language.  Constants and the mixing function
are documented in the README.  The platform RNG is never used.
"""

from __future__ import annotations

import math

import numpy as np

# A matrix is a 2-D float64 ndarray; the alias is documentation, not a class.
Matrix = np.ndarray


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def _shape(a: Matrix) -> str:
    return "x".join(str(d) for d in a.shape)


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Standard matrix product a @ b.

    Raises ShapeError naming both shapes when a.cols != b.rows.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D matrices, got {_shape(a)} and {_shape(b)}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {_shape(a)} by {_shape(b)}")
    return a @ b


def hadamard(a: Matrix, b: Matrix) -> Matrix:
    """Element-wise product of two identically shaped matrices."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard shapes differ: {_shape(a)} vs {_shape(b)}")
    return a * b


def sigmoid(x: Matrix) -> Matrix:
    """Element-wise logistic function 1 / (1 + exp(-x)).

    Computed from exp(-|x|) so neither branch can overflow; stable for
    arguments far beyond +-1e3.  Note that float64 saturates to exactly
    0.0 / 1.0 once |x| exceeds ~36.7; inside that range outputs are
    strictly within (0, 1).
    """
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))


def tanh_act(x: Matrix) -> Matrix:
    """Element-wise hyperbolic tangent."""
    return np.tanh(np.asarray(x, dtype=np.float64))


def xavier_init(rows: int, cols: int, rng: "Rng") -> Matrix:
    """Matrix with entries uniform on [-b, b], b = sqrt(6 / (rows + cols)).

    Consumes exactly rows*cols draws from ``rng``, row-major.
    """
    if rows < 1 or cols < 1:
        raise ShapeError(f"xavier_init needs positive dims, got {rows}x{cols}")
    bound = math.sqrt(6.0 / (rows + cols))
    return rng.uniform_matrix(rows, cols, -bound, bound)


# splitmix64 constants (Steele, Lea & Flood; also used to seed xoshiro).
_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB


def _mix64(v: int) -> int:
    """splitmix64 finalizer: bijective avalanche mix of a 64-bit value."""
    v = (v ^ (v >> 30)) * _MIX_A & _MASK64
    v = (v ^ (v >> 27)) * _MIX_B & _MASK64
    return v ^ (v >> 31)


class Rng:
    """Counter-based splitmix64 stream.

    Identical seed gives an identical sequence of draws on every platform:
    the integer arithmetic is exact and the float conversion uses the top
    53 bits of each 64-bit output.
    """

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        self.counter = 0

    def next_u64(self) -> int:
        """Next raw 64-bit output."""
        self.counter += 1
        return _mix64((self.seed + self.counter * _GOLDEN) & _MASK64)

    def _u64_block(self, n: int) -> np.ndarray:
        """n raw outputs as a uint64 array; same stream as n scalar draws."""
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        v = (np.uint64(self.seed) + idx * np.uint64(_GOLDEN))  # wraps mod 2**64
        v = (v ^ (v >> np.uint64(30))) * np.uint64(_MIX_A)
        v = (v ^ (v >> np.uint64(27))) * np.uint64(_MIX_B)
        return v ^ (v >> np.uint64(31))

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        """One double, uniform on [low, high)."""
        u = (self.next_u64() >> 11) * 2.0**-53
        return low + u * (high - low)

    def uniform_matrix(self, rows: int, cols: int, low: float = 0.0, high: float = 1.0) -> Matrix:
        """rows-by-cols matrix of uniform draws, filled row-major."""
        u = (self._u64_block(rows * cols) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return (low + u * (high - low)).reshape(rows, cols)

    def next_below(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError(f"next_below needs n >= 1, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.next_below(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def shuffled(self, items: list) -> list:
        """New list with items in a seeded random order."""
        return [items[i] for i in self.permutation(len(items))]
