"""Exact arithmetic over a prime field F_q: scalars, vectors, matrices.

Vectors and matrices are numpy int64 arrays holding canonical
representatives in [0, q); the modulus lives in a shared PrimeField
context rather than on each element.
"""

from __future__ import annotations

import numpy as np


class FieldError(Exception):
    """Domain error in field arithmetic (e.g. inversion of zero)."""


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    d = 3
    while d * d <= n:
        if n % d == 0:
            return False
        d += 2
    return True


class PrimeField:
    """Parameter context for F_q, q prime.

    Scalar operations take and return plain ints in [0, q).  An inverse
    lookup table is precomputed for q <= 4096 so hot loops stay cheap.
    """

    def __init__(self, q: int):
        if not _is_prime(q):
            raise FieldError(f"modulus {q} is not prime")
        self.q = q
        self._inv_table = None
        if q <= 4096:
            self._inv_table = [0] * q
            for a in range(1, q):
                self._inv_table[a] = pow(a, q - 2, q)

    def __repr__(self):
        return f"PrimeField({self.q})"

    def __eq__(self, other):
        return isinstance(other, PrimeField) and other.q == self.q

    def __hash__(self):
        return hash(("PrimeField", self.q))

    def add(self, a: int, b: int) -> int:
        return (a + b) % self.q

    def sub(self, a: int, b: int) -> int:
        return (a - b) % self.q

    def mul(self, a: int, b: int) -> int:
        return (a * b) % self.q

    def neg(self, a: int) -> int:
        return (-a) % self.q

    def inv(self, a: int) -> int:
        a %= self.q
        if a == 0:
            raise FieldError("inverse of zero")
        if self._inv_table is not None:
            return self._inv_table[a]
        return pow(a, self.q - 2, self.q)

    # -- vector / matrix constructors -------------------------------------

    def vector(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=np.int64) % self.q
        if v.ndim != 1:
            raise ValueError("vector must be one-dimensional")
        return v

    def matrix(self, values) -> np.ndarray:
        m = np.asarray(values, dtype=np.int64) % self.q
        if m.ndim != 2:
            raise ValueError("matrix must be two-dimensional")
        return m

    def zeros(self, *shape) -> np.ndarray:
        return np.zeros(shape, dtype=np.int64)

    def random_vector(self, rng: np.random.Generator, length: int) -> np.ndarray:
        return rng.integers(0, self.q, size=length, dtype=np.int64)

    def random_matrix(self, rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
        return rng.integers(0, self.q, size=(rows, cols), dtype=np.int64)


def solve_linear(field: PrimeField, a: np.ndarray, b: np.ndarray):
    """Solve A x = b over F_q by Gaussian elimination.

    Pivoting is deterministic: the first row with a nonzero entry in the
    current column is used.  Returns the solution vector, or None when A
    is singular (callers resample and retry).
    """
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("coefficient matrix must be square")
    n = a.shape[0]
    if b.shape != (n,):
        raise ValueError(f"right-hand side has length {b.shape}, expected {n}")
    q = field.q
    aug = np.concatenate([a % q, (b % q)[:, None]], axis=1)
    for col in range(n):
        pivot = None
        for row in range(col, n):
            if aug[row, col] != 0:
                pivot = row
                break
        if pivot is None:
            return None
        if pivot != col:
            aug[[col, pivot]] = aug[[pivot, col]]
        aug[col] = (aug[col] * field.inv(int(aug[col, col]))) % q
        for row in range(n):
            if row != col and aug[row, col] != 0:
                aug[row] = (aug[row] - aug[row, col] * aug[col]) % q
    return aug[:, n].copy()


def matrix_is_invertible(field: PrimeField, m: np.ndarray) -> bool:
    """Rank check via the same deterministic elimination as solve_linear."""
    m = np.asarray(m, dtype=np.int64) % field.q
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square")
    n = m.shape[0]
    work = m.copy()
    for col in range(n):
        pivot = None
        for row in range(col, n):
            if work[row, col] != 0:
                pivot = row
                break
        if pivot is None:
            return False
        if pivot != col:
            work[[col, pivot]] = work[[pivot, col]]
        work[col] = (work[col] * field.inv(int(work[col, col]))) % field.q
        for row in range(col + 1, n):
            if work[row, col] != 0:
                work[row] = (work[row] - work[row, col] * work[col]) % field.q
    return True


def random_invertible_matrix(
    field: PrimeField, dim: int, rng: np.random.Generator, max_attempts: int = 1000
) -> np.ndarray:
    """Sample a uniformly random invertible dim x dim matrix.

    Resamples until invertible; deterministic for a fixed rng state.
    """
    if dim < 1:
        raise ValueError("dimension must be >= 1")
    for _ in range(max_attempts):
        m = field.random_matrix(rng, dim, dim)
        if matrix_is_invertible(field, m):
            return m
    raise RuntimeError(f"no invertible matrix found in {max_attempts} attempts")


# -- shared byte encoding ---------------------------------------------------
#
# A field vector serializes as a 4-byte little-endian length prefix followed
# by one byte per element.  Every higher layer reuses this encoding, so it
# requires q <= 256.

def encode_vector(vec: np.ndarray) -> bytes:
    vec = np.asarray(vec, dtype=np.int64)
    if vec.size and (int(vec.max()) > 255 or int(vec.min()) < 0):
        raise ValueError("vector encoding requires canonical values and q <= 256")
    return len(vec).to_bytes(4, "little") + vec.astype(np.uint8).tobytes()


def encode_rows(*row_blocks: np.ndarray) -> bytes:
    """Concatenation of encode_vector over the rows of stacked blocks.

    Each block is a (k, width) array; row i of the output interleaves the
    length-prefixed row i of every block.  Equivalent to joining
    encode_vector per row, but one buffer build instead of k*blocks calls.
    """
    k = row_blocks[0].shape[0]
    total = sum(4 + b.shape[1] for b in row_blocks)
    out = np.empty((k, total), dtype=np.uint8)
    col = 0
    for block in row_blocks:
        width = block.shape[1]
        prefix = np.frombuffer(width.to_bytes(4, "little"), dtype=np.uint8)
        out[:, col : col + 4] = prefix
        out[:, col + 4 : col + 4 + width] = block
        col += 4 + width
    return out.tobytes()


def decode_vector(data: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one length-prefixed vector; returns (vector, next offset)."""
    if offset + 4 > len(data):
        raise ValueError("truncated vector length prefix")
    n = int.from_bytes(data[offset : offset + 4], "little")
    offset += 4
    if offset + n > len(data):
        raise ValueError("truncated vector payload")
    vec = np.frombuffer(data[offset : offset + n], dtype=np.uint8).astype(np.int64)
    return vec, offset + n
