"""Multivariate quadratic maps, affine maps, and the trapdoor structure.

A quadratic polynomial is stored in canonical upper-triangular form: the
monomial x_i*x_j (i <= j) has a single coefficient, plus a linear vector
and a constant.  A map stacks m such polynomials into coefficient
matrices so evaluation is a matrix product.

The trapdoor is the classical oil-and-vinegar shape: a central map F
with no oil*oil monomials, hidden between two secret affine maps S and
T.  The published map is the explicit coefficient expansion of
S(F(T(x))).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .gf import PrimeField, matrix_is_invertible, solve_linear


@lru_cache(maxsize=64)
def triangle_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column index arrays of the upper-triangular monomial order.

    Position t corresponds to the monomial x_I[t] * x_J[t], iterating
    i = 0..n-1, j = i..n-1.
    """
    i_idx, j_idx = np.triu_indices(n)
    return i_idx.astype(np.int64), j_idx.astype(np.int64)


def triangle_size(n: int) -> int:
    return n * (n + 1) // 2


@dataclass
class QuadraticPoly:
    """One quadratic polynomial: quad (upper-triangular terms), lin, const."""

    field: PrimeField
    quad: np.ndarray  # length n(n+1)/2, canonical monomial order
    lin: np.ndarray   # length n
    const: int

    @property
    def n(self) -> int:
        return len(self.lin)

    def evaluate(self, x: np.ndarray) -> int:
        i_idx, j_idx = triangle_indices(self.n)
        mono = (x[i_idx] * x[j_idx]) % self.field.q
        return int((mono @ self.quad + x @ self.lin + self.const) % self.field.q)


class QuadraticMap:
    """m quadratic polynomials in n variables, stacked for fast evaluation."""

    def __init__(self, field: PrimeField, n: int, quad: np.ndarray, lin: np.ndarray,
                 const: np.ndarray):
        t = triangle_size(n)
        if quad.shape[1] != t or lin.shape[1] != n:
            raise ValueError("coefficient shapes do not match n")
        if not (quad.shape[0] == lin.shape[0] == const.shape[0]):
            raise ValueError("polynomial counts disagree")
        self.field = field
        self.n = n
        self.quad = quad % field.q
        self.lin = lin % field.q
        self.const = const % field.q

    @property
    def m(self) -> int:
        return self.quad.shape[0]

    @classmethod
    def from_polys(cls, polys: list[QuadraticPoly]) -> "QuadraticMap":
        if not polys:
            raise ValueError("empty polynomial list")
        field, n = polys[0].field, polys[0].n
        quad = np.stack([p.quad for p in polys])
        lin = np.stack([p.lin for p in polys])
        const = np.array([p.const for p in polys], dtype=np.int64)
        return cls(field, n, quad, lin, const)

    @classmethod
    def random(cls, field: PrimeField, n: int, m: int, rng: np.random.Generator) -> "QuadraticMap":
        t = triangle_size(n)
        return cls(field, n,
                   rng.integers(0, field.q, size=(m, t), dtype=np.int64),
                   rng.integers(0, field.q, size=(m, n), dtype=np.int64),
                   rng.integers(0, field.q, size=m, dtype=np.int64))

    def poly(self, k: int) -> QuadraticPoly:
        return QuadraticPoly(self.field, self.quad[k], self.lin[k], int(self.const[k]))

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.int64)
        if x.shape != (self.n,):
            raise ValueError(f"input has shape {x.shape}, expected ({self.n},)")
        return self.evaluate_many(x[None, :])[0]

    def evaluate_many(self, xs: np.ndarray) -> np.ndarray:
        """Evaluate at each row of xs; returns one output row per input row."""
        xs = np.asarray(xs, dtype=np.int64)
        if xs.ndim != 2 or xs.shape[1] != self.n:
            raise ValueError(f"inputs have shape {xs.shape}, expected (k, {self.n})")
        q = self.field.q
        i_idx, j_idx = triangle_indices(self.n)
        mono = (xs[:, i_idx] * xs[:, j_idx]) % q
        return (mono @ self.quad.T + xs @ self.lin.T + self.const) % q

    def polar(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Polar form G(x, y) = P(x+y) - P(x) - P(y) + P(0).

        Computed by the defining four evaluations (P(0) is the constant
        vector), not by a separate bilinear expansion.
        """
        x = np.asarray(x, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        if x.shape != (self.n,) or y.shape != (self.n,):
            raise ValueError("polar form inputs must have length n")
        q = self.field.q
        ev = self.evaluate_many(np.stack([(x + y) % q, x, y]))
        return (ev[0] - ev[1] - ev[2] + self.const) % q

    # serialization: header (q, n, m as 4-byte LE each), then per polynomial
    # the n(n+1)/2 upper-triangular bytes, n linear bytes, one constant byte.

    def serialize(self) -> bytes:
        head = (self.field.q.to_bytes(4, "little") + self.n.to_bytes(4, "little")
                + self.m.to_bytes(4, "little"))
        body = np.concatenate(
            [self.quad, self.lin, self.const[:, None]], axis=1
        ).astype(np.uint8).tobytes()
        return head + body

    @classmethod
    def deserialize(cls, data: bytes, offset: int = 0) -> tuple["QuadraticMap", int]:
        if offset + 12 > len(data):
            raise ValueError("truncated quadratic map header")
        q = int.from_bytes(data[offset : offset + 4], "little")
        n = int.from_bytes(data[offset + 4 : offset + 8], "little")
        m = int.from_bytes(data[offset + 8 : offset + 12], "little")
        offset += 12
        t = triangle_size(n)
        per_poly = t + n + 1
        end = offset + m * per_poly
        if end > len(data):
            raise ValueError("truncated quadratic map body")
        field = PrimeField(q)
        raw = np.frombuffer(data[offset:end], dtype=np.uint8).astype(np.int64).reshape(m, per_poly)
        return cls(field, n, raw[:, :t], raw[:, t : t + n], raw[:, t + n]), end


class AffineMap:
    """x -> M x + c with M invertible (witnessed at construction)."""

    def __init__(self, field: PrimeField, matrix: np.ndarray, offset: np.ndarray):
        matrix = np.asarray(matrix, dtype=np.int64) % field.q
        offset = np.asarray(offset, dtype=np.int64) % field.q
        if matrix.shape != (len(offset), len(offset)):
            raise ValueError("matrix/offset dimensions disagree")
        if not matrix_is_invertible(field, matrix):
            raise ValueError("affine map matrix is singular")
        self.field = field
        self.matrix = matrix
        self.offset = offset

    @property
    def dim(self) -> int:
        return len(self.offset)

    @classmethod
    def random(cls, field: PrimeField, dim: int, rng: np.random.Generator) -> "AffineMap":
        from .gf import random_invertible_matrix
        return cls(field, random_invertible_matrix(field, dim, rng),
                   field.random_vector(rng, dim))

    @classmethod
    def identity(cls, field: PrimeField, dim: int) -> "AffineMap":
        return cls(field, np.eye(dim, dtype=np.int64), np.zeros(dim, dtype=np.int64))

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.int64)
        if x.shape != (self.dim,):
            raise ValueError(f"input has shape {x.shape}, expected ({self.dim},)")
        return (self.matrix @ x + self.offset) % self.field.q

    def serialize(self) -> bytes:
        return (self.dim.to_bytes(4, "little")
                + self.matrix.astype(np.uint8).tobytes()
                + self.offset.astype(np.uint8).tobytes())

    @classmethod
    def deserialize(cls, field: PrimeField, data: bytes, offset: int = 0) -> tuple["AffineMap", int]:
        if offset + 4 > len(data):
            raise ValueError("truncated affine map header")
        dim = int.from_bytes(data[offset : offset + 4], "little")
        offset += 4
        need = dim * dim + dim
        if offset + need > len(data):
            raise ValueError("truncated affine map body")
        raw = np.frombuffer(data[offset : offset + need], dtype=np.uint8).astype(np.int64)
        return cls(field, raw[: dim * dim].reshape(dim, dim), raw[dim * dim :]), offset + need


def invert_affine(a: AffineMap, y: np.ndarray) -> np.ndarray:
    """Solve A(x) = y; always succeeds since invertibility is a type invariant."""
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (a.dim,):
        raise ValueError(f"input has shape {y.shape}, expected ({a.dim},)")
    x = solve_linear(a.field, a.matrix, (y - a.offset) % a.field.q)
    if x is None:
        raise RuntimeError("affine map matrix lost invertibility")  # unreachable
    return x


class UovCentralMap(QuadraticMap):
    """Central map with vinegar variables first and no oil*oil monomials.

    Fixing the v vinegar values reduces each polynomial to a linear
    expression in the o oil variables, so inversion is a linear solve.
    """

    def __init__(self, field: PrimeField, oil: int, vinegar: int, quad, lin, const):
        super().__init__(field, oil + vinegar, quad, lin, const)
        self.oil = oil
        self.vinegar = vinegar
        if self.m != oil:
            raise ValueError("central map must have one polynomial per oil variable")
        i_idx, j_idx = triangle_indices(self.n)
        oil_oil = (i_idx >= vinegar) & (j_idx >= vinegar)
        if np.any(self.quad[:, oil_oil]):
            raise ValueError("central map contains oil*oil monomials")
        # positions of the vinegar*oil monomials, indexed [vinegar, oil]
        pos = {(int(i), int(j)): t for t, (i, j) in enumerate(zip(i_idx, j_idx))}
        self._vo_index = np.array(
            [[pos[(i, vinegar + j)] for j in range(oil)] for i in range(vinegar)],
            dtype=np.int64,
        ) if vinegar and oil else np.zeros((vinegar, oil), dtype=np.int64)

    @classmethod
    def random(cls, field: PrimeField, oil: int, vinegar: int,
               rng: np.random.Generator) -> "UovCentralMap":
        n = oil + vinegar
        t = triangle_size(n)
        quad = rng.integers(0, field.q, size=(oil, t), dtype=np.int64)
        i_idx, j_idx = triangle_indices(n)
        quad[:, (i_idx >= vinegar) & (j_idx >= vinegar)] = 0
        lin = rng.integers(0, field.q, size=(oil, n), dtype=np.int64)
        const = rng.integers(0, field.q, size=oil, dtype=np.int64)
        return cls(field, oil, vinegar, quad, lin, const)

    def oil_system(self, vin: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Linear system (A, c) with F(vin, oil) = A @ oil + c."""
        q = self.field.q
        a = (np.tensordot(self.quad[:, self._vo_index], vin, axes=([1], [0]))
             + self.lin[:, self.vinegar:]) % q
        c = self.evaluate(np.concatenate([vin, np.zeros(self.oil, dtype=np.int64)]))
        return a, c

    def serialize(self) -> bytes:
        return (self.oil.to_bytes(4, "little") + self.vinegar.to_bytes(4, "little")
                + super().serialize())

    @classmethod
    def deserialize_central(cls, data: bytes, offset: int = 0) -> tuple["UovCentralMap", int]:
        if offset + 8 > len(data):
            raise ValueError("truncated central map header")
        oil = int.from_bytes(data[offset : offset + 4], "little")
        vinegar = int.from_bytes(data[offset + 4 : offset + 8], "little")
        qmap, end = QuadraticMap.deserialize(data, offset + 8)
        return cls(qmap.field, oil, vinegar, qmap.quad, qmap.lin, qmap.const), end


def invert_central(f: UovCentralMap, target: np.ndarray, rng: np.random.Generator,
                   max_attempts: int = 100):
    """Find z with F(z) = target, or None after max_attempts singular draws.

    Samples vinegar values, solves the induced oil system, and retries
    with fresh vinegar whenever the system is singular.
    """
    target = np.asarray(target, dtype=np.int64)
    if target.shape != (f.oil,):
        raise ValueError(f"target has shape {target.shape}, expected ({f.oil},)")
    q = f.field.q
    for _ in range(max_attempts):
        vin = f.field.random_vector(rng, f.vinegar)
        a, c = f.oil_system(vin)
        oil = solve_linear(f.field, a, (target - c) % q)
        if oil is not None:
            return np.concatenate([vin, oil])
    return None


def compose_public(s: AffineMap, f: UovCentralMap, t: AffineMap) -> QuadraticMap:
    """Explicit quadratic-coefficient expansion of x -> S(F(T(x))).

    The affine inner map is substituted symbolically into each monomial:
    with Q the (upper-triangular) quadratic matrix of a central
    polynomial, the composed quadratic part is M_T^t Q M_T, the linear
    part picks up c_T^t (Q + Q^t) M_T, and S recombines the results.
    """
    if t.dim != f.n or s.dim != f.m:
        raise ValueError("composition dimensions do not chain")
    field = f.field
    q = field.q
    n, m = f.n, f.m
    i_idx, j_idx = triangle_indices(n)

    # dense upper-triangular quadratic matrices, one per polynomial
    dense = np.zeros((m, n, n), dtype=np.int64)
    dense[:, i_idx, j_idx] = f.quad

    mt, ct = t.matrix, t.offset
    inner = np.matmul(dense, mt) % q                      # Q M_T
    quad_full = np.matmul(mt.T[None, :, :], inner) % q    # M_T^t Q M_T
    lin_from_quad = (ct @ ((dense + dense.transpose(0, 2, 1)) % q) @ mt) % q
    const_from_quad = (ct @ dense @ ct) % q

    new_quad_dense = quad_full
    new_lin = (lin_from_quad + f.lin @ mt) % q
    new_const = (const_from_quad + f.lin @ ct + f.const) % q

    # back to canonical upper-triangular storage: fold the strictly lower part
    folded = new_quad_dense + new_quad_dense.transpose(0, 2, 1)
    tri = np.where(i_idx == j_idx,
                   new_quad_dense[:, i_idx, j_idx],
                   folded[:, i_idx, j_idx]) % q

    ms, cs = s.matrix, s.offset
    return QuadraticMap(field, n,
                        (ms @ tri) % q,
                        (ms @ new_lin) % q,
                        (ms @ new_const + cs) % q)


def invert_public(s: AffineMap, f: UovCentralMap, t: AffineMap, target: np.ndarray,
                  rng: np.random.Generator):
    """Preimage of target under S . F . T, or None on central inversion failure."""
    y = invert_affine(s, target)
    z = invert_central(f, y, rng)
    if z is None:
        return None
    return invert_affine(t, z)
