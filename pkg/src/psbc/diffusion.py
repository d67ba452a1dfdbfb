"""Discrete diffusion operator and the implicit solve (I - eps^2 D) u = r.

D is the three-point second-difference matrix closed with either reflecting
(Neumann) or wrapping (periodic) ghost values.  Its row sums vanish, so
I - eps^2 D is strictly diagonally dominant and the tridiagonal elimination
below never needs pivoting.  Factorizations are cached on the operator: the
stencil depends only on (n, bc, eps).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import NEUMANN, PERIODIC
from .errors import ConfigurationError, DimensionError


@dataclass(frozen=True)
class _ThomasFactors:
    """LU factors of a tridiagonal matrix (no pivoting)."""

    sub_mul: np.ndarray   # multipliers eliminating the sub-diagonal
    diag: np.ndarray      # pivots after elimination
    sup: np.ndarray       # unchanged super-diagonal


def _thomas_factor(sub: np.ndarray, diag: np.ndarray, sup: np.ndarray) -> _ThomasFactors:
    n = diag.shape[0]
    piv = diag.astype(np.float64).copy()
    mul = np.zeros(max(n - 1, 0))
    for i in range(1, n):
        mul[i - 1] = sub[i - 1] / piv[i - 1]
        piv[i] = diag[i] - mul[i - 1] * sup[i - 1]
    return _ThomasFactors(mul, piv, np.asarray(sup, dtype=np.float64))


def _thomas_solve(f: _ThomasFactors, rhs: np.ndarray) -> np.ndarray:
    """Solve along the last axis; rhs may carry leading batch axes."""
    x = np.array(rhs, dtype=np.float64)
    n = f.diag.shape[0]
    for i in range(1, n):
        x[..., i] -= f.sub_mul[i - 1] * x[..., i - 1]
    x[..., n - 1] /= f.diag[n - 1]
    for i in range(n - 2, -1, -1):
        x[..., i] = (x[..., i] - f.sup[i] * x[..., i + 1]) / f.diag[i]
    return x


@dataclass(frozen=True)
class DiffusionOperator:
    """Boundary-condition-tagged diffusion stencil with cached solvers."""

    n: int
    bc: str
    eps2: float
    _solver: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise ConfigurationError(f"dimension must be at least 1, got {self.n}")
        if self.bc not in (NEUMANN, PERIODIC):
            raise ConfigurationError(f"unknown boundary condition {self.bc!r}")
        if self.bc == PERIODIC and self.n < 3:
            raise ConfigurationError("periodic boundary conditions require n >= 3")
        if self.eps2 > 0 and self.n > 1:
            self._solver.update(_prepare_solvers(self.n, self.bc, self.eps2))


def _neumann_l_diagonals(n: int, eps2: float):
    diag = np.full(n, 1.0 + 2.0 * eps2)
    sup = np.full(n - 1, -eps2)
    sub = np.full(n - 1, -eps2)
    sup[0] = -2.0 * eps2
    sub[-1] = -2.0 * eps2
    return sub, diag, sup


def _prepare_solvers(n: int, bc: str, eps2: float) -> dict:
    if bc == NEUMANN:
        sub, diag, sup = _neumann_l_diagonals(n, eps2)
        return {
            "plain": _thomas_factor(sub, diag, sup),
            # the transpose swaps the sub- and super-diagonals
            "transpose": _thomas_factor(sup, diag, sub),
        }
    # Periodic: corner entries -eps2 handled by a rank-one correction
    # (Sherman-Morrison); the circulant L is symmetric, so one solver serves
    # both the plain and the transpose solve.
    diag = np.full(n, 1.0 + 2.0 * eps2)
    off = np.full(n - 1, -eps2)
    gamma = -diag[0]
    diag_mod = diag.copy()
    diag_mod[0] -= gamma
    diag_mod[-1] -= eps2 * eps2 / gamma
    factors = _thomas_factor(off, diag_mod, off)
    u = np.zeros(n)
    u[0] = gamma
    u[-1] = -eps2
    v = np.zeros(n)
    v[0] = 1.0
    v[-1] = -eps2 / gamma
    z = _thomas_solve(factors, u)
    return {"cyclic": (factors, v, z, 1.0 + v @ z)}


def build(n: int, bc: str, eps: float) -> DiffusionOperator:
    """Assemble the operator for dimension n; invertible for every eps >= 0."""
    return DiffusionOperator(n, bc, float(eps) * float(eps))


def apply_d(op: DiffusionOperator, v: np.ndarray) -> np.ndarray:
    """Apply the second-difference stencil D along the last axis."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != op.n:
        raise DimensionError(f"expected vectors of length {op.n}, got {v.shape[-1]}")
    if op.n == 1:
        return np.zeros_like(v)
    out = np.empty_like(v)
    if op.bc == NEUMANN:
        out[..., 0] = 2.0 * (v[..., 1] - v[..., 0])
        out[..., -1] = 2.0 * (v[..., -2] - v[..., -1])
        if op.n > 2:
            out[..., 1:-1] = v[..., :-2] - 2.0 * v[..., 1:-1] + v[..., 2:]
    else:
        out[...] = np.roll(v, 1, axis=-1) - 2.0 * v + np.roll(v, -1, axis=-1)
    return out


def solve_l(op: DiffusionOperator, rhs: np.ndarray) -> np.ndarray:
    """Solve (I - eps^2 D) u = rhs along the last axis."""
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape[-1] != op.n:
        raise DimensionError(f"expected vectors of length {op.n}, got {rhs.shape[-1]}")
    if op.eps2 == 0.0 or op.n == 1:
        return np.array(rhs)
    if op.bc == NEUMANN:
        return _thomas_solve(op._solver["plain"], rhs)
    return _cyclic_solve(op, rhs)


def solve_l_transpose(op: DiffusionOperator, rhs: np.ndarray) -> np.ndarray:
    """Solve (I - eps^2 D)^T u = rhs; distinct from solve_l only for Neumann."""
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape[-1] != op.n:
        raise DimensionError(f"expected vectors of length {op.n}, got {rhs.shape[-1]}")
    if op.eps2 == 0.0 or op.n == 1:
        return np.array(rhs)
    if op.bc == NEUMANN:
        return _thomas_solve(op._solver["transpose"], rhs)
    return _cyclic_solve(op, rhs)


def _cyclic_solve(op: DiffusionOperator, rhs: np.ndarray) -> np.ndarray:
    factors, v, z, denom = op._solver["cyclic"]
    y = _thomas_solve(factors, rhs)
    vy = y[..., 0] * v[0] + y[..., -1] * v[-1]
    return y - z * (vy / denom)[..., None]


def neighbor_average(v: np.ndarray, j: int, bc: str) -> float:
    """Average of the stencil neighbors of entry j (0-based index).

    Interior entries average their two neighbors; Neumann boundary entries
    take the single reflected neighbor, periodic ones wrap around.
    """
    v = np.asarray(v, dtype=np.float64)
    n = v.shape[-1]
    if not 0 <= j < n:
        raise IndexError(f"index {j} out of range for length {n}")
    if n == 1:
        return float(v[..., 0])
    if bc == NEUMANN:
        if j == 0:
            return float(v[1])
        if j == n - 1:
            return float(v[n - 2])
        return float(0.5 * (v[j - 1] + v[j + 1]))
    if bc == PERIODIC:
        return float(0.5 * (v[(j - 1) % n] + v[(j + 1) % n]))
    raise ConfigurationError(f"unknown boundary condition {bc!r}")
