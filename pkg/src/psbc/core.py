"""Bistable reaction term, hyperparameters, and weight parameterization.

The trainable coefficients of the classifier live in a low-dimensional space
and are lifted to feature space through a basis matrix; blocks of consecutive
layers may share one stored weight group.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .errors import ConfigurationError, DimensionError

NEUMANN = "neumann"
PERIODIC = "periodic"
SUBORDINATE = "subordinate"
NON_SUBORDINATE = "nonsubordinate"

CANONICAL = "canonical"
PCA = "pca"
IDENTITY = "identity"


def reaction(u, w):
    """Bistable cubic u*(1-u)*(u-w); roots at 0, 1 and the threshold w."""
    return u * (1.0 - u) * (u - w)


def reaction_du(u, w):
    """Partial derivative of the cubic in u: -3u^2 + 2(1+w)u - w."""
    return -3.0 * u * u + 2.0 * (1.0 + w) * u - w


def reaction_dw(u, w):
    """Partial derivative of the cubic in the threshold: -u*(1-u)."""
    return -u * (1.0 - u)


@dataclass(frozen=True)
class Hyperparameters:
    """Shape and scheme parameters of one classifier instance.

    ``dt_u``/``dt_p`` are the current time steps and ``dt_star`` the common
    ceiling they are clamped to whenever the step-size rule re-tightens them.
    """

    n_t: int
    n_u: int
    n_pt: int
    eps: float = 0.0
    dt_u: float = 0.1
    dt_p: float = 0.1
    dt_star: float | None = None
    shared_k: int = 1
    bc: str = NEUMANN
    subordination: str = NON_SUBORDINATE

    def __post_init__(self):
        if self.dt_star is None:
            object.__setattr__(self, "dt_star", max(self.dt_u, self.dt_p))
        if self.n_t < 1 or self.n_u < 1:
            raise ConfigurationError(f"n_t={self.n_t}, n_u={self.n_u} must be positive")
        if not 1 <= self.n_pt <= self.n_u:
            raise ConfigurationError(f"n_pt={self.n_pt} outside 1..n_u={self.n_u}")
        if not 1 <= self.shared_k <= self.n_t:
            raise ConfigurationError(f"shared_k={self.shared_k} outside 1..n_t={self.n_t}")
        if self.eps < 0:
            raise ConfigurationError("eps must be non-negative")
        if self.dt_u <= 0 or self.dt_p <= 0 or self.dt_star <= 0:
            raise ConfigurationError("time steps must be positive")
        if self.dt_u > self.dt_star + 1e-15 or self.dt_p > self.dt_star + 1e-15:
            raise ConfigurationError("dt_u and dt_p may not exceed dt_star")
        if self.bc not in (NEUMANN, PERIODIC):
            raise ConfigurationError(f"unknown boundary condition {self.bc!r}")
        if self.bc == PERIODIC and self.n_u < 3:
            raise ConfigurationError("periodic boundary conditions require n_u >= 3")
        if self.subordination not in (SUBORDINATE, NON_SUBORDINATE):
            raise ConfigurationError(f"unknown subordination {self.subordination!r}")

    @property
    def n_p(self) -> int:
        """Phase dimension: one scalar, or one entry per basis block."""
        return self.n_pt if self.subordination == SUBORDINATE else 1

    @property
    def n_groups(self) -> int:
        """Number of stored weight groups after layer sharing."""
        return -(-self.n_t // self.shared_k)

    def with_dt(self, dt_u: float, dt_p: float) -> "Hyperparameters":
        return replace(self, dt_u=dt_u, dt_p=dt_p)


@dataclass(frozen=True)
class BasisMatrix:
    """Full-column-rank lift from stored weights to per-feature coefficients.

    ``entries`` is the dense n_u x n_pt matrix; it is ``None`` only for the
    identity kind, which is never materialized.
    """

    entries: np.ndarray | None
    kind: str
    n_rows: int = field(default=0)

    def __post_init__(self):
        if self.kind == IDENTITY:
            if self.n_rows < 1:
                raise ConfigurationError("identity basis needs an explicit size")
            return
        e = np.asarray(self.entries, dtype=np.float64)
        if e.ndim != 2:
            raise DimensionError("basis entries must be a 2-d matrix")
        object.__setattr__(self, "entries", e)
        object.__setattr__(self, "n_rows", e.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        if self.kind == IDENTITY:
            return (self.n_rows, self.n_rows)
        return self.entries.shape

    @cached_property
    def _blocks(self) -> tuple[np.ndarray, np.ndarray] | None:
        """(block_starts, feature_to_block) when the columns are disjoint
        consecutive indicator blocks; None otherwise."""
        if self.kind != CANONICAL:
            return None
        n_u, n_pt = self.entries.shape
        feature_to_block = np.argmax(self.entries, axis=1)
        starts = np.flatnonzero(np.diff(feature_to_block, prepend=-1))
        if len(starts) != n_pt:
            return None
        return starts, feature_to_block


def canonical_basis(n_u: int, n_pt: int) -> BasisMatrix:
    """Indicator-block basis: consecutive index blocks partition the features.

    Blocks are filled greedily from the smallest indices; when n_pt does not
    divide n_u the first (n_u mod n_pt) blocks take the extra index.
    """
    if not 1 <= n_pt <= n_u:
        raise DimensionError(f"need 1 <= n_pt <= n_u, got n_pt={n_pt}, n_u={n_u}")
    q, r = divmod(n_u, n_pt)
    sizes = [q + 1] * r + [q] * (n_pt - r)
    entries = np.zeros((n_u, n_pt))
    row = 0
    for j, size in enumerate(sizes):
        entries[row : row + size, j] = 1.0
        row += size
    return BasisMatrix(entries, CANONICAL)


def identity_basis(n: int) -> BasisMatrix:
    """Identity lift; only the size is stored."""
    return BasisMatrix(None, IDENTITY, n_rows=n)


def apply_basis(basis: BasisMatrix, w: np.ndarray) -> np.ndarray:
    """Lift stored weights: B @ w.

    Accepts a single weight vector or a stack with the vector on the last
    axis.  For canonical bases the sup norm is preserved exactly.
    """
    w = np.asarray(w, dtype=np.float64)
    if basis.kind == IDENTITY:
        if w.shape[-1] != basis.n_rows:
            raise DimensionError(f"expected {basis.n_rows} weights, got {w.shape[-1]}")
        return w
    n_u, n_pt = basis.entries.shape
    if w.shape[-1] != n_pt:
        raise DimensionError(f"expected {n_pt} weights, got {w.shape[-1]}")
    blocks = basis._blocks
    if blocks is not None:
        _, feature_to_block = blocks
        return w[..., feature_to_block]
    return w @ basis.entries.T


def basis_grad_pullback(basis: BasisMatrix, g_alpha: np.ndarray) -> np.ndarray:
    """Adjoint of apply_basis: B^T @ g, the chain rule through the lift."""
    g_alpha = np.asarray(g_alpha, dtype=np.float64)
    if basis.kind == IDENTITY:
        if g_alpha.shape[-1] != basis.n_rows:
            raise DimensionError(f"expected {basis.n_rows} entries, got {g_alpha.shape[-1]}")
        return g_alpha
    n_u, _ = basis.entries.shape
    if g_alpha.shape[-1] != n_u:
        raise DimensionError(f"expected {n_u} entries, got {g_alpha.shape[-1]}")
    blocks = basis._blocks
    if blocks is not None:
        starts, _ = blocks
        return np.add.reduceat(g_alpha, starts, axis=-1)
    return g_alpha @ basis.entries


@dataclass(frozen=True)
class WeightStack:
    """Stored weight groups: one (n_pt,) row and one (n_p,) row per group."""

    w_u: np.ndarray
    w_p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w_u", np.atleast_2d(np.asarray(self.w_u, dtype=np.float64)))
        object.__setattr__(self, "w_p", np.atleast_2d(np.asarray(self.w_p, dtype=np.float64)))
        if self.w_u.shape[0] != self.w_p.shape[0]:
            raise DimensionError("w_u and w_p must hold the same number of groups")

    @property
    def n_groups(self) -> int:
        return self.w_u.shape[0]

    @property
    def n_p(self) -> int:
        return self.w_p.shape[1]

    def copy(self) -> "WeightStack":
        return WeightStack(self.w_u.copy(), self.w_p.copy())


def layer_groups(n_t: int, shared_k: int) -> np.ndarray:
    """Group index of each layer: layer n belongs to group floor(n/shared_k)."""
    return np.arange(n_t) // shared_k


def expand_shared(stack: WeightStack, hp: Hyperparameters) -> tuple[np.ndarray, np.ndarray]:
    """Repeat each stored group over its shared_k consecutive layers.

    Returns per-layer arrays of shapes (n_t, n_pt) and (n_t, n_p).
    """
    if stack.n_groups != hp.n_groups:
        raise DimensionError(f"stack holds {stack.n_groups} groups, expected {hp.n_groups}")
    if stack.w_u.shape[1] != hp.n_pt or stack.n_p != hp.n_p:
        raise DimensionError("stored group width inconsistent with hyperparameters")
    idx = layer_groups(hp.n_t, hp.shared_k)
    return stack.w_u[idx], stack.w_p[idx]


def contract_shared(per_layer: np.ndarray, n_t: int, shared_k: int) -> np.ndarray:
    """Adjoint of the expansion: sum per-layer rows into their group slot."""
    per_layer = np.asarray(per_layer, dtype=np.float64)
    if per_layer.shape[0] != n_t:
        raise DimensionError(f"expected {n_t} layer rows, got {per_layer.shape[0]}")
    n_groups = -(-n_t // shared_k)
    out = np.zeros((n_groups,) + per_layer.shape[1:])
    np.add.at(out, layer_groups(n_t, shared_k), per_layer)
    return out
