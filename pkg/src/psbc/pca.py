"""Principal-component basis for the weight lift.

An alternative to the canonical block basis: columns are the leading
principal axes of the training features, so the lifted coefficients move
along the data manifold instead of along disjoint index blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CANONICAL, PCA, BasisMatrix, apply_basis
from .errors import DimensionError, DomainError


@dataclass(frozen=True)
class PcaBasis:
    """Leading principal components with their centering mean and variances."""

    components: np.ndarray  # (n_u, n_pt), orthonormal columns
    mean: np.ndarray        # (n_u,)
    explained: np.ndarray   # (n_pt,), non-increasing


def pca_basis(train_features: np.ndarray, n_pt: int) -> PcaBasis:
    """Top-n_pt principal axes of the (centered) training features.

    Each column's sign is fixed so its largest-magnitude entry is positive,
    making the construction deterministic.
    """
    x = np.asarray(train_features, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError("training features must be a 2-d array")
    n_samples, n_u = x.shape
    if not 1 <= n_pt <= n_u:
        raise DimensionError(f"need 1 <= n_pt <= n_u, got n_pt={n_pt}, n_u={n_u}")
    if n_samples < n_pt:
        raise DomainError(f"need at least {n_pt} samples, got {n_samples}")
    mean = x.mean(axis=0)
    centered = x - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    tol = s[0] * max(n_samples, n_u) * np.finfo(np.float64).eps if s.size else 0.0
    rank = int(np.sum(s > tol))
    if rank < n_pt:
        raise DomainError(f"training features have rank {rank}, below n_pt={n_pt}")
    components = vt[:n_pt].T.copy()
    for j in range(n_pt):
        col = components[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            components[:, j] = -col
    explained = (s[:n_pt] ** 2) / max(n_samples - 1, 1)
    return PcaBasis(components, mean, explained)


def basis_from_pca(pca: PcaBasis) -> BasisMatrix:
    """Wrap the component matrix as a weight-lift basis."""
    return BasisMatrix(pca.components, PCA)


def irec_diameter_general(basis: BasisMatrix, weight_groups: np.ndarray) -> float:
    """Hull diameter of {0, 1} and the materialized coefficients B @ W.

    For the canonical block basis the lift only repeats stored entries, so
    the hull can be read off the weights directly.
    """
    groups = np.atleast_2d(np.asarray(weight_groups, dtype=np.float64))
    if basis.kind == CANONICAL:
        entries = groups
    else:
        entries = apply_basis(basis, groups)
    low = min(0.0, float(entries.min()))
    high = max(1.0, float(entries.max()))
    return high - low
