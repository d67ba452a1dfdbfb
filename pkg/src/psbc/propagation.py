"""Coupled forward propagation, discriminant, and invariant-region machinery.

Features evolve by a semi-implicit step through the diffusion solve while a
companion phase variable evolves by an explicit Euler step of the same cubic;
the phase selects, per feature block, whether the final state is read as-is
or flipped before the mean-based discriminant.
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass, replace

import numpy as np

from . import diffusion as diff
from .core import (
    CANONICAL,
    NON_SUBORDINATE,
    SUBORDINATE,
    BasisMatrix,
    Hyperparameters,
    WeightStack,
    apply_basis,
    canonical_basis,
    expand_shared,
    reaction,
)
from .errors import ConfigurationError, DimensionError, DomainError, PropagationError

SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class PsbcModel:
    """One classifier instance: hyperparameters, bases, weights, diffusion."""

    hp: Hyperparameters
    basis_u: BasisMatrix
    basis_sub: BasisMatrix
    weights: WeightStack
    diffusion: diff.DiffusionOperator

    def __post_init__(self):
        hp = self.hp
        if self.basis_u.shape != (hp.n_u, hp.n_pt):
            raise DimensionError(f"basis_u shape {self.basis_u.shape} != ({hp.n_u}, {hp.n_pt})")
        expected_sub = (hp.n_u, hp.n_p)
        if self.basis_sub.shape != expected_sub:
            raise DimensionError(f"basis_sub shape {self.basis_sub.shape} != {expected_sub}")
        if self.weights.n_groups != hp.n_groups:
            raise DimensionError(
                f"{self.weights.n_groups} weight groups, expected {hp.n_groups}"
            )
        if self.weights.w_u.shape[1] != hp.n_pt or self.weights.n_p != hp.n_p:
            raise DimensionError("weight group widths inconsistent with hyperparameters")
        if self.diffusion.n != hp.n_u or self.diffusion.bc != hp.bc:
            raise ConfigurationError("diffusion operator inconsistent with hyperparameters")
        if not (np.isfinite(self.weights.w_u).all() and np.isfinite(self.weights.w_p).all()):
            raise DomainError("weights must be finite")

    def with_weights(self, weights: WeightStack) -> "PsbcModel":
        return replace(self, weights=weights)

    def with_dt(self, dt_u: float, dt_p: float) -> "PsbcModel":
        return replace(self, hp=self.hp.with_dt(dt_u, dt_p))


def new_model(
    hp: Hyperparameters,
    weights: WeightStack,
    basis_u: BasisMatrix | None = None,
) -> PsbcModel:
    """Assemble a model, defaulting to the canonical block basis.

    The phase lift is the all-ones column for a scalar phase and the
    canonical block basis when the phase is subordinate to the blocks.
    """
    if basis_u is None:
        basis_u = canonical_basis(hp.n_u, hp.n_pt)
    basis_sub = canonical_basis(hp.n_u, hp.n_p if hp.subordination == SUBORDINATE else 1)
    return PsbcModel(hp, basis_u, basis_sub, weights, diff.build(hp.n_u, hp.bc, hp.eps))


@dataclass(frozen=True)
class Trajectory:
    """Recorded states of one forward pass, layer 0 being the input."""

    u_layers: np.ndarray  # (n_t + 1, n_u)
    p_layers: np.ndarray  # (n_t + 1, n_p)


@dataclass(frozen=True)
class InvariantBox:
    """Interval ends and spill margins bounding a whole forward pass."""

    l_alpha: float
    r_alpha: float
    l_beta: float
    r_beta: float
    m_alpha: float
    m_beta: float


def _check_inputs(x: np.ndarray, n_u: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != n_u:
        raise DimensionError(f"expected {n_u} features, got {x.shape[-1]}")
    if not np.isfinite(x).all():
        raise DomainError("input features must be finite")
    if (x < 0.0).any() or (x > 1.0).any():
        raise DomainError("input features must lie in [0, 1]")
    return x


def _layer_coefficients(model: PsbcModel) -> tuple[np.ndarray, np.ndarray]:
    """Per-layer feature coefficients (n_t, n_u) and phase thresholds (n_t, n_p)."""
    w_u_layers, w_p_layers = expand_shared(model.weights, model.hp)
    return apply_basis(model.basis_u, w_u_layers), w_p_layers


def _propagate(model: PsbcModel, x: np.ndarray, record: bool):
    """Run the scheme on a batch (N, n_u); returns all layers or final states."""
    hp = model.hp
    alphas, betas = _layer_coefficients(model)
    u = np.array(x)
    p = np.full(x.shape[:-1] + (hp.n_p,), 0.5)
    if record:
        u_layers = np.empty((hp.n_t + 1,) + u.shape)
        p_layers = np.empty((hp.n_t + 1,) + p.shape)
        u_layers[0], p_layers[0] = u, p
    for n in range(hp.n_t):
        u = diff.solve_l(model.diffusion, u + hp.dt_u * reaction(u, alphas[n]))
        p = p + hp.dt_p * reaction(p, betas[n])
        if not (np.isfinite(u).all() and np.isfinite(p).all()):
            raise PropagationError(f"non-finite state after layer {n + 1}")
        if record:
            u_layers[n + 1], p_layers[n + 1] = u, p
    if record:
        return u_layers, p_layers
    return u, p


def forward(model: PsbcModel, x: np.ndarray) -> Trajectory:
    """Propagate one input through all layers, recording every state."""
    x = _check_inputs(x, model.hp.n_u)
    if x.ndim != 1:
        raise DimensionError("forward takes a single feature vector")
    u_layers, p_layers = _propagate(model, x, record=True)
    return Trajectory(u_layers, p_layers)


def phase_lift(p: np.ndarray, basis_sub: BasisMatrix) -> np.ndarray:
    """Lift the phase onto feature space: block m reads its block's entry."""
    return apply_basis(basis_sub, np.asarray(p, dtype=np.float64))


def flip_map(u: np.ndarray, p_tilde: np.ndarray) -> np.ndarray:
    """Homotopy between identity and flip: (1-p)*u + p*(1-u), componentwise."""
    u = np.asarray(u, dtype=np.float64)
    p_tilde = np.asarray(p_tilde, dtype=np.float64)
    return (1.0 - p_tilde) * u + p_tilde * (1.0 - u)


def _head_means(model: PsbcModel, u_final: np.ndarray, p_final: np.ndarray) -> np.ndarray:
    """Mean of the flipped final state, one scalar per sample."""
    lifted = phase_lift(p_final, model.basis_sub)
    return np.mean(flip_map(u_final, lifted), axis=-1)


def _batch_arrays(batch) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(batch, tuple) and len(batch) == 2:
        xs, ys = batch
    else:
        pairs = list(batch)
        if not pairs:
            raise DomainError("empty batch")
        xs = [x for x, _ in pairs]
        ys = [y for _, y in pairs]
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys)
    if xs.ndim != 2 or xs.shape[0] != ys.shape[0]:
        raise DimensionError("batch features and labels do not conform")
    if xs.shape[0] == 0:
        raise DomainError("empty batch")
    if not np.isin(ys, (0, 1)).all():
        raise DomainError("labels must be 0 or 1")
    return xs, ys.astype(np.float64)


def cost(model: PsbcModel, batch) -> float:
    """Half mean squared distance of the flipped-mean readout to the labels.

    Accepts a sequence of (x, y) pairs or a (features, labels) array pair.
    """
    xs, ys = _batch_arrays(batch)
    xs = _check_inputs(xs, model.hp.n_u)
    u, p = _propagate(model, xs, record=False)
    means = _head_means(model, u, p)
    return float(np.sum((means - ys) ** 2) / (2.0 * xs.shape[0]))


def predict(model: PsbcModel, x: np.ndarray) -> int:
    """Label 1 when the readout mean is at least as close to 1 as to 0."""
    x = _check_inputs(x, model.hp.n_u)
    u, p = _propagate(model, x, record=False)
    m = _head_means(model, u, p)
    return int(np.abs(m - 1.0) <= np.abs(m))


def predict_batch(model: PsbcModel, xs: np.ndarray) -> np.ndarray:
    """Vectorized predict over rows of xs."""
    xs = _check_inputs(np.atleast_2d(xs), model.hp.n_u)
    u, p = _propagate(model, xs, record=False)
    m = _head_means(model, u, p)
    return (np.abs(m - 1.0) <= np.abs(m)).astype(np.int64)


def _hull(entries: np.ndarray) -> tuple[float, float]:
    """Ends of the smallest interval containing {0, 1} and every entry."""
    entries = np.asarray(entries, dtype=np.float64)
    if not np.isfinite(entries).all():
        raise DomainError("weights must be finite")
    return float(min(0.0, entries.min())), float(max(1.0, entries.max()))


def invariant_box(alpha_layers: np.ndarray, beta_layers: np.ndarray) -> InvariantBox:
    """Interval hulls of the per-layer coefficients with cubic spill margins."""
    l_a, r_a = _hull(alpha_layers)
    l_b, r_b = _hull(beta_layers)
    return InvariantBox(
        l_a, r_a, l_b, r_b,
        (abs(l_a) + abs(r_a)) ** 3,
        (abs(l_b) + abs(r_b)) ** 3,
    )


def check_invariant(
    traj: Trajectory, box: InvariantBox, dt_u: float, dt_p: float, tol: float = 1e-12
) -> bool:
    """True when every recorded state stays inside the spilled box."""
    u, p = traj.u_layers, traj.p_layers
    ok_u = (u >= box.l_alpha - dt_u * box.m_alpha - tol).all() and (
        u <= box.r_alpha + dt_u * box.m_alpha + tol
    ).all()
    ok_p = (p >= box.l_beta - dt_p * box.m_beta - tol).all() and (
        p <= box.r_beta + dt_p * box.m_beta + tol
    ).all()
    return bool(ok_u and ok_p)


def step_bound(diameter: float) -> float:
    """Largest step the invariant-region condition allows for a given hull."""
    return 1.0 / (SQRT3 * diameter * diameter)


def model_diameters(model: PsbcModel) -> tuple[float, float]:
    """Hull diameters of the materialized feature coefficients and thresholds.

    Group entries repeat over shared layers, so the hull over stored groups
    equals the hull over all layers.
    """
    alphas = apply_basis(model.basis_u, model.weights.w_u)
    l_a, r_a = _hull(alphas)
    l_b, r_b = _hull(model.weights.w_p)
    return r_a - l_a, r_b - l_b


def irec_dt(
    model: PsbcModel, dt_star: float, dt_star_p: float | None = None
) -> tuple[float, float]:
    """Step sizes obeying the invariant-region condition, capped at the ceiling.

    A second ceiling may be given when the two equations were initialized
    with different steps.
    """
    if dt_star_p is None:
        dt_star_p = dt_star
    diam_a, diam_b = model_diameters(model)
    return min(dt_star, step_bound(diam_a)), min(dt_star_p, step_bound(diam_b))


def allen_cahn_simulate(alpha_profile, u0: np.ndarray, hp: Hyperparameters) -> Trajectory:
    """Run the feature scheme with a fixed spatial threshold profile.

    ``alpha_profile`` is evaluated at the cell centers (m - 1/2)/n_u of a
    uniform grid on [0, 1]; the phase threshold is pinned at 1/2 so the
    companion variable stays put and the readout is the raw state.
    """
    u0 = _check_inputs(np.asarray(u0, dtype=np.float64), hp.n_u)
    x_grid = cell_centers(hp.n_u)
    alpha = np.broadcast_to(np.asarray(alpha_profile(x_grid), dtype=np.float64), (hp.n_u,))
    if not np.isfinite(alpha).all():
        raise DomainError("threshold profile must be finite on the grid")
    sim_hp = Hyperparameters(
        n_t=hp.n_t,
        n_u=hp.n_u,
        n_pt=hp.n_u,
        eps=hp.eps,
        dt_u=hp.dt_u,
        dt_p=hp.dt_p,
        dt_star=max(hp.dt_star, hp.dt_u, hp.dt_p),
        shared_k=hp.n_t,
        bc=hp.bc,
        subordination=NON_SUBORDINATE,
    )
    weights = WeightStack(alpha[None, :], np.array([[0.5]]))
    return forward(new_model(sim_hp, weights), u0)


def cell_centers(n_u: int) -> np.ndarray:
    """Midpoints (m - 1/2)/n_u of the uniform grid on [0, 1]."""
    return (np.arange(1, n_u + 1) - 0.5) / n_u


def write_trajectory_csv(traj: Trajectory, path: str) -> None:
    """One row per layer, comma-separated, 17 significant digits."""
    write_matrix_csv(traj.u_layers, path)


def write_matrix_csv(rows: np.ndarray, path: str) -> None:
    """Plain-text matrix dump, written atomically (temp file then rename)."""
    rows = np.atleast_2d(np.asarray(rows))
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            for row in rows:
                fh.write(",".join(f"{v:.17g}" for v in row))
                fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
