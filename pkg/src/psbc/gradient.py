"""Reverse-mode differentiation of the cost through the coupled scheme.

The adjoint of the implicit feature step runs the transpose solve; gradients
of layers that share a stored group are summed into that group's slot.  Time
steps are constants here: the step-size rule is applied between batches,
outside the differentiated graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffusion as diff
from .core import (
    WeightStack,
    basis_grad_pullback,
    layer_groups,
    reaction_du,
    reaction_dw,
)
from .errors import DimensionError, DomainError
from .propagation import (
    PsbcModel,
    Trajectory,
    _batch_arrays,
    _check_inputs,
    _layer_coefficients,
    _propagate,
    cost,
    phase_lift,
)


@dataclass(frozen=True)
class GradientStack:
    """Cost gradients with the exact layout of the stored weight groups."""

    g_w_u: np.ndarray
    g_w_p: np.ndarray


def _backward_arrays(
    model: PsbcModel, u_layers: np.ndarray, p_layers: np.ndarray, ys: np.ndarray
) -> GradientStack:
    """Summed per-sample adjoints; layer axes lead, batch axes follow."""
    hp = model.hp
    alphas, betas = _layer_coefficients(model)
    groups = layer_groups(hp.n_t, hp.shared_k)
    g_w_u = np.zeros((hp.n_groups, hp.n_pt))
    g_w_p = np.zeros((hp.n_groups, hp.n_p))

    u_final, p_final = u_layers[-1], p_layers[-1]
    lifted = phase_lift(p_final, model.basis_sub)
    means = np.mean(u_final + lifted * (1.0 - 2.0 * u_final), axis=-1)
    residual = (means - ys)[..., None]
    lam = residual * (1.0 - 2.0 * lifted) / hp.n_u
    kap = basis_grad_pullback(model.basis_sub, residual * (1.0 - 2.0 * u_final) / hp.n_u)

    for n in range(hp.n_t - 1, -1, -1):
        u_n, p_n = u_layers[n], p_layers[n]
        mu = diff.solve_l_transpose(model.diffusion, lam)
        g_alpha = hp.dt_u * reaction_dw(u_n, alphas[n]) * mu
        g_w_u[groups[n]] += _sum_samples(basis_grad_pullback(model.basis_u, g_alpha))
        lam = (1.0 + hp.dt_u * reaction_du(u_n, alphas[n])) * mu

        g_beta = hp.dt_p * reaction_dw(p_n, betas[n]) * kap
        g_w_p[groups[n]] += _sum_samples(g_beta)
        kap = (1.0 + hp.dt_p * reaction_du(p_n, betas[n])) * kap
    return GradientStack(g_w_u, g_w_p)


def _sum_samples(arr: np.ndarray) -> np.ndarray:
    """Collapse any leading batch axes, keeping the coefficient axis."""
    if arr.ndim == 1:
        return arr
    return arr.reshape(-1, arr.shape[-1]).sum(axis=0)


def backward(model: PsbcModel, traj: Trajectory, y: int) -> GradientStack:
    """Gradient of one sample's half-squared readout error."""
    if y not in (0, 1):
        raise DomainError(f"label must be 0 or 1, got {y!r}")
    if traj.u_layers.shape != (model.hp.n_t + 1, model.hp.n_u):
        raise DimensionError("trajectory shape inconsistent with model")
    return _backward_arrays(model, traj.u_layers, traj.p_layers, np.float64(y))


def batch_gradient(model: PsbcModel, batch) -> GradientStack:
    """Mean of the per-sample gradients, matching the cost's 1/(2 N) scale."""
    xs, ys = _batch_arrays(batch)
    xs = _check_inputs(xs, model.hp.n_u)
    u_layers, p_layers = _propagate(model, xs, record=True)
    g = _backward_arrays(model, u_layers, p_layers, ys)
    n = xs.shape[0]
    return GradientStack(g.g_w_u / n, g.g_w_p / n)


def cost_and_gradient(model: PsbcModel, xs: np.ndarray, ys: np.ndarray):
    """One shared forward pass for the batch cost and its gradient."""
    xs = _check_inputs(xs, model.hp.n_u)
    u_layers, p_layers = _propagate(model, xs, record=True)
    lifted = phase_lift(p_layers[-1], model.basis_sub)
    means = np.mean(u_layers[-1] + lifted * (1.0 - 2.0 * u_layers[-1]), axis=-1)
    n = xs.shape[0]
    value = float(np.sum((means - ys) ** 2) / (2.0 * n))
    g = _backward_arrays(model, u_layers, p_layers, ys)
    return value, GradientStack(g.g_w_u / n, g.g_w_p / n)


def finite_difference_gradient(model: PsbcModel, batch, h: float = 1e-6) -> GradientStack:
    """Central differences of the batch cost over the stored group weights.

    Independent of the adjoint path: every probe re-runs the forward pass
    with the time steps held fixed.
    """
    if h <= 0:
        raise DomainError("step h must be positive")
    xs, ys = _batch_arrays(batch)
    batch_pair = (xs, ys)

    def probe(stack: WeightStack) -> float:
        return cost(model.with_weights(stack), batch_pair)

    g_w_u = np.zeros_like(model.weights.w_u)
    g_w_p = np.zeros_like(model.weights.w_p)
    for arr, out in ((model.weights.w_u, g_w_u), (model.weights.w_p, g_w_p)):
        for idx in np.ndindex(arr.shape):
            plus = model.weights.copy()
            minus = model.weights.copy()
            target_plus = plus.w_u if arr is model.weights.w_u else plus.w_p
            target_minus = minus.w_u if arr is model.weights.w_u else minus.w_p
            target_plus[idx] += h
            target_minus[idx] -= h
            out[idx] = (probe(plus) - probe(minus)) / (2.0 * h)
    return GradientStack(g_w_u, g_w_p)
