"""Self-contained property suites: solver oracles, maximum principles,
invariant regions, gradient checks, and structural equivalences.

Each check returns a CheckResult so the suites can run under pytest or from
the command line.  Oracles here are deliberately independent of the library
paths they validate: dense solves use numpy's LU factorization and dense
matrices are assembled entry by entry from the stencil definition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import diffusion as diff
from .core import (
    NEUMANN,
    NON_SUBORDINATE,
    PERIODIC,
    SUBORDINATE,
    Hyperparameters,
    WeightStack,
    apply_basis,
    reaction,
    reaction_du,
    reaction_dw,
)
from .gradient import GradientStack, batch_gradient, finite_difference_gradient
from .propagation import (
    PsbcModel,
    allen_cahn_simulate,
    cell_centers,
    check_invariant,
    forward,
    invariant_box,
    irec_dt,
    new_model,
    phase_lift,
    step_bound,
)

SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def dense_diffusion_matrix(n: int, bc: str) -> np.ndarray:
    """Entry-by-entry stencil assembly, the oracle counterpart of apply_d."""
    d = np.zeros((n, n))
    if n == 1:
        return d
    for i in range(n):
        d[i, i] = -2.0
    if bc == NEUMANN:
        d[0, 1] = 2.0
        d[n - 1, n - 2] = 2.0
        for i in range(1, n - 1):
            d[i, i - 1] = 1.0
            d[i, i + 1] = 1.0
    else:
        for i in range(n):
            d[i, (i - 1) % n] += 1.0
            d[i, (i + 1) % n] += 1.0
    return d


def check_solver_oracle(seed: int = 1201, systems: int = 500, n_max: int = 256) -> CheckResult:
    """solve_l against dense LU on random systems, and L o solve = identity."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(systems):
        n = int(rng.integers(1, n_max + 1))
        bc = NEUMANN if k % 2 == 0 else PERIODIC
        if bc == PERIODIC and n < 3:
            n = 3
        eps = float(rng.choice([0.0, 1 / 16, 0.25, 0.5, 1.0, 2.0]))
        op = diff.build(n, bc, eps)
        rhs = rng.uniform(-5, 5, size=n)
        dense_l = np.eye(n) - op.eps2 * dense_diffusion_matrix(n, bc)
        expected = np.linalg.solve(dense_l, rhs)
        got = diff.solve_l(op, rhs)
        scale = max(1.0, float(np.abs(expected).max()))
        worst = max(worst, float(np.abs(got - expected).max()) / scale)
        residual = got - op.eps2 * diff.apply_d(op, got) - rhs
        worst = max(worst, float(np.abs(residual).max()) / max(1.0, float(np.abs(rhs).max())))
    passed = worst <= 1e-10
    return CheckResult("solver_oracle", passed, f"max relative error {worst:.3e} over {systems} systems")


def check_max_principle() -> CheckResult:
    """Operator norm, positive cone, zero row sums, and extremum signs."""
    rng = np.random.default_rng(77)
    failures = []
    for n in range(3, 65):
        for eps in (0.0, 1 / 16, 0.25, 1.0, 4.0):
            for bc in (NEUMANN, PERIODIC):
                op = diff.build(n, bc, eps)
                ones = np.ones(n)
                if np.abs(diff.apply_d(op, ones)).max() != 0.0:
                    failures.append(f"D@1 != 0 (n={n}, {bc})")
                    continue
                cols = diff.solve_l(op, np.eye(n))
                norm = float(np.abs(cols).sum(axis=0).max())
                if norm > 1.0 + 1e-12:
                    failures.append(f"|L^-1|_inf = {norm} (n={n}, {bc}, eps={eps})")
                vs = rng.uniform(0.0, 3.0, size=(100, n))
                sol = diff.solve_l(op, vs)
                if sol.min() < -1e-12:
                    failures.append(f"positive cone broken (n={n}, {bc}, eps={eps})")
                v = rng.uniform(-2.0, 2.0, size=n)
                dv = diff.apply_d(op, v)
                if dv[np.argmin(v)] < 0.0 or dv[np.argmax(v)] > 0.0:
                    failures.append(f"extremum sign broken (n={n}, {bc})")
    detail = "; ".join(failures[:4]) if failures else "n in 3..64, eps in {0,1/16,1/4,1,4}"
    return CheckResult("max_principle", not failures, detail)


def check_solve_apply_roundtrip() -> CheckResult:
    """L applied after solve_l reproduces the input up to 1e-10."""
    rng = np.random.default_rng(5)
    worst = 0.0
    for n in (2, 3, 17, 64, 256, 1024):
        for eps in (0.0, 1 / 16, 0.25, 0.5, 1.0):
            for bc in (NEUMANN, PERIODIC):
                if bc == PERIODIC and n < 3:
                    continue
                op = diff.build(n, bc, eps)
                rhs = rng.uniform(-3, 3, size=n)
                u = diff.solve_l(op, rhs)
                back = u - op.eps2 * diff.apply_d(op, u)
                worst = max(worst, float(np.abs(back - rhs).max()))
    return CheckResult("solve_apply_roundtrip", worst <= 1e-10, f"max defect {worst:.3e}")


def check_polynomial_lemma(samples: int = 100_000) -> CheckResult:
    """-z^4 + z^3 + 2z - 1 is non-negative on [1, 1 + 1/sqrt(3)]."""
    z = np.linspace(1.0, 1.0 + 1.0 / SQRT3, samples)
    p = -z**4 + z**3 + 2.0 * z - 1.0
    low = float(p.min())
    return CheckResult("polynomial_lemma", low >= -1e-12, f"min value {low:.3e} on {samples} samples")


def check_monotonicity(seed: int = 404, sequences: int = 10_000, n_t: int = 50) -> CheckResult:
    """Scalar inviscid propagation preserves input order at every layer."""
    rng = np.random.default_rng(seed)
    dt = 0.099
    pair = np.sort(rng.uniform(0.0, 1.0, size=(2, sequences)), axis=0)
    hi, lo = pair[1], pair[0]
    alphas = rng.uniform(0.0, 1.0, size=(n_t, sequences))
    violations = 0
    for n in range(n_t):
        hi = hi + dt * reaction(hi, alphas[n])
        lo = lo + dt * reaction(lo, alphas[n])
        violations += int(np.count_nonzero(hi < lo))
    return CheckResult(
        "monotonicity", violations == 0, f"{violations} order violations over {sequences} sequences"
    )


def check_discriminant_equivalence(seed: int = 97, draws: int = 10_000) -> CheckResult:
    """Vector l2 rule and mean rule assign identical labels."""
    rng = np.random.default_rng(seed)
    disagreements = 0
    for _ in range(draws):
        n = int(rng.integers(1, 30))
        f = rng.uniform(-1.0, 2.0, size=n)
        l2_label = int(np.sum((f - 1.0) ** 2) <= np.sum(f**2))
        m = float(np.mean(f))
        mean_label = int(abs(m - 1.0) <= abs(m))
        disagreements += int(l2_label != mean_label)
    return CheckResult(
        "discriminant_equivalence", disagreements == 0, f"{disagreements} disagreements in {draws} draws"
    )


def check_allen_cahn_end_state() -> CheckResult:
    """Inviscid limits: each cell converges to 1 above the threshold, 0 below."""
    n_u, n_t, dt = 20, 300, 0.1
    u0 = 0.5 - 0.5 * np.sin(np.pi * (2.0 * cell_centers(n_u) - 1.0))
    worst = 0.0
    for alpha in (-0.8, 0.9):
        hp = Hyperparameters(n_t=n_t, n_u=n_u, n_pt=n_u, eps=0.0, dt_u=dt, dt_p=dt)
        traj = allen_cahn_simulate(lambda x, a=alpha: np.full_like(x, a), u0, hp)
        target = (u0 > alpha).astype(float)
        worst = max(worst, float(np.abs(traj.u_layers[-1] - target).max()))
    return CheckResult("allen_cahn_end_state", worst <= 1e-2, f"max end-state error {worst:.3e}")


def _random_model(rng: np.random.Generator, **overrides) -> PsbcModel:
    n_u = overrides.pop("n_u", int(rng.integers(3, 13)))
    n_pt = overrides.pop("n_pt", int(rng.integers(1, n_u + 1)))
    n_t = overrides.pop("n_t", int(rng.integers(1, 5)))
    hp = Hyperparameters(
        n_t=n_t,
        n_u=n_u,
        n_pt=n_pt,
        eps=overrides.pop("eps", 0.0),
        dt_u=overrides.pop("dt_u", 0.1),
        dt_p=overrides.pop("dt_p", 0.1),
        dt_star=overrides.pop("dt_star", None),
        shared_k=overrides.pop("shared_k", int(rng.choice([1, n_t]))),
        bc=overrides.pop("bc", NEUMANN),
        subordination=overrides.pop("subordination", SUBORDINATE),
    )
    lo, hi = overrides.pop("weight_range", (-2.0, 2.0))
    assert not overrides, overrides
    w_u = rng.uniform(lo, hi, size=(hp.n_groups, hp.n_pt))
    w_p = rng.uniform(lo, hi, size=(hp.n_groups, hp.n_p))
    return new_model(hp, WeightStack(w_u, w_p))


def check_invariant_region(seed: int = 11, draws: int = 1000) -> CheckResult:
    """Random draws with the rule-tightened step stay inside the spilled box."""
    rng = np.random.default_rng(seed)
    eps_grid = (0.0, 0.25, 1.0)
    bcs = (NEUMANN, PERIODIC)
    bad = 0
    for i in range(draws):
        model = _random_model(
            rng,
            eps=eps_grid[i % 3],
            bc=bcs[i % 2],
            dt_u=1.0,
            dt_p=1.0,
            dt_star=1.0,
            subordination=SUBORDINATE if i % 5 else NON_SUBORDINATE,
        )
        dt_u, dt_p = irec_dt(model, 1.0)
        model = model.with_dt(dt_u, dt_p)
        x = rng.uniform(0.0, 1.0, size=model.hp.n_u)
        traj = forward(model, x)
        alphas = apply_basis(model.basis_u, model.weights.w_u)
        box = invariant_box(alphas, model.weights.w_p)
        if not check_invariant(traj, box, dt_u, dt_p):
            bad += 1
    return CheckResult("invariant_region", bad == 0, f"{bad} box violations in {draws} draws")


def counterexample_search(
    multiplier: float, seed: int = 303, draws: int = 2000
) -> tuple[bool, str]:
    """Search for a trajectory leaving the spilled box when the step rule is
    inflated by `multiplier`.  Mixes random weight draws with adversarial
    near-constant threshold profiles and long layer counts."""
    rng = np.random.default_rng(seed)
    for i in range(draws):
        n_u = int(rng.integers(1, 6))
        n_t = int(rng.integers(1, 300))
        style = i % 3
        if style == 0:
            alphas = rng.uniform(-2.0, 2.0, size=(n_t, n_u))
        elif style == 1:
            alphas = rng.uniform(0.0, 1.0, size=(n_t, n_u))
        else:
            alphas = np.full((n_t, n_u), rng.uniform(0.0, 0.05))
        x = rng.uniform(0.0, 1.0, size=n_u)
        low = min(0.0, float(alphas.min()))
        high = max(1.0, float(alphas.max()))
        dt = multiplier * step_bound(high - low)
        margin = dt * (abs(low) + abs(high)) ** 3
        u = x.copy()
        for n in range(n_t):
            u = u + dt * reaction(u, alphas[n])
            if not np.isfinite(u).all() or (u < low - margin - 1e-12).any() or (
                u > high + margin + 1e-12
            ).any():
                return True, f"violation at draw {i}, layer {n + 1}, multiplier {multiplier}"
    return False, f"no violation in {draws} draws at multiplier {multiplier}"


def check_parallelization(seed: int = 1717, models: int = 100) -> CheckResult:
    """Inviscid canonical models split into independent per-block problems.

    Forward: per-block submodels must reproduce the monolithic trajectory
    bitwise.  Backward: the per-block adjoint seeded with the shared readout
    residual must reproduce the monolithic gradient bitwise.
    """
    rng = np.random.default_rng(seed)
    for _ in range(models):
        model = _random_model(rng, eps=0.0, subordination=SUBORDINATE, weight_range=(-1.0, 1.5))
        hp = model.hp
        x = rng.uniform(0.0, 1.0, size=hp.n_u)
        y = int(rng.integers(0, 2))
        traj = forward(model, x)
        mono = batch_gradient(model, [(x, y)])

        starts, feature_block = model.basis_u._blocks
        bounds = list(starts) + [hp.n_u]
        assembled_u = np.empty_like(traj.u_layers)
        assembled_p = np.empty_like(traj.p_layers)
        g_u = np.zeros_like(mono.g_w_u)
        g_p = np.zeros_like(mono.g_w_p)

        u_final = traj.u_layers[-1]
        lifted = phase_lift(traj.p_layers[-1], model.basis_sub)
        residual = float(np.mean(u_final + lifted * (1.0 - 2.0 * u_final)) - y)

        groups = np.arange(hp.n_t) // hp.shared_k
        alphas, betas = (
            apply_basis(model.basis_u, model.weights.w_u)[groups],
            model.weights.w_p[groups],
        )
        for j in range(hp.n_pt):
            sl = slice(bounds[j], bounds[j + 1])
            # block forward through a genuine submodel
            sub_hp = Hyperparameters(
                n_t=hp.n_t,
                n_u=bounds[j + 1] - bounds[j],
                n_pt=1,
                eps=0.0,
                dt_u=hp.dt_u,
                dt_p=hp.dt_p,
                dt_star=hp.dt_star,
                shared_k=hp.shared_k,
                bc=hp.bc,
                subordination=SUBORDINATE,
            )
            sub = new_model(
                sub_hp,
                WeightStack(model.weights.w_u[:, j : j + 1], model.weights.w_p[:, j : j + 1]),
            )
            sub_traj = forward(sub, x[sl])
            assembled_u[:, sl] = sub_traj.u_layers
            assembled_p[:, j : j + 1] = sub_traj.p_layers
            # block adjoint seeded with the shared residual; block sums use
            # the same reduction primitive as the monolithic pullback
            block_sum = lambda v: np.add.reduceat(v, [0])[0]
            lam = residual * (1.0 - 2.0 * lifted[sl]) / hp.n_u
            kap = block_sum(residual * (1.0 - 2.0 * u_final[sl]) / hp.n_u)
            for n in range(hp.n_t - 1, -1, -1):
                u_n = traj.u_layers[n][sl]
                p_n = traj.p_layers[n][j]
                g_u[groups[n], j] += block_sum(hp.dt_u * reaction_dw(u_n, alphas[n][sl]) * lam)
                lam = (1.0 + hp.dt_u * reaction_du(u_n, alphas[n][sl])) * lam
                g_p[groups[n], j] += hp.dt_p * reaction_dw(p_n, betas[n][j]) * kap
                kap = (1.0 + hp.dt_p * reaction_du(p_n, betas[n][j])) * kap
        if not (
            np.array_equal(assembled_u, traj.u_layers)
            and np.array_equal(assembled_p, traj.p_layers)
            and np.array_equal(g_u, mono.g_w_u)
            and np.array_equal(g_p, mono.g_w_p)
        ):
            return CheckResult("parallelization", False, "block/monolithic mismatch")
    return CheckResult("parallelization", True, f"{models} models bitwise equal")


def gradient_configurations() -> list[dict]:
    """The full sweep grid for the adjoint-versus-differences check."""
    configs = []
    for n_u in (4, 8, 16):
        for n_pt in (1, n_u // 2, n_u):
            for n_t in (1, 2, 4):
                for shared_k in sorted({1, n_t}):
                    for eps in (0.0, 0.25):
                        for bc in (NEUMANN, PERIODIC):
                            for sub in (SUBORDINATE, NON_SUBORDINATE):
                                configs.append(
                                    dict(
                                        n_u=n_u,
                                        n_pt=n_pt,
                                        n_t=n_t,
                                        shared_k=shared_k,
                                        eps=eps,
                                        bc=bc,
                                        subordination=sub,
                                    )
                                )
    return configs


def check_gradient_oracle(seed: int = 2024, h: float = 1e-6, tol: float = 1e-5) -> CheckResult:
    """backward vs central differences over the full configuration sweep."""
    rng = np.random.default_rng(seed)
    configs = gradient_configurations()
    worst = 0.0
    worst_cfg = None
    for cfg in configs:
        model = _random_model(rng, weight_range=(-0.5, 1.5), **cfg)
        xs = rng.uniform(0.0, 1.0, size=(3, model.hp.n_u))
        ys = rng.integers(0, 2, size=3).astype(np.float64)
        got = batch_gradient(model, (xs, ys))
        want = finite_difference_gradient(model, (xs, ys), h=h)
        err = _relative_gradient_error(got, want)
        if err > worst:
            worst, worst_cfg = err, cfg
    passed = worst <= tol
    return CheckResult(
        "gradient_oracle",
        passed,
        f"{len(configs)} configurations, max relative error {worst:.3e}"
        + (f" at {worst_cfg}" if not passed else ""),
    )


def _relative_gradient_error(got: GradientStack, want: GradientStack) -> float:
    diff_norm = max(
        float(np.abs(got.g_w_u - want.g_w_u).max()),
        float(np.abs(got.g_w_p - want.g_w_p).max()),
    )
    scale = max(
        float(np.abs(want.g_w_u).max()),
        float(np.abs(want.g_w_p).max()),
        1e-8,
    )
    return diff_norm / scale


def run_all(fast: bool = False) -> list[CheckResult]:
    """Every data-free property suite; `fast` trims the sweep sizes."""
    results = [
        check_solver_oracle(systems=100 if fast else 500),
        check_solve_apply_roundtrip(),
        check_max_principle(),
        check_polynomial_lemma(),
        check_monotonicity(sequences=1000 if fast else 10_000),
        check_discriminant_equivalence(draws=1000 if fast else 10_000),
        check_allen_cahn_end_state(),
        check_invariant_region(draws=200 if fast else 1000),
        check_parallelization(models=20 if fast else 100),
        check_gradient_oracle(),
    ]
    return results
