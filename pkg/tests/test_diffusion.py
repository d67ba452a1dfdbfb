"""Diffusion stencils, implicit solves, and discrete maximum principles."""

import numpy as np
import pytest

from psbc.core import NEUMANN, PERIODIC
from psbc.diffusion import (
    apply_d,
    build,
    neighbor_average,
    solve_l,
    solve_l_transpose,
)
from psbc.errors import ConfigurationError, DimensionError


def dense_stencil(n, bc):
    """Oracle: the difference matrix assembled entry by entry."""
    d = np.zeros((n, n))
    if n == 1:
        return d
    np.fill_diagonal(d, -2.0)
    if bc == NEUMANN:
        d[0, 1] = 2.0
        d[-1, -2] = 2.0
        for i in range(1, n - 1):
            d[i, i - 1] = d[i, i + 1] = 1.0
    else:
        for i in range(n):
            d[i, (i - 1) % n] += 1.0
            d[i, (i + 1) % n] += 1.0
    return d


class TestBuild:
    def test_neumann_3x3_rows(self):
        op = build(3, NEUMANN, 0.5)
        rows = apply_d(op, np.eye(3)).T
        np.testing.assert_array_equal(rows, [[-2, 2, 0], [1, -2, 1], [0, 2, -2]])

    def test_periodic_3x3_rows(self):
        op = build(3, PERIODIC, 0.5)
        rows = apply_d(op, np.eye(3)).T
        np.testing.assert_array_equal(rows, [[-2, 1, 1], [1, -2, 1], [1, 1, -2]])

    def test_row_sums_vanish(self):
        for n in (1, 2, 3, 8, 33):
            for bc in (NEUMANN, PERIODIC):
                if bc == PERIODIC and n < 3:
                    continue
                op = build(n, bc, 1.0)
                assert np.abs(apply_d(op, np.ones(n))).max() == 0.0

    def test_periodic_needs_three_points(self):
        with pytest.raises(ConfigurationError):
            build(2, PERIODIC, 0.1)


class TestApplyD:
    def test_hand_value(self):
        op = build(3, NEUMANN, 0.0)
        np.testing.assert_array_equal(apply_d(op, np.array([0.0, 1.0, 0.0])), [2.0, -2.0, 2.0])

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(11)
        for n in (1, 2, 3, 7, 40):
            for bc in (NEUMANN, PERIODIC):
                if bc == PERIODIC and n < 3:
                    continue
                op = build(n, bc, 0.3)
                dense = dense_stencil(n, bc)
                for _ in range(5):
                    v = rng.uniform(-4, 4, size=n)
                    np.testing.assert_allclose(apply_d(op, v), dense @ v, atol=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            apply_d(build(3, NEUMANN, 0.1), np.ones(4))


class TestSolveL:
    def test_zero_viscosity_is_identity(self):
        rhs = np.array([0.3, -1.0, 2.0])
        np.testing.assert_array_equal(solve_l(build(3, NEUMANN, 0.0), rhs), rhs)
        np.testing.assert_array_equal(solve_l_transpose(build(3, PERIODIC, 0.0), rhs), rhs)

    def test_constant_vector_is_eigenvector(self):
        for bc in (NEUMANN, PERIODIC):
            op = build(5, bc, 0.7)
            np.testing.assert_allclose(solve_l(op, np.full(5, 3.25)), np.full(5, 3.25), atol=1e-12)

    def test_matches_dense_oracle_and_residual(self):
        rng = np.random.default_rng(12)
        for n in (1, 2, 3, 17, 120):
            for bc in (NEUMANN, PERIODIC):
                if bc == PERIODIC and n < 3:
                    continue
                for eps in (0.25, 1.0, 2.0):
                    op = build(n, bc, eps)
                    dense_l = np.eye(n) - eps * eps * dense_stencil(n, bc)
                    rhs = rng.uniform(-5, 5, size=n)
                    u = solve_l(op, rhs)
                    np.testing.assert_allclose(u, np.linalg.solve(dense_l, rhs), atol=1e-10)
                    assert np.abs(dense_l @ u - rhs).max() <= 1e-10

    def test_batched_right_hand_sides(self):
        op = build(6, NEUMANN, 0.5)
        rng = np.random.default_rng(13)
        rhs = rng.uniform(-1, 1, size=(4, 6))
        got = solve_l(op, rhs)
        for i in range(4):
            np.testing.assert_array_equal(got[i], solve_l(op, rhs[i]))


class TestTransposeSolve:
    def test_periodic_symmetric(self):
        op = build(7, PERIODIC, 0.8)
        rng = np.random.default_rng(14)
        rhs = rng.uniform(-2, 2, size=7)
        np.testing.assert_array_equal(solve_l_transpose(op, rhs), solve_l(op, rhs))

    def test_adjoint_identity(self):
        rng = np.random.default_rng(15)
        for bc in (NEUMANN, PERIODIC):
            op = build(9, bc, 1.3)
            for _ in range(20):
                a = rng.uniform(-2, 2, size=9)
                b = rng.uniform(-2, 2, size=9)
                lhs = float(solve_l(op, a) @ b)
                rhs = float(a @ solve_l_transpose(op, b))
                assert lhs == pytest.approx(rhs, abs=1e-10)

    def test_matches_dense_transpose(self):
        rng = np.random.default_rng(16)
        op = build(11, NEUMANN, 0.6)
        dense_l = np.eye(11) - 0.36 * dense_stencil(11, NEUMANN)
        rhs = rng.uniform(-1, 1, size=11)
        np.testing.assert_allclose(
            solve_l_transpose(op, rhs), np.linalg.solve(dense_l.T, rhs), atol=1e-10
        )


class TestNeighborAverage:
    def test_constant(self):
        v = np.full(5, 2.5)
        for j in range(5):
            assert neighbor_average(v, j, NEUMANN) == 2.5
            assert neighbor_average(v, j, PERIODIC) == 2.5

    def test_hand_values(self):
        v = np.array([1.0, 2.0, 3.0])
        assert neighbor_average(v, 0, NEUMANN) == 2.0
        assert neighbor_average(v, 1, NEUMANN) == 2.0
        assert neighbor_average(v, 2, NEUMANN) == 2.0
        assert neighbor_average(v, 0, PERIODIC) == 2.5
        assert neighbor_average(v, 2, PERIODIC) == 1.5

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            neighbor_average(np.ones(3), 3, NEUMANN)

    def test_sign_agreement_with_stencil(self):
        # (D v)_j = 2 (av_j(v) - v_j) for both closures
        rng = np.random.default_rng(17)
        for bc in (NEUMANN, PERIODIC):
            op = build(8, bc, 0.0)
            for _ in range(25):
                v = rng.uniform(-3, 3, size=8)
                dv = apply_d(op, v)
                for j in range(8):
                    av = neighbor_average(v, j, bc)
                    assert dv[j] == pytest.approx(2.0 * (av - v[j]), abs=1e-12)
                    if dv[j] > 0:
                        assert av > v[j]
                    elif dv[j] < 0:
                        assert av < v[j]


class TestMaximumPrinciples:
    def test_positive_cone(self):
        rng = np.random.default_rng(18)
        for bc in (NEUMANN, PERIODIC):
            for eps in (0.0, 0.25, 1.0, 4.0):
                op = build(12, bc, eps)
                v = rng.uniform(0, 5, size=(50, 12))
                assert solve_l(op, v).min() >= -1e-12

    def test_operator_norm_at_most_one(self):
        for bc in (NEUMANN, PERIODIC):
            for n in (3, 9, 31):
                for eps in (0.0, 0.5, 2.0):
                    op = build(n, bc, eps)
                    inv_cols = solve_l(op, np.eye(n))
                    norm = np.abs(inv_cols).sum(axis=0).max()
                    assert norm <= 1.0 + 1e-12

    def test_extremum_signs(self):
        rng = np.random.default_rng(19)
        for bc in (NEUMANN, PERIODIC):
            op = build(10, bc, 0.0)
            for _ in range(50):
                v = rng.uniform(-2, 2, size=10)
                dv = apply_d(op, v)
                assert dv[np.argmin(v)] >= 0.0
                assert dv[np.argmax(v)] <= 0.0

    def test_solve_apply_roundtrip_large(self):
        rng = np.random.default_rng(20)
        for n in (64, 1024):
            for eps in (0.0, 1 / 16, 0.5, 1.0):
                for bc in (NEUMANN, PERIODIC):
                    op = build(n, bc, eps)
                    rhs = rng.uniform(-1, 1, size=n)
                    u = solve_l(op, rhs)
                    back = u - op.eps2 * apply_d(op, u)
                    assert np.abs(back - rhs).max() <= 1e-10
