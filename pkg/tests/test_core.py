"""Reaction term, basis matrices, and layer sharing."""

import numpy as np
import pytest

from psbc.core import (
    Hyperparameters,
    WeightStack,
    apply_basis,
    basis_grad_pullback,
    canonical_basis,
    contract_shared,
    expand_shared,
    identity_basis,
    layer_groups,
    reaction,
    reaction_du,
    reaction_dw,
)
from psbc.errors import ConfigurationError, DimensionError


class TestReaction:
    def test_roots(self):
        assert reaction(0.0, 0.7) == 0.0
        assert reaction(1.0, -3.0) == 0.0
        rng = np.random.default_rng(3)
        w = rng.uniform(-2, 2, size=50)
        assert np.all(reaction(0.0, w) == 0.0)
        assert np.all(reaction(1.0, w) == 0.0)
        assert np.allclose(reaction(w, w), 0.0)

    def test_hand_value(self):
        # 0.5 * 0.5 * (0.5 - 0) = 0.125
        assert reaction(0.5, 0.0) == pytest.approx(0.125, abs=1e-15)

    def test_symmetry(self):
        rng = np.random.default_rng(4)
        u = rng.uniform(-2, 3, size=200)
        w = rng.uniform(-2, 3, size=200)
        np.testing.assert_allclose(reaction(u, w), -reaction(1.0 - u, 1.0 - w), atol=1e-12)

    def test_derivative_u_values(self):
        assert reaction_du(0.0, 0.0) == 0.0
        assert reaction_du(0.0, 1.0) == -1.0

    def test_derivative_w_values(self):
        assert reaction_dw(0.0, 123.0) == 0.0
        assert reaction_dw(0.5, -7.0) == -0.25

    @pytest.mark.parametrize("which", ["u", "w"])
    def test_derivatives_match_finite_differences(self, which):
        rng = np.random.default_rng(5)
        h = 1e-6
        for _ in range(100):
            u = rng.uniform(-1.5, 2.5)
            w = rng.uniform(-1.5, 2.5)
            if which == "u":
                fd = (reaction(u + h, w) - reaction(u - h, w)) / (2 * h)
                assert reaction_du(u, w) == pytest.approx(fd, abs=1e-8)
            else:
                fd = (reaction(u, w + h) - reaction(u, w - h)) / (2 * h)
                assert reaction_dw(u, w) == pytest.approx(fd, abs=1e-8)


class TestCanonicalBasis:
    def test_identity_case(self):
        b = canonical_basis(4, 4)
        np.testing.assert_array_equal(b.entries, np.eye(4))

    def test_all_ones_case(self):
        b = canonical_basis(4, 1)
        np.testing.assert_array_equal(b.entries, np.ones((4, 1)))

    def test_two_blocks(self):
        b = canonical_basis(4, 2)
        expected = np.array([[1, 0], [1, 0], [0, 1], [0, 1]], dtype=float)
        np.testing.assert_array_equal(b.entries, expected)

    def test_non_divisible_blocks(self):
        # 5 features over 2 blocks: first block gets the extra index
        b = canonical_basis(5, 2)
        expected = np.array([[1, 0], [1, 0], [1, 0], [0, 1], [0, 1]], dtype=float)
        np.testing.assert_array_equal(b.entries, expected)

    @pytest.mark.parametrize("n_u,n_pt", [(4, 4), (4, 1), (7, 3), (12, 5), (9, 9)])
    def test_structure_invariants(self, n_u, n_pt):
        b = canonical_basis(n_u, n_pt)
        e = b.entries
        assert set(np.unique(e)) <= {0.0, 1.0}
        # each row exactly one nonzero; column supports disjoint and non-empty
        assert np.all(e.sum(axis=1) == 1.0)
        assert np.all(e.sum(axis=0) >= 1.0)
        assert np.linalg.matrix_rank(e) == n_pt

    def test_invalid_dimensions(self):
        with pytest.raises(DimensionError):
            canonical_basis(3, 4)
        with pytest.raises(DimensionError):
            canonical_basis(3, 0)


class TestApplyBasis:
    def test_identity(self):
        w = np.array([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(apply_basis(canonical_basis(3, 3), w), w)
        np.testing.assert_array_equal(apply_basis(identity_basis(3), w), w)

    def test_constant_lift(self):
        out = apply_basis(canonical_basis(4, 1), np.array([2.5]))
        np.testing.assert_array_equal(out, np.full(4, 2.5))

    def test_block_lift(self):
        out = apply_basis(canonical_basis(4, 2), np.array([7.0, -1.0]))
        np.testing.assert_array_equal(out, np.array([7.0, 7.0, -1.0, -1.0]))

    def test_sup_norm_preserved_for_canonical(self):
        rng = np.random.default_rng(6)
        for n_u, n_pt in [(6, 2), (7, 3), (5, 5), (8, 1)]:
            b = canonical_basis(n_u, n_pt)
            for _ in range(20):
                w = rng.uniform(-3, 3, size=n_pt)
                assert np.abs(apply_basis(b, w)).max() == np.abs(w).max()

    def test_norm_proportionality_for_general_basis(self):
        rng = np.random.default_rng(7)
        from psbc.core import BasisMatrix, PCA

        entries = rng.uniform(-1, 1, size=(6, 3))
        b = BasisMatrix(entries, PCA)
        c2 = np.abs(entries).sum(axis=1).max()
        c1 = 1.0 / np.abs(np.linalg.pinv(entries)).sum(axis=1).max()
        for _ in range(50):
            w = rng.uniform(-2, 2, size=3)
            lifted = np.abs(apply_basis(b, w)).max()
            assert lifted <= c2 * np.abs(w).max() + 1e-12
            assert lifted >= c1 * np.abs(w).max() - 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            apply_basis(canonical_basis(4, 2), np.ones(3))


class TestGradPullback:
    def test_identity_and_sum(self):
        g = np.array([1.0, 2.0, 3.0, 4.0])
        np.testing.assert_array_equal(basis_grad_pullback(canonical_basis(4, 4), g), g)
        np.testing.assert_array_equal(basis_grad_pullback(canonical_basis(4, 1), g), [10.0])

    def test_adjoint_identity(self):
        rng = np.random.default_rng(8)
        from psbc.core import BasisMatrix, PCA

        for kind in ("canonical", "dense"):
            for _ in range(25):
                if kind == "canonical":
                    b = canonical_basis(9, 4)
                else:
                    b = BasisMatrix(rng.uniform(-1, 1, size=(9, 4)), PCA)
                w = rng.uniform(-2, 2, size=4)
                g = rng.uniform(-2, 2, size=9)
                lhs = float(apply_basis(b, w) @ g)
                rhs = float(w @ basis_grad_pullback(b, g))
                assert lhs == pytest.approx(rhs, abs=1e-12)


class TestSharing:
    def test_no_sharing(self):
        hp = Hyperparameters(n_t=3, n_u=2, n_pt=1)
        stack = WeightStack(np.array([[1.0], [2.0], [3.0]]), np.array([[4.0], [5.0], [6.0]]))
        w_u, w_p = expand_shared(stack, hp)
        np.testing.assert_array_equal(w_u[:, 0], [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(w_p[:, 0], [4.0, 5.0, 6.0])

    def test_fully_shared(self):
        hp = Hyperparameters(n_t=4, n_u=2, n_pt=1, shared_k=4)
        stack = WeightStack(np.array([[1.5]]), np.array([[0.5]]))
        w_u, _ = expand_shared(stack, hp)
        np.testing.assert_array_equal(w_u, np.full((4, 1), 1.5))

    def test_two_shared(self):
        hp = Hyperparameters(n_t=4, n_u=2, n_pt=1, shared_k=2)
        stack = WeightStack(np.array([[1.0], [2.0]]), np.array([[0.0], [0.0]]))
        w_u, _ = expand_shared(stack, hp)
        np.testing.assert_array_equal(w_u[:, 0], [1.0, 1.0, 2.0, 2.0])

    def test_group_assignment(self):
        np.testing.assert_array_equal(layer_groups(5, 2), [0, 0, 1, 1, 2])

    def test_expand_contract_adjoint(self):
        rng = np.random.default_rng(9)
        for n_t, k in [(4, 2), (5, 2), (6, 3), (3, 1), (4, 4)]:
            n_groups = -(-n_t // k)
            w = rng.uniform(-1, 1, size=(n_groups, 3))
            g = rng.uniform(-1, 1, size=(n_t, 3))
            expanded = w[layer_groups(n_t, k)]
            lhs = float(np.sum(expanded * g))
            rhs = float(np.sum(w * contract_shared(g, n_t, k)))
            assert lhs == pytest.approx(rhs, abs=1e-12)


class TestHyperparameters:
    def test_validation(self):
        with pytest.raises(ConfigurationError):
            Hyperparameters(n_t=1, n_u=2, n_pt=3)
        with pytest.raises(ConfigurationError):
            Hyperparameters(n_t=1, n_u=2, n_pt=1, bc="periodic")
        with pytest.raises(ConfigurationError):
            Hyperparameters(n_t=1, n_u=3, n_pt=1, dt_u=0.3, dt_star=0.2)
        with pytest.raises(ConfigurationError):
            Hyperparameters(n_t=2, n_u=3, n_pt=1, shared_k=3)

    def test_phase_dimension(self):
        hp = Hyperparameters(n_t=1, n_u=8, n_pt=4, subordination="subordinate")
        assert hp.n_p == 4
        hp = Hyperparameters(n_t=1, n_u=8, n_pt=4, subordination="nonsubordinate")
        assert hp.n_p == 1

    def test_group_count(self):
        assert Hyperparameters(n_t=5, n_u=2, n_pt=1, shared_k=2).n_groups == 3
