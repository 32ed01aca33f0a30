import numpy as np
import pytest
from numpy.testing import assert_allclose

import helpers
from aireml import (
    Dataset,
    RandomGroup,
    Theta,
    VarianceSpec,
    apply_P,
    assemble,
    build_H,
    cxx_block,
    h_inverse_dense,
    solve_effects,
    validate,
)
from aireml import mme, oracle
from aireml.errors import DimensionMismatch, SingularKernel, SizeCapExceeded


class TestAssemble:
    def test_hand_assembled_coefficient_matrix(self):
        sys_ = assemble(helpers.t2_model(), Theta(1.0, [1.0]))
        assert_allclose(sys_.C, [[4, 2, 2], [2, 3, 0], [2, 0, 3]])
        assert_allclose(sys_.rhs, [10, 3, 7])

    def test_no_random_block(self):
        sys_ = assemble(helpers.t1_model(), Theta(1.0))
        assert_allclose(sys_.C, [[4.0]])

    def test_zero_kernel_not_invertible(self):
        Z = np.eye(4)[:, :2]
        m = validate(Dataset(y=np.arange(4.0), X=np.ones((4, 1)), Z=Z),
                     VarianceSpec(groups=(RandomGroup("g", 2, kernel=np.zeros((2, 2))),)))
        with pytest.raises(SingularKernel):
            assemble(m, Theta(1.0, [1.0]))

    def test_explicit_kernel_inverse_enters_g_block(self):
        K = np.array([[2.0, 0.5], [0.5, 1.0]])
        Z = np.array([[1, 0], [1, 0], [0, 1], [0, 1]], dtype=float)
        m = validate(Dataset(y=np.arange(4.0), X=np.ones((4, 1)), Z=Z),
                     VarianceSpec(groups=(RandomGroup("g", 2, kernel=K),)))
        gamma = 0.8
        sys_ = assemble(m, Theta(1.0, [gamma]))
        assert_allclose(sys_.C[1:, 1:], Z.T @ Z + np.linalg.inv(K) / gamma,
                        rtol=1e-12)


class TestSolveEffects:
    def test_intercept_only_mean(self):
        m = helpers.t1_model()
        tau, u = solve_effects(assemble(m, Theta(1.0)), m.dataset.y)
        assert_allclose(tau, [2.5])
        assert u.shape == (0,)

    def test_matches_dense_solve(self):
        m = helpers.t2_model()
        sys_ = assemble(m, Theta(1.0, [1.0]))
        sol = np.linalg.solve(sys_.C, sys_.rhs)
        tau, u = solve_effects(sys_, m.dataset.y)
        assert_allclose(np.concatenate([tau, u]), sol, rtol=1e-12)

    def test_large_ratio_limit_approaches_group_means(self):
        m = helpers.t2_model()
        sys_ = assemble(m, Theta(1.0, [1e8]))
        tau, u = solve_effects(sys_, m.dataset.y)
        dense = np.linalg.solve(sys_.C, sys_.rhs)
        assert_allclose(np.concatenate([tau, u]), dense, atol=1e-8)
        group_means = np.array([1.5, 3.5])
        assert_allclose(u, group_means - tau[0], atol=1e-6)


class TestApplyP:
    def test_identity_projection_centers_y(self):
        m = helpers.t1_model()
        got = apply_P(assemble(m, Theta(1.0)), m.dataset.y)
        assert_allclose(got, [-1.5, -0.5, 0.5, 1.5])

    def test_annihilates_fixed_design(self):
        rng = np.random.default_rng(20)
        for _ in range(10):
            model, theta = helpers.random_model(rng)
            sys_ = assemble(model, theta)
            v = model.dataset.X @ rng.normal(size=model.p)
            norm = np.abs(v).max()
            assert np.abs(apply_P(sys_, v)).max() <= 1e-9 * max(norm, 1.0)

    def test_matches_dense_oracle_route(self):
        m = helpers.t2_model()
        theta = Theta(1.0, [1.0])
        got = apply_P(assemble(m, theta), m.dataset.y)
        want = oracle.dense_P(m, theta) @ m.dataset.y
        assert np.abs(got - want).max() <= 1e-10 * np.abs(want).max()

    def test_equals_weighted_fitted_residual(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            model, theta = helpers.random_model(rng)
            sys_ = assemble(model, theta)
            y = model.dataset.y
            tau, u = solve_effects(sys_, y)
            e = y - model.dataset.X @ tau - model.dataset.Z @ u
            assert_allclose(apply_P(sys_, y), sys_.rinv * e, atol=1e-10)

    def test_idempotent_through_H(self):
        rng = np.random.default_rng(22)
        for _ in range(10):
            model, theta = helpers.random_model(rng)
            sys_ = assemble(model, theta)
            H = build_H(model, theta)
            v = rng.normal(size=model.n)
            pv = apply_P(sys_, v)
            assert np.abs(apply_P(sys_, H @ pv) - pv).max() <= 1e-8

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            apply_P(assemble(helpers.t1_model(), Theta(1.0)), np.ones(5))


class TestBlocksAndDenseHelpers:
    def test_cxx_block_intercept_only(self):
        assert_allclose(cxx_block(assemble(helpers.t1_model(), Theta(1.0))), [[0.25]])

    def test_cxx_block_equals_gls_covariance_shape(self):
        m = helpers.t2_model()
        theta = Theta(1.0, [1.0])
        H = build_H(m, theta)
        X = m.dataset.X
        want = np.linalg.inv(X.T @ np.linalg.solve(H, X))
        assert_allclose(cxx_block(assemble(m, theta)), want, atol=1e-10)

    def test_cxx_block_scaled_identity_case(self):
        n0 = 7
        m = validate(Dataset(y=np.arange(n0, dtype=float), X=np.ones((n0, 1)),
                             Z=np.zeros((n0, 0))), VarianceSpec())
        assert_allclose(cxx_block(assemble(m, Theta(1.0))), [[1.0 / n0]])

    def test_h_inverse_identity(self):
        assert_allclose(h_inverse_dense(helpers.t1_model(), Theta(1.0)), np.eye(4))

    def test_h_inverse_hand_block(self):
        # (I + ones(2,2))^-1 = I - ones/3 per block
        got = h_inverse_dense(helpers.t2_model(), Theta(1.0, [1.0]))
        block = np.eye(2) - np.ones((2, 2)) / 3.0
        want = np.block([[block, np.zeros((2, 2))], [np.zeros((2, 2)), block]])
        assert_allclose(got, want, atol=1e-12)

    def test_h_inverse_random_instances(self):
        rng = np.random.default_rng(23)
        for _ in range(10):
            model, theta = helpers.random_model(rng)
            H = build_H(model, theta)
            Hinv = h_inverse_dense(model, theta)
            assert np.abs(H @ Hinv - np.eye(model.n)).max() <= 1e-9
            assert np.abs(Hinv - np.linalg.inv(H)).max() <= 1e-9

    def test_size_cap(self):
        m = helpers.t1_model()
        with pytest.raises(SizeCapExceeded):
            h_inverse_dense(m, Theta(1.0), dense_cap=2)
        with pytest.raises(SizeCapExceeded):
            mme.projection_dense(assemble(m, Theta(1.0)), dense_cap=2)


class TestProjectionIdentities:
    def test_two_dense_routes_agree(self):
        rng = np.random.default_rng(24)
        for _ in range(10):
            model, theta = helpers.random_model(rng)
            P_c = mme.projection_dense(assemble(model, theta))
            P_o = oracle.dense_P(model, theta)
            assert np.abs(P_c - P_o).max() <= 1e-9

    def test_trace_of_PH_counts_error_contrasts(self):
        rng = np.random.default_rng(25)
        for _ in range(10):
            model, theta = helpers.random_model(rng)
            P = oracle.dense_P(model, theta)
            H = build_H(model, theta)
            assert abs(np.trace(P @ H) - (model.n - model.p)) <= 1e-8

    def test_trace_contractions_match_dense_products(self):
        rng = np.random.default_rng(26)
        for scale in ("natural", "log"):
            model, theta = helpers.random_model(rng, scale=scale)
            sys_ = assemble(model, theta)
            P = mme.projection_dense(sys_)
            from aireml.model import dH
            t1, t2 = mme.trace_pairs(model, theta, P)
            for i in range(model.m):
                di = dH(model, theta, i)
                assert_allclose(t1[i], np.trace(P @ di), rtol=1e-10, atol=1e-12)
                for j in range(model.m):
                    dj = dH(model, theta, j)
                    assert_allclose(t2[i, j], np.trace(P @ di @ P @ dj),
                                    rtol=1e-9, atol=1e-11)
