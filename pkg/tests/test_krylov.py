import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from haar_bidomain.errors import DomainError
from haar_bidomain.krylov import (
    GmresConfig,
    LinearOperator,
    block_operator,
    dense_operator,
    gmres_solve,
    identity_operator,
    kron_apply,
    kron_operator,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def random_spd(rng, n):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return Q @ np.diag(rng.uniform(0.5, 50.0, n)) @ Q.T


class TestGmresExamples:
    def test_identity(self):
        b = np.array([1.0, -2.0, 3.0, 0.5, 4.0])
        x, st_ = gmres_solve(identity_operator(5), b)
        np.testing.assert_allclose(x, b)
        assert st_.iterations == 1 and st_.converged

    def test_diagonal(self):
        x, st_ = gmres_solve(dense_operator(np.diag([2.0, 4.0])), np.array([2.0, 8.0]))
        np.testing.assert_allclose(x, [1.0, 2.0], atol=1e-12)
        assert st_.converged

    def test_haar_level_zero(self):
        x, _ = gmres_solve(dense_operator([[1, 1], [1, -1]]), np.array([2.0, 0.0]))
        np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-12)

    def test_zero_rhs(self):
        x, st_ = gmres_solve(dense_operator(np.eye(3)), np.zeros(3))
        np.testing.assert_array_equal(x, 0.0)
        assert st_.iterations == 0 and st_.converged

    def test_exact_initial_guess(self):
        A = np.diag([1.0, 2.0, 3.0])
        x, st_ = gmres_solve(dense_operator(A), np.array([1.0, 2.0, 3.0]), x0=np.ones(3))
        assert st_.iterations == 0 and st_.converged

    def test_budget_exhausted(self):
        rng = np.random.default_rng(3)
        A = np.diag(np.logspace(0, 6, 40)) + 0.1 * rng.standard_normal((40, 40))
        x, st_ = gmres_solve(dense_operator(A), np.ones(40), cfg=GmresConfig(restart=2, max_iters=4))
        assert not st_.converged
        assert st_.iterations == 4
        assert st_.final_relative_residual > 1e-10

    def test_breakdown_on_singular_operator(self):
        # the Krylov space of a nilpotent shift closes before the residual vanishes
        A = np.diag(np.ones(3), k=-1)
        x, st_ = gmres_solve(dense_operator(A), np.array([0.0, 0.0, 0.0, 1.0]))
        assert not st_.converged
        assert np.isfinite(st_.final_relative_residual)

    def test_right_preconditioner_exact_inverse(self):
        rng = np.random.default_rng(0)
        A = rng.standard_normal((30, 30)) + 30 * np.eye(30)
        Ainv = np.linalg.inv(A)
        b = rng.standard_normal(30)
        x, st_ = gmres_solve(dense_operator(A), b, precond=dense_operator(Ainv))
        assert st_.iterations == 1
        np.testing.assert_allclose(A @ x, b, atol=1e-10)

    def test_shape_checks(self):
        with pytest.raises(DomainError):
            gmres_solve(identity_operator(3), np.ones(4))
        with pytest.raises(DomainError):
            gmres_solve(identity_operator(3), np.ones(3), x0=np.ones(2))

    @pytest.mark.parametrize("kw", [dict(tol=0.0), dict(restart=0), dict(max_iters=0)])
    def test_config_validation(self, kw):
        with pytest.raises(DomainError):
            GmresConfig(**kw)


class TestGmresProperties:
    @settings(max_examples=15, deadline=None)
    @given(n=st.integers(1, 120), seed=st.integers(0, 2**32 - 1))
    def test_spd_finite_termination(self, n, seed):
        rng = np.random.default_rng(seed)
        A = random_spd(rng, n)
        b = rng.standard_normal(n)
        x, st_ = gmres_solve(dense_operator(A), b, cfg=GmresConfig(restart=n, max_iters=2 * n))
        assert st_.converged
        assert st_.iterations <= 2 * n
        assert np.linalg.norm(b - A @ x) / max(np.linalg.norm(b), 1) <= 1e-10

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), scale=st.floats(1e-3, 1e3))
    def test_scaling_invariance(self, seed, scale):
        rng = np.random.default_rng(seed)
        n = 25
        A = rng.standard_normal((n, n)) + 8 * np.eye(n)
        b = rng.standard_normal(n) * 5
        x1, _ = gmres_solve(dense_operator(A), b, cfg=GmresConfig(tol=1e-13))
        x2, _ = gmres_solve(dense_operator(scale * A), scale * b, cfg=GmresConfig(tol=1e-13))
        np.testing.assert_allclose(x2, x1, rtol=1e-9, atol=1e-9 * np.abs(x1).max())

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), restart=st.integers(1, 20))
    def test_converged_flag_is_honest(self, seed, restart):
        rng = np.random.default_rng(seed)
        n = 15
        A = rng.standard_normal((n, n)) + 4 * np.eye(n)
        b = rng.standard_normal(n)
        cfg = GmresConfig(restart=restart, max_iters=40)
        x, st_ = gmres_solve(dense_operator(A), b, cfg=cfg)
        rel = np.linalg.norm(b - A @ x) / max(np.linalg.norm(b), 1)
        assert rel == pytest.approx(st_.final_relative_residual, rel=1e-6, abs=1e-14)
        assert st_.converged == (rel <= cfg.tol)


class TestLinearOperator:
    @given(x=arrays(float, 6, elements=finite), y=arrays(float, 6, elements=finite),
           a=finite, b=finite)
    def test_linearity(self, x, y, a, b):
        rng = np.random.default_rng(1)
        op = dense_operator(rng.standard_normal((6, 6)))
        np.testing.assert_allclose(op @ (a * x + b * y), a * (op @ x) + b * (op @ y),
                                   atol=1e-9)

    def test_to_dense_round_trip(self):
        M = np.arange(9.0).reshape(3, 3)
        np.testing.assert_array_equal(dense_operator(M).to_dense(), M)

    def test_wrong_shape(self):
        with pytest.raises(DomainError):
            identity_operator(3).apply(np.ones(2))
        with pytest.raises(DomainError):
            dense_operator(np.ones((2, 3)))

    def test_block_operator_matches_dense(self):
        rng = np.random.default_rng(2)
        A, B, C = (rng.standard_normal((3, 3)) for _ in range(3))
        op = block_operator([[dense_operator(A), dense_operator(B)],
                             [None, dense_operator(C)]])
        full = np.block([[A, B], [np.zeros((3, 3)), C]])
        np.testing.assert_allclose(op.to_dense(), full)

    def test_block_operator_shape_errors(self):
        with pytest.raises(DomainError):
            block_operator([[identity_operator(2), identity_operator(3)],
                            [None, identity_operator(3)]])
        with pytest.raises(DomainError):
            block_operator([[identity_operator(2)], [identity_operator(2)]])


class TestKron:
    def test_identity_factors(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        np.testing.assert_array_equal(kron_apply([np.eye(2), np.eye(2)], x), x)

    def test_haar_factor(self):
        out = kron_apply([np.array([[1, 1], [1, -1]]), np.eye(2)], np.array([1.0, 0, 0, 0]))
        np.testing.assert_array_equal(out, [1, 0, 1, 0])

    def test_three_factors(self):
        rng = np.random.default_rng(5)
        F = [rng.standard_normal((2, 2)) for _ in range(3)]
        x = rng.standard_normal(8)
        dense = np.kron(np.kron(F[0], F[1]), F[2])
        np.testing.assert_allclose(kron_apply(F, x), dense @ x, atol=1e-13)

    @settings(max_examples=40, deadline=None)
    @given(shape=st.lists(st.tuples(st.integers(1, 4), st.integers(1, 4)), min_size=1, max_size=3),
           seed=st.integers(0, 2**32 - 1))
    def test_matches_numpy_kron(self, shape, seed):
        rng = np.random.default_rng(seed)
        F = [rng.standard_normal(s) for s in shape]
        dense = F[0]
        for f in F[1:]:
            dense = np.kron(dense, f)
        x = rng.standard_normal(dense.shape[1])
        np.testing.assert_allclose(kron_apply(F, x), dense @ x, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DomainError):
            kron_apply([np.eye(2), np.eye(3)], np.ones(5))

    def test_kron_operator(self):
        rng = np.random.default_rng(6)
        F = [rng.standard_normal((3, 3)), rng.standard_normal((2, 2))]
        np.testing.assert_allclose(kron_operator(F).to_dense(), np.kron(F[0], F[1]), atol=1e-14)
        with pytest.raises(DomainError):
            kron_operator([np.ones((2, 3))])

    def test_custom_matvec(self):
        op = LinearOperator(2, lambda x: np.array([x[1], x[0]]))
        x, st_ = gmres_solve(op, np.array([3.0, 4.0]))
        np.testing.assert_allclose(x, [4.0, 3.0], atol=1e-12)
