import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.optimize import minimize

from src.core.errors import DimensionError, SolverError
from src.mkl.kernel_bank import GramMatrix, KernelSpec, compute_gram
from src.mkl.solvers import DualSolution, SolverConfig, krr_solve, predict_scores, rkhs_norms, svm_dual_solve


def _dual(alpha, K, y):
    v = alpha * y
    return alpha.sum() - 0.5 * v @ K @ v


def _qp_oracle(K, y, C):
    """Reference dual optimum from a general-purpose constrained solver"""
    n = y.shape[0]
    Q = (y[:, None] * y[None, :]) * K
    result = minimize(
        lambda a: 0.5 * a @ Q @ a - a.sum(),
        np.zeros(n),
        jac=lambda a: Q @ a - 1.0,
        bounds=[(0.0, C)] * n,
        constraints=[{"type": "eq", "fun": lambda a: a @ y, "jac": lambda a: y}],
        method="SLSQP",
        options={"ftol": 1e-14, "maxiter": 1000},
    )
    return -result.fun


class TestSvmDualSolve:
    def test_identity_kernel(self):
        sol = svm_dual_solve(np.eye(2), [1, -1], SolverConfig(C=10), debug=True)
        assert_allclose(sol.alpha, [1.0, 1.0])
        assert sol.bias == pytest.approx(0.0, abs=1e-12)
        assert sol.dual_objective == pytest.approx(1.0)
        assert sol.converged

    def test_clipped_at_box(self):
        sol = svm_dual_solve(np.array([[1.0, 0.5], [0.5, 1.0]]), [1, -1], SolverConfig(C=1), debug=True)
        assert_allclose(sol.alpha, [1.0, 1.0])

    def test_single_class(self):
        with pytest.raises(SolverError):
            svm_dual_solve(np.eye(3), [1, 1, 1], SolverConfig())

    def test_labels_checked(self):
        with pytest.raises(SolverError):
            svm_dual_solve(np.eye(2), [1, 0], SolverConfig())
        with pytest.raises(DimensionError):
            svm_dual_solve(np.eye(3), [1, -1], SolverConfig())

    def test_accepts_gram_matrix(self):
        sol = svm_dual_solve(GramMatrix(np.eye(2)), [1, -1], SolverConfig(C=10))
        assert sol.dual_objective == pytest.approx(1.0)

    def test_constraints_hold(self, rng):
        X = rng.normal(size=(30, 2))
        y = np.where(X[:, 0] + 0.3 * rng.normal(size=30) > 0, 1.0, -1.0)
        K = compute_gram(KernelSpec("rbf", bandwidth=1.0), X).values
        sol = svm_dual_solve(K, y, SolverConfig(C=2.0), debug=True)
        assert np.all(sol.alpha >= 0)
        assert np.all(sol.alpha <= 2.0)
        assert abs(sol.alpha @ y) < 1e-10
        assert sol.dual_objective == pytest.approx(_dual(sol.alpha, K, y), rel=1e-10)

    def test_matches_qp_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            n = int(rng.integers(2, 9))
            X = rng.normal(size=(n, 2))
            y = rng.choice([-1.0, 1.0], size=n)
            y[0], y[1] = 1.0, -1.0
            spec = KernelSpec("rbf", bandwidth=float(rng.uniform(0.3, 2.0))) if rng.uniform() < 0.5 \
                else KernelSpec("linear")
            K = compute_gram(spec, X).values + 1e-3 * np.eye(n)
            C = float(rng.uniform(0.1, 10.0))
            sol = svm_dual_solve(K, y, SolverConfig(C=C, tol=1e-8))
            expected = _qp_oracle(K, y, C)
            assert sol.dual_objective == pytest.approx(expected, abs=1e-4 * max(1.0, abs(expected)))

    def test_free_support_vector_margin(self, rng):
        X = rng.normal(size=(25, 2))
        y = np.where(X[:, 0] - X[:, 1] > 0, 1.0, -1.0)
        K = compute_gram(KernelSpec("rbf", bandwidth=1.5), X).values
        sol = svm_dual_solve(K, y, SolverConfig(C=5.0, tol=1e-8))
        scores = predict_scores(K[None], [1.0], sol, y)
        free = (sol.alpha > 1e-6) & (sol.alpha < 5.0 - 1e-6)
        assert np.any(free)
        assert_allclose(y[free] * scores[free], 1.0, atol=1e-5)


class TestKrrSolve:
    def test_identity(self):
        sol = krr_solve(np.eye(2), [2.0, 4.0], SolverConfig(lam=1.0))
        assert_allclose(sol.alpha, [1.0, 2.0])
        assert sol.bias == 0.0

    def test_zero_targets(self, rng):
        K = compute_gram(KernelSpec("linear"), rng.normal(size=(4, 2))).values
        assert_allclose(krr_solve(K, np.zeros(4), SolverConfig()).alpha, 0.0)

    def test_ridge_limit(self, rng):
        K = compute_gram(KernelSpec("rbf", bandwidth=1.0), rng.normal(size=(5, 2))).values
        y = rng.normal(size=5)
        norms = [np.linalg.norm(krr_solve(K, y, SolverConfig(lam=lam)).alpha) for lam in (1.0, 1e2, 1e4)]
        assert norms[0] > norms[1] > norms[2]
        assert norms[2] == pytest.approx(np.linalg.norm(y) / 1e4, rel=1e-3)


class TestRkhsNorms:
    def test_zero_weights(self):
        sol = DualSolution(np.array([1.0, 1.0]), 0.0, 0.0)
        assert_allclose(rkhs_norms([np.eye(2), np.eye(2)], [0.0, 0.0], sol, [1, -1]), 0.0)

    def test_identity_kernel(self):
        sol = DualSolution(np.array([1.0, 1.0]), 0.0, 0.0)
        assert_allclose(rkhs_norms([np.eye(2)], [1.0], sol, [1, -1]), [2.0])

    def test_homogeneous_in_beta(self, rng):
        grams = [compute_gram(KernelSpec("polynomial", degree=d), rng.normal(size=(6, 2))).values for d in (1, 2)]
        sol = DualSolution(rng.uniform(size=6), 0.0, 0.0)
        y = np.tile([1.0, -1.0], 3)
        base = rkhs_norms(grams, [1.0, 1.0], sol, y)
        scaled = rkhs_norms(grams, [3.0, 1.0], sol, y)
        assert scaled[0] == pytest.approx(9.0 * base[0])
        assert scaled[1] == pytest.approx(base[1])


class TestPredictScores:
    def test_zero_alpha_gives_bias(self):
        sol = DualSolution(np.zeros(3), 0.25, 0.0)
        assert_allclose(predict_scores([np.ones((2, 3))], [1.0], sol, [1, -1, 1]), 0.25)

    def test_one_hot_matches_single_kernel(self, rng):
        X = rng.normal(size=(12, 2))
        y = np.where(X[:, 0] > 0, 1.0, -1.0)
        grams = [compute_gram(KernelSpec("polynomial", degree=d), X).values for d in (1, 2)]
        cfg = SolverConfig(C=1.0)
        combined = svm_dual_solve(np.tensordot([0.0, 1.0], np.stack(grams), axes=1), y, cfg)
        single = svm_dual_solve(grams[1], y, cfg)
        assert_allclose(predict_scores(grams, [0.0, 1.0], combined, y),
                        predict_scores(grams[1:], [1.0], single, y))

    def test_column_mismatch(self):
        with pytest.raises(DimensionError):
            predict_scores([np.ones((2, 3))], [1.0], DualSolution(np.zeros(2), 0.0, 0.0), [1, -1])
