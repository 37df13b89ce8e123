"""
Per-task solvers on a combined kernel.

svm_dual_solve is an SMO solver with maximal-violating-pair selection;
krr_solve is a Cholesky solve of (K + lambda I) alpha = y.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ..core.config import ConfigManager
from ..core.errors import DimensionError, KernelError, SolverError
from .kernel_bank import GramMatrix, check_psd

logger = logging.getLogger("Solvers")

SVM = "svm"
KRR = "krr"

# 非正曲率时的替代值
_TAU = 1e-12

MatrixLike = Union[GramMatrix, np.ndarray]


@dataclass(frozen=True)
class DualSolution:
    alpha: np.ndarray
    bias: float
    dual_objective: float
    kind: str = SVM
    converged: bool = True
    n_iter: int = 0


@dataclass(frozen=True)
class SolverConfig:
    C: float = 1.0
    lam: float = 1.0
    tol: float = 1e-4
    # SMO 迭代上限 = max_passes * n
    max_passes: int = 1000

    def __post_init__(self):
        if not (self.C > 0 and self.lam > 0 and self.tol > 0 and self.max_passes > 0):
            raise SolverError("C, lam, tol and max_passes must be positive")


def _values(K: MatrixLike) -> np.ndarray:
    return K.values if isinstance(K, GramMatrix) else np.asarray(K, dtype=float)


def _stack(grams) -> np.ndarray:
    if isinstance(grams, np.ndarray):
        return grams if grams.ndim == 3 else grams[None]
    return np.stack([_values(g) for g in grams])


def _check_square(K: np.ndarray, y: np.ndarray):
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise DimensionError(f"kernel must be square, got {K.shape}")
    if K.shape[0] != y.shape[0]:
        raise DimensionError(f"kernel is {K.shape[0]} x {K.shape[0]} but there are {y.shape[0]} labels")


def svm_dual_solve(K: MatrixLike, y, cfg: SolverConfig, debug: Optional[bool] = None) -> DualSolution:
    """
    Maximize 1'a - 1/2 a'YKYa  s.t. 0 <= a <= C, a'y = 0.

    Args:
        K: n x n PSD kernel
        y: labels in {-1, +1}, both classes present
        cfg: Box constant C and KKT tolerance
        debug: Full PSD check and dual-ascent assertion

    Returns:
        DualSolution with the bias recovered from the KKT conditions
    """
    K = _values(K)
    y = np.asarray(y, dtype=float).ravel()
    _check_square(K, y)
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise SolverError("svm labels must be ±1")
    if np.unique(y).size < 2:
        raise SolverError("svm needs both classes in the training labels")
    if debug is None:
        debug = ConfigManager.get_instance().debug
    if debug:
        try:
            check_psd(K, tol=1e-8 * max(1.0, float(np.trace(K))))
        except KernelError as e:
            raise SolverError(str(e)) from None
    elif np.any(np.diag(K) < -1e-8):
        raise SolverError("kernel has a negative diagonal entry; not PSD")

    n = y.shape[0]
    C = cfg.C
    alpha = np.zeros(n)
    # gradient of 1/2 a'Qa - 1'a, Q = YKY
    grad = -np.ones(n)
    diag = np.diag(K)
    converged = False
    previous = 0.0
    n_iter = 0

    for n_iter in range(1, cfg.max_passes * n + 1):
        violation = -y * grad
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        i = int(np.argmax(np.where(up, violation, -np.inf)))
        j = int(np.argmin(np.where(low, violation, np.inf)))
        m, M = violation[i], violation[j]
        if m - M < cfg.tol:
            converged = True
            break

        curvature = diag[i] + diag[j] - 2.0 * K[i, j]
        if curvature <= 0:
            curvature = _TAU
        bound_i = C - alpha[i] if y[i] > 0 else alpha[i]
        bound_j = alpha[j] if y[j] > 0 else C - alpha[j]
        step = min((m - M) / curvature, bound_i, bound_j)

        alpha[i] += y[i] * step
        alpha[j] -= y[j] * step
        if step == bound_i:
            alpha[i] = C if y[i] > 0 else 0.0
        if step == bound_j:
            alpha[j] = 0.0 if y[j] > 0 else C
        grad += y * step * (K[:, i] - K[:, j])

        if debug:
            current = float(alpha.sum() - 0.5 * alpha @ (grad + 1.0))
            if current < previous - 1e-10 * max(1.0, abs(previous)):
                raise SolverError(f"dual objective decreased at iteration {n_iter}: {previous} -> {current}")
            previous = current

    if not converged:
        logger.warning(f"SMO stopped after {n_iter} iterations without reaching tol={cfg.tol}")

    violation = -y * grad
    free = (alpha > 0) & (alpha < C)
    if np.any(free):
        bias = float(np.mean(violation[free]))
    else:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        m = violation[up].max() if np.any(up) else violation[low].min()
        M = violation[low].min() if np.any(low) else m
        bias = float((m + M) / 2.0)

    dual_objective = float(alpha.sum() - 0.5 * alpha @ (grad + 1.0))
    return DualSolution(alpha, bias, dual_objective, SVM, converged, n_iter)


def krr_solve(K: MatrixLike, y, cfg: SolverConfig) -> DualSolution:
    """(K + lam I) alpha = y by Cholesky factorization; dual_objective is ||K alpha - y||^2"""
    K = _values(K)
    y = np.asarray(y, dtype=float).ravel()
    _check_square(K, y)
    try:
        factor = cho_factor(K + cfg.lam * np.eye(K.shape[0]), lower=True)
    except LinAlgError as e:
        raise SolverError(f"ridge system is not positive definite: {e}") from None
    alpha = cho_solve(factor, y)
    residual = float(np.sum((K @ alpha - y) ** 2))
    return DualSolution(alpha, 0.0, residual, KRR, True, 1)


def _signed(sol: DualSolution, y: np.ndarray) -> np.ndarray:
    if sol.kind == SVM:
        return sol.alpha * y
    return sol.alpha


def rkhs_norms(bank_row: Union[Sequence[MatrixLike], np.ndarray], beta_t, sol: DualSolution, y) -> np.ndarray:
    """
    ||w_tk||^2 = beta_k^2 a'Y K_k Y a for each kernel k (label-free for KRR).
    """
    stack = _stack(bank_row)
    beta_t = np.asarray(beta_t, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if stack.shape[0] != beta_t.shape[0]:
        raise DimensionError(f"{stack.shape[0]} kernels but {beta_t.shape[0]} weights")
    if stack.shape[1] != sol.alpha.shape[0] or y.shape[0] != sol.alpha.shape[0]:
        raise DimensionError("kernel size, labels and alpha disagree")
    v = _signed(sol, y)
    quadratic = np.einsum("i,kij,j->k", v, stack, v)
    return beta_t ** 2 * np.maximum(quadratic, 0.0)


def predict_scores(cross: Union[Sequence[MatrixLike], np.ndarray], beta_t, sol: DualSolution, y_train) -> np.ndarray:
    """score(x) = sum_j a_j y_j K_beta(x, x_j) + bias"""
    stack = _stack(cross)
    beta_t = np.asarray(beta_t, dtype=float).ravel()
    y_train = np.asarray(y_train, dtype=float).ravel()
    if stack.shape[0] != beta_t.shape[0]:
        raise DimensionError(f"{stack.shape[0]} kernels but {beta_t.shape[0]} weights")
    if stack.shape[2] != sol.alpha.shape[0] or y_train.shape[0] != sol.alpha.shape[0]:
        raise DimensionError(f"cross kernels have {stack.shape[2]} train columns for {sol.alpha.shape[0]} coefficients")
    combined = np.tensordot(beta_t, stack, axes=1)
    return combined @ _signed(sol, y_train) + sol.bias
