"""
Kernel-weight and task-relationship updates.

B is stored K x T (column t holds task t's kernel weights), Omega is T x T.
"""

import logging
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, eigh, pinvh

from ..core.errors import ConvergenceError, DimensionError, RelationshipError
from ..utils.utils import relative_change

logger = logging.getLogger("Relationship")

EPS = 1e-8
ETA = 0.5
MIN_ETA = 1.0 / 64
FIXED_POINT_TOL = 1e-8
FIXED_POINT_MAX_ITER = 200
# 200 次后残差仍高于此值则报错
FAILURE_RESIDUAL = 1e-4


def psd_sqrt(M) -> np.ndarray:
    """Symmetric square root via eigendecomposition, negative eigenvalues clipped to 0"""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"psd_sqrt needs a square matrix, got {M.shape}")
    scale = max(1.0, float(np.abs(M).max(initial=0.0)))
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-8 * scale):
        raise RelationshipError("psd_sqrt needs a symmetric matrix")
    try:
        values, vectors = eigh(0.5 * (M + M.T))
    except LinAlgError as e:
        raise RelationshipError(f"eigendecomposition failed: {e}") from None
    root = (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T
    return 0.5 * (root + root.T)


def project_nonneg(B) -> np.ndarray:
    return np.maximum(np.asarray(B, dtype=float), 0.0)


def update_relationship(B) -> np.ndarray:
    """Omega = (B'B)^(1/2) / tr((B'B)^(1/2))"""
    B = np.asarray(B, dtype=float)
    if not np.any(B):
        raise RelationshipError("cannot update the task relationship from an all-zero B")
    root = psd_sqrt(B.T @ B)
    trace = float(np.trace(root))
    if not trace > 0:
        raise RelationshipError("(B'B)^(1/2) has zero trace")
    omega = root / trace
    return 0.5 * (omega + omega.T)


def trace_regularizer(B, Omega) -> float:
    """tr(B Omega^+ B') with the Moore-Penrose pseudoinverse"""
    B = np.asarray(B, dtype=float)
    Omega = np.asarray(Omega, dtype=float)
    if B.shape[1] != Omega.shape[0]:
        raise DimensionError(f"B has {B.shape[1]} task columns, Omega is {Omega.shape}")
    try:
        inverse = pinvh(Omega)
    except LinAlgError as e:
        raise RelationshipError(f"pseudoinverse of Omega failed: {e}") from None
    return float(np.trace(B @ inverse @ B.T))


def check_relationship(Omega, tol: float = 1e-8, max_trace: Optional[float] = 1.0):
    """Raise RelationshipError unless Omega is symmetric, PSD and tr <= max_trace (None: any positive trace)"""
    Omega = np.asarray(Omega, dtype=float)
    if not np.allclose(Omega, Omega.T, rtol=0.0, atol=1e-10):
        raise RelationshipError("Omega is not symmetric")
    if np.linalg.eigvalsh(Omega)[0] < -tol:
        raise RelationshipError("Omega is not PSD")
    if not np.trace(Omega) > 0:
        raise RelationshipError("Omega has zero trace")
    if max_trace is not None and np.trace(Omega) > max_trace + 1e-10:
        raise RelationshipError(f"tr(Omega) = {np.trace(Omega):.12g} exceeds {max_trace:g}")


def _check_inputs(W, Omega, B_init) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    W = np.asarray(W, dtype=float)
    Omega = np.asarray(Omega, dtype=float)
    B = np.asarray(B_init, dtype=float)
    if W.ndim != 2 or W.shape != B.shape:
        raise DimensionError(f"W {W.shape} and B {B.shape} must both be K x T")
    if Omega.shape != (W.shape[1], W.shape[1]):
        raise DimensionError(f"Omega must be {W.shape[1]} x {W.shape[1]}, got {Omega.shape}")
    if np.any(W < 0):
        raise RelationshipError("RKHS norms must be nonnegative")
    return W, Omega, np.maximum(B, EPS)


def _damped_fixed_point(step: Callable[[np.ndarray], np.ndarray], B: np.ndarray,
                        eta: float = ETA, tol: float = FIXED_POINT_TOL,
                        max_iter: int = FIXED_POINT_MAX_ITER) -> np.ndarray:
    """
    B <- (1 - eta) B + eta * max(eps, step(B)).

    eta is halved (down to 1/64) after the residual grows three times in a row.
    """
    residual = np.inf
    previous = np.inf
    growth = 0
    for _ in range(max_iter):
        target = np.maximum(step(B), EPS)
        updated = (1.0 - eta) * B + eta * target
        residual = relative_change(updated, B)
        B = updated
        if residual <= tol:
            return B
        growth = growth + 1 if residual > previous else 0
        if growth >= 3 and eta > MIN_ETA:
            eta = max(eta / 2.0, MIN_ETA)
            growth = 0
            logger.debug(f"fixed-point residual growing; eta -> {eta}")
        previous = residual
    if residual > FAILURE_RESIDUAL:
        raise ConvergenceError(f"kernel-weight update did not converge in {max_iter} iterations", residual)
    logger.debug(f"kernel-weight update stopped at residual {residual:.3e}")
    return B


def update_weights_mu(Wnorm, Omega, mu: float, B_init, eta: float = ETA) -> np.ndarray:
    """
    Fixed point of B = (1/mu) (W o B^-2) Omega.

    Args:
        Wnorm: K x T squared RKHS norms
        Omega: T x T task relationship
        mu: Regularization weight (> 0)
        B_init: Starting weights

    Returns:
        K x T nonnegative weights, floored at eps
    """
    if not mu > 0:
        raise RelationshipError("mu must be > 0")
    W, Omega, B = _check_inputs(Wnorm, Omega, B_init)
    return project_nonneg(_damped_fixed_point(lambda B: (W / B ** 2) @ Omega / mu, B, eta))


def update_weights_normalized(Wnorm, Omega, B_init, eta: float = ETA) -> np.ndarray:
    """
    Fixed point of B = A / sqrt(tr(A Omega^+ A')), A = (W o B^-2) Omega.

    The trace constraint is active at the solution: tr(B Omega^+ B') = 1.
    """
    W, Omega, B = _check_inputs(Wnorm, Omega, B_init)
    if not np.any(W):
        raise RelationshipError("all RKHS norms are zero; the normalized update is undefined")

    def step(B):
        V = W / B ** 2
        A = V @ Omega
        # tr(A Omega^+ A') = tr(V Omega V')
        denominator = float(np.trace(A @ V.T))
        if not denominator > 0:
            raise RelationshipError("zero normalizer: W o B^-2 is annihilated by Omega")
        return A / np.sqrt(denominator)

    return project_nonneg(_damped_fixed_point(step, B, eta))
