"""
Baselines on the same kernel bank: single-kernel STL, uniform-average AVG,
and per-task lp-norm MKL (IMKL).
"""

import logging
import math
from typing import List, Sequence, Tuple, Union

import numpy as np

from ..core.errors import ConfigError, DimensionError
from ..utils.utils import relative_change
from .joint_trainer import IterationRecord, MkMtrlModel, TrainConfig, check_inputs, solve_combined
from .kernel_bank import KernelBank
from .relationship import EPS
from .solvers import DualSolution, rkhs_norms

logger = logging.getLogger("Baselines")


def lp_weight_update(W, p: float) -> np.ndarray:
    """
    Closed-form weights under ||beta||_p <= 1:
    beta_k = W_k^(1/(p+1)) / (sum_j W_j^(p/(p+1)))^(1/p); p = inf gives all ones.
    """
    W = np.asarray(W, dtype=float)
    if p < 1:
        raise ConfigError(f"p must be >= 1, got {p}")
    K = W.shape[0]
    if math.isinf(p):
        return np.ones(K)
    if not np.any(W > 0):
        logger.warning("all RKHS norms are zero; falling back to uniform kernel weights")
        return np.full(K, K ** (-1.0 / p))
    numerator = W ** (1.0 / (p + 1.0))
    denominator = np.sum(W ** (p / (p + 1.0))) ** (1.0 / p)
    return np.maximum(numerator / denominator, EPS)


def penalty_weight_update(W, mu: float) -> np.ndarray:
    """beta_k = (W_k / mu)^(1/3), the minimizer of 1/2 W/beta + (mu/4) beta^2"""
    W = np.asarray(W, dtype=float)
    if not mu > 0:
        raise ConfigError("mu must be > 0")
    if not np.any(W > 0):
        logger.warning("all RKHS norms are zero; falling back to uniform kernel weights")
        return np.full(W.shape[0], 1.0 / W.shape[0])
    return np.maximum(np.cbrt(W / mu), EPS)


def _select(bank: KernelBank, kernels: Union[int, Sequence[int]]) -> List[int]:
    chosen = [kernels] * bank.n_tasks if isinstance(kernels, (int, np.integer)) else list(kernels)
    if len(chosen) != bank.n_tasks:
        raise DimensionError(f"{len(chosen)} kernel choices for {bank.n_tasks} tasks")
    for k in chosen:
        if not 0 <= k < bank.n_kernels:
            raise DimensionError(f"kernel index {k} out of range for K={bank.n_kernels}")
    return [int(k) for k in chosen]


def stl_weights(bank: KernelBank, kernels: Union[int, Sequence[int]] = 0) -> np.ndarray:
    """One-hot K x T weights for the chosen kernel of each task"""
    B = np.zeros((bank.n_kernels, bank.n_tasks))
    for t, k in enumerate(_select(bank, kernels)):
        B[k, t] = 1.0
    return B


def fit_stl(bank: KernelBank, labels: Sequence, cfg: TrainConfig,
            kernels: Union[int, Sequence[int]] = 0) -> List[DualSolution]:
    """Independent single-kernel solves, one chosen kernel per task"""
    labels = check_inputs(bank, labels)
    B = stl_weights(bank, kernels)
    return [solve_combined(bank.stacked(t), B[:, t], labels[t], cfg, t) for t in range(bank.n_tasks)]


def fit_average(bank: KernelBank, labels: Sequence, cfg: TrainConfig) -> List[DualSolution]:
    """One solve per task on the uniform average of the base kernels"""
    labels = check_inputs(bank, labels)
    beta = np.full(bank.n_kernels, 1.0 / bank.n_kernels)
    return [solve_combined(bank.stacked(t), beta, labels[t], cfg, t) for t in range(bank.n_tasks)]


def _fit_imkl_task(stack: np.ndarray, y: np.ndarray, cfg: TrainConfig, p: float, t: int):
    K = stack.shape[0]
    beta = np.full(K, 1.0 / K)
    sol = solve_combined(stack, beta, y, cfg, t)
    for _ in range(cfg.max_inner * cfg.max_outer):
        W = rkhs_norms(stack, beta, sol, y)
        updated = penalty_weight_update(W, cfg.mu) if cfg.mu is not None else lp_weight_update(W, p)
        change = relative_change(updated, beta)
        beta = updated
        sol = solve_combined(stack, beta, y, cfg, t)
        if change <= cfg.tol_B:
            break
    return beta, sol


def fit_imkl(bank: KernelBank, labels: Sequence, cfg: TrainConfig,
             p: float = 2.0) -> Tuple[np.ndarray, List[DualSolution]]:
    """
    Per-task MKL with no coupling between tasks.

    Alternates solving the task with closed-form weight updates: the
    penalty form (W/mu)^(1/3) when cfg.mu is set, otherwise the
    ||beta||_p <= 1 constraint form.

    Returns:
        (B, models) with B stored K x T
    """
    labels = check_inputs(bank, labels)
    results = [_fit_imkl_task(bank.stacked(t), labels[t], cfg, p, t) for t in range(bank.n_tasks)]
    B = np.column_stack([beta for beta, _ in results])
    return B, [sol for _, sol in results]


def as_model(bank: KernelBank, labels: Sequence, B: np.ndarray, models: Sequence[DualSolution],
             cfg: TrainConfig, algorithm: str) -> MkMtrlModel:
    """Wrap a baseline fit as a model with Omega = I/T"""
    T = bank.n_tasks
    return MkMtrlModel(
        B=np.asarray(B, dtype=float),
        Omega=np.eye(T) / T,
        models=tuple(models),
        specs=bank.specs,
        labels=tuple(check_inputs(bank, labels)),
        trace_scales=bank.trace_scales(),
        kind=cfg.kind,
        history=(IterationRecord(0, 0, float("nan"), 0.0),),
        algorithm=algorithm,
    )
