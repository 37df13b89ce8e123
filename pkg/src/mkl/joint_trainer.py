"""
Joint Trainer

Alternating minimization over (alpha, B, Omega):
- inner loop: combine kernels with B, solve every task, recompute RKHS norms, update B
- outer loop: update Omega from B
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from ..core.data_io import FeatureScaler
from ..core.errors import DimensionError, SolverError, TrainingError
from ..utils.utils import relative_change
from .kernel_bank import KernelBank, KernelSpec
from .relationship import (EPS, check_relationship, trace_regularizer, update_relationship,
                           update_weights_mu, update_weights_normalized)
from .solvers import (KRR, SVM, DualSolution, SolverConfig, krr_solve, predict_scores, rkhs_norms,
                      svm_dual_solve)

logger = logging.getLogger("JointTrainer")


@dataclass(frozen=True)
class TrainConfig:
    C: float = 1.0
    # None: normalized (trace-constrained) weight update; otherwise the mu-penalized one
    mu: Optional[float] = None
    max_outer: int = 50
    max_inner: int = 20
    tol_B: float = 1e-4
    kind: str = SVM
    lam: float = 1.0
    solver_tol: float = 1e-4
    learn_omega: bool = True
    n_jobs: int = 1

    def __post_init__(self):
        if self.kind not in (SVM, KRR):
            raise TrainingError(f"unknown solver kind '{self.kind}'")
        if self.max_outer < 1 or self.max_inner < 1 or not self.tol_B > 0:
            raise TrainingError("max_outer, max_inner and tol_B must be positive")
        if not (self.C > 0 and self.lam > 0):
            raise TrainingError("C and lam must be positive")
        if self.mu is not None and not self.mu > 0:
            raise TrainingError("mu must be positive")

    @property
    def solver(self) -> SolverConfig:
        return SolverConfig(C=self.C, lam=self.lam, tol=self.solver_tol)


@dataclass(frozen=True)
class IterationRecord:
    outer: int
    inner: int
    objective: float
    b_change: float


@dataclass(frozen=True)
class MkMtrlModel:
    B: np.ndarray
    Omega: np.ndarray
    models: Tuple[DualSolution, ...]
    specs: Tuple[KernelSpec, ...]
    labels: Tuple[np.ndarray, ...]
    trace_scales: np.ndarray
    kind: str = SVM
    history: Tuple[IterationRecord, ...] = ()
    algorithm: str = "mkmtrl"
    # 训练特征: 用于对新数据计算 cross kernel
    train_features: Optional[Tuple[np.ndarray, ...]] = None
    scaler: Optional[FeatureScaler] = None
    # 训练数据末尾追加了常数 1 特征
    add_bias: bool = False

    @property
    def n_tasks(self) -> int:
        return self.B.shape[1]

    @property
    def objectives(self) -> List[float]:
        return [record.objective for record in self.history]


def check_inputs(bank: KernelBank, labels: Sequence) -> List[np.ndarray]:
    if len(labels) != bank.n_tasks:
        raise DimensionError(f"bank has {bank.n_tasks} tasks but {len(labels)} label vectors were given")
    labels = [np.asarray(y, dtype=float).ravel() for y in labels]
    for t, y in enumerate(labels):
        n = bank.grams[t][0].shape[0]
        if y.shape[0] != n:
            raise DimensionError(f"task {t}: {y.shape[0]} labels for a {n} x {n} gram")
    return labels


def solve_combined(stack: np.ndarray, beta: np.ndarray, y: np.ndarray, cfg: TrainConfig,
                   task: Optional[int] = None) -> DualSolution:
    """Solve one task on sum_k beta_k K_k"""
    combined = np.tensordot(beta, stack, axes=1)
    try:
        if cfg.kind == SVM:
            return svm_dual_solve(combined, y, cfg.solver)
        return krr_solve(combined, y, cfg.solver)
    except SolverError as e:
        raise TrainingError(str(e), task) from None


def solve_all(stacks: Sequence[np.ndarray], B: np.ndarray, labels: Sequence[np.ndarray],
              cfg: TrainConfig) -> List[DualSolution]:
    return Parallel(n_jobs=cfg.n_jobs, prefer="threads")(
        delayed(solve_combined)(stacks[t], B[:, t], labels[t], cfg, t) for t in range(len(stacks)))


def norm_matrix(stacks: Sequence[np.ndarray], B: np.ndarray, models: Sequence[DualSolution],
                labels: Sequence[np.ndarray]) -> np.ndarray:
    """K x T matrix of ||w_tk||^2"""
    return np.column_stack([rkhs_norms(stacks[t], B[:, t], models[t], labels[t]) for t in range(len(stacks))])


def _task_loss(stack: np.ndarray, beta: np.ndarray, sol: DualSolution, y: np.ndarray, cfg: TrainConfig) -> float:
    v = sol.alpha * y if sol.kind == SVM else sol.alpha
    scores = np.tensordot(beta, stack, axes=1) @ v + sol.bias
    if sol.kind == SVM:
        return cfg.C * float(np.sum(np.maximum(0.0, 1.0 - y * scores)))
    return float(np.sum((y - scores) ** 2)) / (2.0 * cfg.lam)


def _objective(stacks, labels, B, Omega, models, cfg: TrainConfig) -> float:
    total = 0.0
    for t, stack in enumerate(stacks):
        beta = B[:, t]
        W = rkhs_norms(stack, beta, models[t], labels[t])
        if np.any((beta < EPS / 2) & (W > 0)):
            raise TrainingError("kernel weight below eps carries a nonzero norm", t)
        safe = np.where(beta > 0, beta, 1.0)
        total += 0.5 * float(np.sum(np.where(beta > 0, W / safe, 0.0)))
        total += _task_loss(stack, beta, models[t], labels[t], cfg)
    if cfg.mu is not None:
        # (mu/4) makes B = (1/mu)(W o B^-2) Omega the exact minimizer in B
        total += 0.25 * cfg.mu * trace_regularizer(B, Omega)
    return total


def objective(bank: KernelBank, labels: Sequence, B, Omega, models: Sequence[DualSolution],
              cfg: TrainConfig) -> float:
    """
    Regularized training objective.

    sum_t (1/2 sum_k ||w_tk||^2 / beta_tk + loss_t) + (mu/4) tr(B Omega^+ B'),
    where loss_t is C * sum hinge (svm) or ||y - f||^2 / (2 lam) (krr). The
    mu term is dropped for the normalized update.
    """
    labels = check_inputs(bank, labels)
    B = np.asarray(B, dtype=float)
    if B.shape != (bank.n_kernels, bank.n_tasks):
        raise DimensionError(f"B must be {bank.n_kernels} x {bank.n_tasks}, got {B.shape}")
    stacks = [bank.stacked(t) for t in range(bank.n_tasks)]
    return _objective(stacks, labels, B, np.asarray(Omega, dtype=float), models, cfg)


def _update_weights(W: np.ndarray, Omega: np.ndarray, B: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    if cfg.mu is not None:
        return update_weights_mu(W, Omega, cfg.mu, B)
    return update_weights_normalized(W, Omega, B)


def initial_weights(K: int, Omega: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    """
    Uniform 1/K weights. The normalized update is rescaled onto tr(B Omega^+ B') = 1
    so the first recorded objective is taken at a feasible point.
    """
    B = np.full((K, Omega.shape[0]), 1.0 / K)
    if cfg.mu is None:
        B = B / np.sqrt(trace_regularizer(B, Omega))
    return B


def fit_joint(bank: KernelBank, labels: Sequence, cfg: TrainConfig,
              omega_init: Optional[np.ndarray] = None) -> MkMtrlModel:
    """
    Learn kernel weights B, task relationship Omega and per-task duals.

    Args:
        bank: Unit-trace train grams, T x K
        labels: T label vectors
        cfg: Training configuration
        omega_init: Starting Omega (defaults to I/T); with cfg.learn_omega False it stays fixed

    Returns:
        MkMtrlModel whose history holds the objective at the start and after each outer iteration
    """
    labels = check_inputs(bank, labels)
    T, K = bank.n_tasks, bank.n_kernels
    stacks = [bank.stacked(t) for t in range(T)]

    Omega = np.eye(T) / T if omega_init is None else np.asarray(omega_init, dtype=float)
    if Omega.shape != (T, T):
        raise DimensionError(f"omega_init must be {T} x {T}, got {Omega.shape}")
    check_relationship(Omega, max_trace=1.0 if cfg.learn_omega else None)
    B = initial_weights(K, Omega, cfg)
    models = solve_all(stacks, B, labels, cfg)
    history = [IterationRecord(0, 0, _objective(stacks, labels, B, Omega, models, cfg), 0.0)]

    for outer in range(1, cfg.max_outer + 1):
        B_start = B
        inner = 0
        for inner in range(1, cfg.max_inner + 1):
            W = norm_matrix(stacks, B, models, labels)
            B_next = _update_weights(W, Omega, B, cfg)
            change = relative_change(B_next, B)
            B = B_next
            models = solve_all(stacks, B, labels, cfg)
            if change <= cfg.tol_B:
                break

        if cfg.learn_omega:
            Omega = update_relationship(B)
            check_relationship(Omega)

        outer_change = relative_change(B, B_start)
        value = _objective(stacks, labels, B, Omega, models, cfg)
        history.append(IterationRecord(outer, inner, value, outer_change))
        logger.info(f"outer={outer} inner={inner} objective={value:.6g} b_change={outer_change:.3e}")
        if outer_change <= cfg.tol_B or not cfg.learn_omega:
            break

    return MkMtrlModel(
        B=B,
        Omega=Omega,
        models=tuple(models),
        specs=bank.specs,
        labels=tuple(labels),
        trace_scales=bank.trace_scales(),
        kind=cfg.kind,
        history=tuple(history),
    )


def predict(model: MkMtrlModel, bank_cross: KernelBank) -> List[np.ndarray]:
    """Per-task scores for the test rows behind bank_cross.cross"""
    if tuple(bank_cross.specs) != tuple(model.specs):
        raise DimensionError("cross bank was built with different kernel specs than the model")
    if bank_cross.n_tasks != model.n_tasks:
        raise DimensionError(f"model has {model.n_tasks} tasks, cross bank has {bank_cross.n_tasks}")
    return [
        predict_scores(bank_cross.stacked_cross(t), model.B[:, t], model.models[t], model.labels[t])
        for t in range(model.n_tasks)
    ]
