"""
Online Trainer

Two stages:
1. Mistake-driven updates of B in the space of pairwise base-kernel values
   z = (k_1(x, x'), ..., k_K(x, x')), coupled across tasks through Omega.
   Only pointwise kernel evaluations are used; no gram matrix is built.
2. Per-task solves on the kernels combined with the learned B.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import List, Sequence, Tuple

import numpy as np

from ..core.data_io import CLASSIFICATION, DatasetBundle
from ..core.errors import ConfigError, DimensionError, TrainingError
from ..utils.utils import derive_seed, relative_change
from .joint_trainer import IterationRecord, MkMtrlModel, TrainConfig, check_inputs, solve_all
from .kernel_bank import KernelBank, KernelSpec, build_bank, compute_gram, diagonal_trace, kernel_eval
from .relationship import project_nonneg, update_relationship

logger = logging.getLogger("OnlineTrainer")

MARGIN = "margin"
SIGN = "sign"

CHECK_EVERY = 10000
CHECK_PAIRS = 200


@dataclass(frozen=True)
class PairExample:
    z: np.ndarray
    l: float
    task: int


@dataclass(frozen=True)
class OnlineState:
    B: np.ndarray
    Omega: np.ndarray
    round: int = 0
    mistakes: int = 0
    rng_seed: int = 0


def task_trace_scales(bundle: DatasetBundle, specs: Sequence[KernelSpec]) -> np.ndarray:
    """T x K train-gram traces, from the diagonals only"""
    return np.array([[diagonal_trace(spec, task.features) for spec in specs] for task in bundle.tasks])


def make_pair_example(bundle: DatasetBundle, specs: Sequence[KernelSpec], trace_scales,
                      t: int, i: int, i2: int) -> PairExample:
    """z_k = k_k(x_ti, x_ti2) / trace_tk, l = +1 iff y_ti == y_ti2"""
    if not 0 <= t < bundle.n_tasks:
        raise DimensionError(f"task {t} out of range for {bundle.n_tasks} tasks")
    task = bundle.tasks[t]
    if not (0 <= i < task.n and 0 <= i2 < task.n):
        raise DimensionError(f"pair ({i}, {i2}) out of range for task {t} with {task.n} examples")
    x, x2 = task.features[i], task.features[i2]
    z = np.array([kernel_eval(spec, x, x2, trace_scales[t][k]) for k, spec in enumerate(specs)])
    l = 1.0 if task.labels[i] == task.labels[i2] else -1.0
    return PairExample(z, l, t)


def is_mistake(l: float, l_hat: float, predicate: str = MARGIN) -> bool:
    if predicate == MARGIN:
        return l * l_hat < 1.0
    return np.sign(l_hat) != l


def online_step(state: OnlineState, ex: PairExample, mu: float, omega_period: int,
                predicate: str = MARGIN) -> OnlineState:
    """
    One round: on a mistake every task column t' moves by (1/mu) l Omega[t, t'] z.

    Omega is recomputed from B every omega_period-th mistake once B is nonzero.
    """
    l_hat = float(state.B[:, ex.task] @ ex.z)
    if not is_mistake(ex.l, l_hat, predicate):
        return replace(state, round=state.round + 1)

    B = project_nonneg(state.B + (ex.l / mu) * np.outer(ex.z, state.Omega[ex.task]))
    mistakes = state.mistakes + 1
    Omega = state.Omega
    if mistakes % omega_period == 0 and np.any(B):
        Omega = update_relationship(B)
    return replace(state, B=B, Omega=Omega, round=state.round + 1, mistakes=mistakes)


def decode_pair(m: int):
    """m-th pair (i, i2), i <= i2, in the order (0,0), (0,1), (1,1), (0,2), ..."""
    i2 = (math.isqrt(8 * m + 1) - 1) // 2
    return m - i2 * (i2 + 1) // 2, i2


def sample_pair(rng: np.random.Generator, n: int):
    return decode_pair(int(rng.integers(n * (n + 1) // 2)))


def _sample_check_set(bundle, specs, trace_scales, seed: int, size: int) -> List[List[PairExample]]:
    rng = np.random.default_rng(derive_seed(seed, 1))
    checks = []
    for t, task in enumerate(bundle.tasks):
        pairs = [sample_pair(rng, task.n) for _ in range(size)]
        checks.append([make_pair_example(bundle, specs, trace_scales, t, i, i2) for i, i2 in pairs])
    return checks


def _check_hinge(B: np.ndarray, checks: List[List[PairExample]]) -> float:
    losses = []
    for t, examples in enumerate(checks):
        Z = np.array([ex.z for ex in examples])
        L = np.array([ex.l for ex in examples])
        losses.append(float(np.mean(np.maximum(0.0, 1.0 - L * (Z @ B[:, t])))))
    return float(np.mean(losses))


def pair_hinge_loss(bundle: DatasetBundle, specs: Sequence[KernelSpec], B, t: int) -> float:
    """
    Mean pair hinge [1 - l beta_t'z]_+ over all pairs i <= i2 of task t.

    Diagnostic only: builds the task's grams.
    """
    task = bundle.tasks[t]
    beta = np.asarray(B, dtype=float)[:, t]
    combined = np.zeros((task.n, task.n))
    for k, spec in enumerate(specs):
        combined += beta[k] * compute_gram(spec, task.features).values / diagonal_trace(spec, task.features)
    same = np.where(task.labels[:, None] == task.labels[None, :], 1.0, -1.0)
    upper = np.triu_indices(task.n)
    return float(np.mean(np.maximum(0.0, 1.0 - same[upper] * combined[upper])))


@dataclass(frozen=True)
class StageOneResult:
    B: np.ndarray
    Omega: np.ndarray
    mistakes: int
    history: Tuple[IterationRecord, ...]


def online_stage_one(bundle: DatasetBundle, specs: Sequence[KernelSpec], R: int, mu: float, omega_period: int,
                     seed: int, predicate: str = MARGIN, check_every: int = CHECK_EVERY,
                     check_pairs: int = CHECK_PAIRS) -> StageOneResult:
    """
    R rounds of: sample a task, sample a pair i <= i2 uniformly, online_step.

    B starts at 0 and Omega at I/T. The returned history holds checkpoints
    (outer = round, inner = mistakes, objective = mean pair hinge on the fixed check pairs).
    """
    if bundle.kind != CLASSIFICATION:
        raise ConfigError("the online trainer needs classification tasks")
    if R < 0:
        raise ConfigError("R must be >= 0")
    if not mu > 0 or omega_period < 1:
        raise ConfigError("mu must be > 0 and omega_period >= 1")
    if predicate not in (MARGIN, SIGN):
        raise ConfigError(f"unknown mistake predicate '{predicate}'")
    specs = tuple(specs)
    T, K = bundle.n_tasks, len(specs)

    trace_scales = task_trace_scales(bundle, specs)
    checks = _sample_check_set(bundle, specs, trace_scales, seed, check_pairs)
    rng = np.random.default_rng(seed)
    state = OnlineState(B=np.zeros((K, T)), Omega=np.eye(T) / T, rng_seed=seed)

    history = []
    last_B = state.B
    for r in range(1, R + 1):
        t = int(rng.integers(T))
        i, i2 = sample_pair(rng, bundle.tasks[t].n)
        state = online_step(state, make_pair_example(bundle, specs, trace_scales, t, i, i2),
                            mu, omega_period, predicate)
        if r % check_every == 0 or r == R:
            hinge = _check_hinge(state.B, checks)
            history.append(IterationRecord(r, state.mistakes, hinge, relative_change(state.B, last_B)))
            last_B = state.B
            logger.info(f"round={r} mistakes={state.mistakes} check_hinge={hinge:.6f}")

    if not np.any(state.B):
        raise TrainingError("no mistakes driven learning: B is identically zero (mu too large or degenerate data)")
    return StageOneResult(state.B, state.Omega, state.mistakes, tuple(history))


def online_stage_two(bank: KernelBank, labels: Sequence, stage_one: StageOneResult,
                     cfg: TrainConfig) -> MkMtrlModel:
    """Solve every task on sum_k beta_tk K_tk with the online B"""
    labels = check_inputs(bank, labels)
    B = stage_one.B.copy()
    empty = ~np.any(B, axis=0)
    if np.any(empty):
        # 没有学到权重的任务: 用其余任务的平均列
        logger.warning(f"tasks {np.flatnonzero(empty).tolist()} have an all-zero kernel column; "
                       f"using the mean of the learned columns")
        B[:, empty] = B[:, ~empty].mean(axis=1, keepdims=True)

    stacks = [bank.stacked(t) for t in range(bank.n_tasks)]
    models = solve_all(stacks, B, labels, cfg)
    return MkMtrlModel(
        B=B,
        Omega=stage_one.Omega,
        models=tuple(models),
        specs=bank.specs,
        labels=tuple(labels),
        trace_scales=bank.trace_scales(),
        kind=cfg.kind,
        history=stage_one.history,
        algorithm="mkmtrl_online",
    )


def fit_online(bundle: DatasetBundle, specs: Sequence[KernelSpec], R: int, mu: float, omega_period: int,
               seed: int, cfg: TrainConfig, predicate: str = MARGIN,
               check_every: int = CHECK_EVERY, check_pairs: int = CHECK_PAIRS) -> MkMtrlModel:
    """
    Learn B and Omega online, then solve every task on its combined kernel.

    Args:
        bundle: Training bundle (classification)
        specs: Base kernels
        R: Number of rounds
        mu: Step scale, updates are (1/mu) l Omega z
        omega_period: Mistakes between Omega refreshes (1 refreshes on every mistake)
        seed: Sampling seed
        cfg: Stage-two solver settings
        predicate: 'margin' (l * l_hat < 1) or 'sign'

    Returns:
        MkMtrlModel carrying the online B / Omega
    """
    stage_one = online_stage_one(bundle, specs, R, mu, omega_period, seed, predicate, check_every, check_pairs)
    bank = build_bank(bundle, specs, n_jobs=cfg.n_jobs)
    return online_stage_two(bank, bundle.labels, stage_one, cfg)
