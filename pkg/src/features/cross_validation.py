"""
Per-task k-fold cross-validation over a hyperparameter grid.

Folds are cut inside every task (stratified for classification); the
validation metric is averaged over tasks without weighting, then over folds.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from sklearn.model_selection import KFold, StratifiedKFold

from ..core.data_io import CLASSIFICATION, DatasetBundle
from ..core.errors import CrossValidationError, KernelError
from ..mkl.joint_trainer import predict
from ..mkl.kernel_bank import GramMatrix, KernelBank, KernelSpec, build_bank
from ..utils.utils import derive_seed
from . import algorithms
from .metrics import HIGHER_IS_BETTER, METRICS, MetricReport, selection_metric

logger = logging.getLogger("CrossValidation")


@dataclass(frozen=True)
class Fold:
    train: Tuple[np.ndarray, ...]
    val: Tuple[np.ndarray, ...]


@dataclass(frozen=True)
class CVResult:
    best_params: Dict
    report: MetricReport
    scores: Tuple[Tuple[Dict, float], ...]


def make_folds(bundle: DatasetBundle, folds: int, seed: int) -> List[Fold]:
    """k folds per task, each task shuffled with its own derived seed"""
    if folds < 2:
        raise CrossValidationError("folds must be >= 2")
    per_task = []
    for t, task in enumerate(bundle.tasks):
        if task.kind == CLASSIFICATION:
            _, counts = np.unique(task.labels, return_counts=True)
            if counts.size < 2 or counts.min() < folds:
                raise CrossValidationError(
                    f"task {task.task_id}: {folds}-fold CV needs {folds} examples of each class, "
                    f"has {counts.tolist()}")
            splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=derive_seed(seed, t))
        else:
            if task.n < folds:
                raise CrossValidationError(f"task {task.task_id}: {task.n} examples for {folds} folds")
            splitter = KFold(n_splits=folds, shuffle=True, random_state=derive_seed(seed, t))
        per_task.append(list(splitter.split(task.features, task.labels)))
    return [
        Fold(tuple(np.sort(per_task[t][f][0]) for t in range(bundle.n_tasks)),
             tuple(np.sort(per_task[t][f][1]) for t in range(bundle.n_tasks)))
        for f in range(folds)
    ]


def subset_bank(bank: KernelBank, fold: Fold) -> KernelBank:
    """
    Fold train grams and val x train matrices sliced from a full train bank.

    Each fold gram is renormalized to unit trace and its val columns share
    the same factor.
    """
    grams, cross = [], []
    for t, row in enumerate(bank.grams):
        train_idx, val_idx = fold.train[t], fold.val[t]
        grams_t, cross_t = [], []
        for g in row:
            sub = g.values[np.ix_(train_idx, train_idx)]
            trace = float(np.trace(sub))
            if not trace > 0:
                raise KernelError(f"task {t}: fold gram for {g.spec.label} has zero trace")
            scale = g.trace_scale * trace
            grams_t.append(GramMatrix(sub / trace, g.spec, True, scale))
            cross_t.append(GramMatrix(g.values[np.ix_(val_idx, train_idx)] / trace, g.spec, True, scale))
        grams.append(tuple(grams_t))
        cross.append(tuple(cross_t))
    return KernelBank(bank.specs, tuple(grams), tuple(cross))


def subset_bundle(bundle: DatasetBundle, rows: Sequence[np.ndarray]) -> DatasetBundle:
    return bundle.with_tasks([task.subset(rows[t]) for t, task in enumerate(bundle.tasks)])


def _tie_key(params: Dict) -> Tuple:
    return (params.get("C", params.get("lam", 0.0)), params.get("mu", 0.0))


def select_best(scores: Sequence[Tuple[Dict, float]], higher_is_better: bool = True) -> int:
    """Index of the best grid point; ties go to smaller C (or lam), then smaller mu, then grid order"""
    if not scores:
        raise CrossValidationError("empty parameter grid")
    sign = -1.0 if higher_is_better else 1.0
    order = sorted(range(len(scores)), key=lambda i: (sign * scores[i][1], _tie_key(scores[i][0]), i))
    return order[0]


def _evaluate(name, fold_bank, fold_labels, val_labels, params, settings, prepared, metric) -> List[float]:
    model = algorithms.fit(name, fold_bank, fold_labels, params, settings, prepared)
    scores = predict(model, fold_bank)
    return [METRICS[metric](s, y) for s, y in zip(scores, val_labels)]


def cross_validate(bundle: DatasetBundle, specs: Sequence[KernelSpec], algorithm: str, grid: Sequence[Dict],
                   folds: int, seed: int, bank: Optional[KernelBank] = None,
                   settings: Optional["algorithms.FitSettings"] = None, n_jobs: int = 1) -> CVResult:
    """
    Pick the grid point with the best mean validation metric.

    Args:
        bundle: Training bundle
        specs: Base kernels
        algorithm: Algorithm name (see algorithms)
        grid: Parameter dicts
        folds: Folds per task
        seed: Fold seed
        bank: Full train bank of `bundle` when already built
        settings: Fit settings; defaults derived from the bundle kind
        n_jobs: Worker threads over (grid point, fold)

    Returns:
        CVResult with the chosen parameters and the fold x task report at that point
    """
    grid = [dict(point) for point in grid]
    if not grid:
        raise CrossValidationError("empty parameter grid")
    if settings is None:
        settings = algorithms.FitSettings(kind="svm" if bundle.kind == CLASSIFICATION else "krr", seed=seed)
    if bank is None:
        bank = build_bank(bundle, specs, n_jobs=n_jobs)
    metric = selection_metric(bundle.kind)

    fold_list = make_folds(bundle, folds, seed)
    fold_banks = [subset_bank(bank, fold) for fold in fold_list]
    fold_labels = [[bundle.tasks[t].labels[fold.train[t]] for t in range(bundle.n_tasks)] for fold in fold_list]
    val_labels = [[bundle.tasks[t].labels[fold.val[t]] for t in range(bundle.n_tasks)] for fold in fold_list]
    prepared = [algorithms.prepare(algorithm, subset_bundle(bundle, fold.train), specs, settings)
                for fold in fold_list]

    jobs = [(p, f) for p in range(len(grid)) for f in range(len(fold_list))]
    results = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_evaluate)(algorithm, fold_banks[f], fold_labels[f], val_labels[f], grid[p], settings,
                           prepared[f], metric)
        for p, f in jobs)

    tables = [[None] * len(fold_list) for _ in grid]
    for (p, f), per_task in zip(jobs, results):
        tables[p][f] = per_task
    scores = [(grid[p], float(np.mean([np.mean(row) for row in tables[p]]))) for p in range(len(grid))]

    best = select_best(scores, HIGHER_IS_BETTER[metric])
    logger.info(f"{algorithm}: best {grid[best]} with validation {metric}={scores[best][1]:.4f}")
    return CVResult(grid[best], MetricReport.from_runs(tables[best], metric), tuple(scores))
