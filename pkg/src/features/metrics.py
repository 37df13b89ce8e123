"""
Evaluation metrics and their aggregation over runs.
"""

from dataclasses import dataclass
from typing import Callable, Dict, Sequence

import numpy as np
from scipy.stats import rankdata

from ..core.errors import MetricError

AUC = "auc"
MSE = "mse"
NMSE = "nmse"
EXPLAINED_VARIANCE = "explained_variance"
ACCURACY = "accuracy"


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.shape != truth.shape:
        raise MetricError(f"{pred.shape[0]} predictions for {truth.shape[0]} targets")
    return pred, truth


def auc(scores, labels) -> float:
    """Rank-based ROC AUC; tied scores count 1/2"""
    scores, labels = _pair(scores, labels)
    positive = labels > 0
    n_pos = int(positive.sum())
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both classes")
    ranks = rankdata(scores)
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy(scores, labels) -> float:
    scores, labels = _pair(scores, labels)
    if labels.size == 0:
        raise MetricError("no predictions")
    return float(np.mean(np.where(scores >= 0, 1.0, -1.0) == labels))


def mse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    if pred.shape[0] < 2:
        raise MetricError("need at least two points")
    return float(np.mean((pred - truth) ** 2))


def nmse(pred, truth) -> float:
    """mse / var(truth)"""
    error = mse(pred, truth)
    variance = float(np.var(np.asarray(truth, dtype=float)))
    if variance == 0:
        raise MetricError("truth is constant; nmse is undefined")
    return error / variance


def explained_variance(pred, truth) -> float:
    return 1.0 - nmse(pred, truth)


METRICS: Dict[str, Callable] = {
    AUC: auc,
    ACCURACY: accuracy,
    MSE: mse,
    NMSE: nmse,
    EXPLAINED_VARIANCE: explained_variance,
}

# 越大越好的指标
HIGHER_IS_BETTER = {AUC: True, ACCURACY: True, EXPLAINED_VARIANCE: True, MSE: False, NMSE: False}


def report_metric(kind: str, protocol: str = "default") -> str:
    if kind == "regression":
        return NMSE
    return ACCURACY if protocol == "object_recognition" else AUC


def selection_metric(kind: str) -> str:
    return EXPLAINED_VARIANCE if kind == "regression" else AUC


@dataclass(frozen=True)
class MetricReport:
    per_task: np.ndarray
    mean: float
    std_over_runs: float
    metric_kind: str
    per_run: np.ndarray

    @classmethod
    def from_runs(cls, per_run_per_task: Sequence[Sequence[float]], kind: str) -> "MetricReport":
        """
        Args:
            per_run_per_task: runs x tasks metric values
            kind: Metric name

        Returns:
            MetricReport whose mean is the average of the per-run task means
        """
        values = np.asarray(per_run_per_task, dtype=float)
        if values.ndim != 2 or values.size == 0:
            raise MetricError("need a nonempty runs x tasks table")
        if kind not in METRICS:
            raise MetricError(f"unknown metric '{kind}'")
        per_run = values.mean(axis=1)
        return cls(values.mean(axis=0), float(per_run.mean()), float(per_run.std()), kind, per_run)
