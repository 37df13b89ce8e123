"""
Experiment Runner

Runs a declarative experiment file end to end:
- data loading and per-run train/test splits
- kernel grids and banks
- cross-validated hyperparameters per algorithm
- test-set evaluation, timings and task-cluster analysis
"""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed

from ..core.config import ConfigManager, ExperimentConfig, load_experiment_config
from ..core.data_io import (CLASSIFICATION, DatasetBundle, SplitSpec, add_bias_feature, apply_scaler,
                            load_csv, load_sparse_text, split, synth_clustered_tasks, zscore_normalize)
from ..core.errors import ConfigError, MkmtrlError
from ..mkl.joint_trainer import MkMtrlModel, predict
from ..mkl.kernel_bank import KernelSpec, build_bank, grid_specs
from ..mkl.task_clusters import cluster_agreement, cluster_contrast, cluster_tasks
from ..utils.utils import derive_seed
from . import algorithms
from .cross_validation import cross_validate
from .metrics import METRICS, report_metric
from .reporter import emit_report

logger = logging.getLogger("Experiment")


@dataclass
class RunResult:
    algorithm: str
    train_size: int
    run: int
    metric: str
    per_task: List[float]
    params: Dict
    fit_seconds: float
    model: Optional[MkMtrlModel] = None
    cluster_stats: Optional[Dict[str, float]] = None


@dataclass
class ExperimentResults:
    config: ExperimentConfig
    runs: List[RunResult] = field(default_factory=list)
    errors: List[str] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.errors)


def load_dataset(config: ExperimentConfig) -> DatasetBundle:
    """Load (or generate) the full bundle described by the config"""
    if config.data_format == "synthetic":
        bundle = synth_clustered_tasks(config.synth_tasks, config.synth_clusters, config.synth_n,
                                       config.synth_dim, config.synth_noise, config.seed, kind=config.data_kind,
                                       active=config.synth_active)
    elif config.data_format == "csv":
        bundle = load_csv(config.resolve_path(config.data_path[0]), config.csv_label_col, config.csv_task_col,
                          header=config.csv_header, kind=config.data_kind)
    else:
        index = config.resolve_path(config.data_path[1]) if len(config.data_path) > 1 else None
        bundle = load_sparse_text(config.resolve_path(config.data_path[0]), kind=config.data_kind, task_index=index)
    if config.add_bias:
        bundle = add_bias_feature(bundle)
    return bundle


def validate(config: ExperimentConfig) -> DatasetBundle:
    """
    Check the config and the data without fitting anything.

    Raises:
        ConfigError / FileNotFoundError / ParseError on a bad experiment
    """
    config.validate()
    bundle = load_dataset(config)
    smallest = min(task.n for task in bundle.tasks)
    too_large = [k for k in config.train_per_task if k >= smallest]
    if too_large:
        raise ConfigError(f"TRAIN_PER_TASK {too_large} leaves no test rows (smallest task has {smallest})")
    if "mkmtrl_online" in config.algorithms and bundle.kind != CLASSIFICATION:
        raise ConfigError("mkmtrl_online supports classification data only")
    return bundle


def kernel_specs(config: ExperimentConfig, train: DatasetBundle) -> List[KernelSpec]:
    """Expand the KERNELS templates on the pooled training rows"""
    pooled = np.vstack([task.features for task in train.tasks])
    specs = []
    for template, count in config.kernels:
        specs.extend(grid_specs(template, pooled, count))
    return specs


class ExperimentRunner:
    def __init__(self, config: ExperimentConfig, bundle: Optional[DatasetBundle] = None):
        self.config = config
        self.settings = ConfigManager.get_instance()
        self.bundle = bundle if bundle is not None else load_dataset(config)

    def prepare_split(self, train_size: int, run: int) -> Tuple[DatasetBundle, DatasetBundle]:
        stratified = self.bundle.kind == CLASSIFICATION
        train, test = split(self.bundle, SplitSpec(train_size, derive_seed(self.config.seed, run), stratified))
        if self.config.normalize:
            train = zscore_normalize(train)
            test = apply_scaler(test, train.scaler)
        return train, test

    def _cv_folds(self, train: DatasetBundle) -> int:
        if train.kind != CLASSIFICATION:
            return min(self.config.cv_folds, min(task.n for task in train.tasks))
        counts = [np.unique(task.labels, return_counts=True)[1] for task in train.tasks]
        smallest = min(int(c.min()) if c.size == 2 else 0 for c in counts)
        return min(self.config.cv_folds, smallest)

    def _choose_params(self, name: str, train: DatasetBundle, specs, bank, fit_settings, run_seed: int) -> Dict:
        grid = algorithms.param_grid(name, self.config, len(specs))
        if len(grid) == 1:
            return grid[0]
        folds = self._cv_folds(train)
        if folds < 2:
            chosen = grid[len(grid) // 2]
            logger.warning(f"{name}: too few examples per class for cross-validation; using {chosen}")
            return chosen
        if folds < self.config.cv_folds:
            logger.warning(f"{name}: reducing cross-validation to {folds} folds")
        result = cross_validate(train, specs, name, grid, folds, derive_seed(run_seed, 2),
                                bank=bank, settings=fit_settings)
        return result.best_params

    def run_one(self, train_size: int, run: int) -> List[RunResult]:
        """Every algorithm on one (train size, run) split"""
        run_seed = derive_seed(self.config.seed, run)
        train, test = self.prepare_split(train_size, run)
        specs = kernel_specs(self.config, train)
        bank = build_bank(train, specs, test, cache_dir=self.settings.gram_cache)
        metric = report_metric(train.kind, self.config.protocol)

        results = []
        for name in self.config.algorithms:
            fit_settings = algorithms.FitSettings.from_config(self.config, seed=run_seed)
            params = self._choose_params(name, train, specs, bank, fit_settings, run_seed)

            started = time.perf_counter()
            prepared = algorithms.prepare(name, train, specs, fit_settings)
            model = algorithms.fit(name, bank, train.labels, params, fit_settings, prepared)
            elapsed = time.perf_counter() - started

            scores = predict(model, bank)
            per_task = [METRICS[metric](s, task.labels) for s, task in zip(scores, test.tasks)]
            model = replace(model, train_features=tuple(task.features for task in train.tasks),
                            scaler=train.scaler, add_bias=self.config.add_bias)
            results.append(RunResult(name, train_size, run, metric, per_task, params, elapsed, model,
                                     self._cluster_stats(model)))
            logger.info(f"{name} n={train_size} run={run}: {metric}={np.mean(per_task):.4f} "
                        f"({elapsed:.2f}s, {params})")
        return results

    def _cluster_stats(self, model: MkMtrlModel) -> Optional[Dict[str, float]]:
        if model.algorithm not in (algorithms.MKMTRL, algorithms.MKMTRL_ONLINE) or model.n_tasks < 3:
            return None
        found = cluster_tasks(model.Omega)
        stats = {"n_clusters": float(len(set(found)))}
        truth = self.bundle.clusters
        if truth is not None:
            stats["within"], stats["cross"] = cluster_contrast(model.Omega, truth)
            stats["ari"] = cluster_agreement(found, truth)
        return stats

    def _safe_run_one(self, train_size: int, run: int):
        try:
            return self.run_one(train_size, run), None
        except (MkmtrlError, np.linalg.LinAlgError) as e:
            logger.error(f"n={train_size} run={run} failed: {e}")
            return [], f"n={train_size} run={run}: {e}"

    def run(self, workers: Optional[int] = None) -> ExperimentResults:
        workers = workers or self.config.workers
        jobs = [(size, run) for size in self.config.train_per_task for run in range(self.config.runs)]
        outcomes = Parallel(n_jobs=workers, prefer="threads")(
            delayed(self._safe_run_one)(size, run) for size, run in jobs)

        results = ExperimentResults(self.config)
        for runs, error in outcomes:
            results.runs.extend(runs)
            if error:
                results.errors.append(error)
        order = {name: i for i, name in enumerate(self.config.algorithms)}
        results.runs.sort(key=lambda r: (order[r.algorithm], r.train_size, r.run))
        return results


def run_experiment(config_path: str, seed: Optional[int] = None, workers: Optional[int] = None,
                   output_dir: Optional[str] = None) -> int:
    """
    Run an experiment file and write its reports.

    Returns:
        0 on success, 2 on a bad config or missing data (no report),
        1 when a run failed (partial report written)
    """
    try:
        config = load_experiment_config(config_path).with_overrides(seed, workers, output_dir)
        bundle = validate(config)
    except (FileNotFoundError, MkmtrlError) as e:
        logger.error(f"invalid experiment: {e}")
        return 2

    runner = ExperimentRunner(config, bundle)
    results = runner.run()
    if not results.runs:
        logger.error("no run completed; nothing to report")
        return 1
    emit_report(results, config.output_dir)
    if results.partial:
        logger.error(f"{len(results.errors)} run(s) failed; report marked partial")
        return 1
    return 0
