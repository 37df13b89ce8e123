"""
Dataset loading, synthetic multitask data, splitting and normalization.

All loaders densify their input: the datasets in scope are small (a few
thousand rows, tens of features).
"""

import logging
import os
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.model_selection import train_test_split
from sklearn.preprocessing import StandardScaler

from .errors import ConfigError, DimensionError, MkmtrlError, ParseError, SplitError
from ..utils.utils import derive_seed

logger = logging.getLogger("DataIO")

CLASSIFICATION = "classification"
REGRESSION = "regression"


def _frozen(array) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class TaskDataset:
    task_id: int
    features: np.ndarray
    labels: np.ndarray
    kind: str = CLASSIFICATION

    def __post_init__(self):
        features = _frozen(self.features)
        labels = _frozen(self.labels).ravel()
        if features.ndim != 2:
            raise DimensionError(f"task {self.task_id}: features must be a 2-D matrix")
        if features.shape[0] < 1:
            raise DimensionError(f"task {self.task_id}: no examples")
        if labels.shape[0] != features.shape[0]:
            raise DimensionError(
                f"task {self.task_id}: {labels.shape[0]} labels for {features.shape[0]} rows")
        if self.kind not in (CLASSIFICATION, REGRESSION):
            raise MkmtrlError(f"unknown task kind '{self.kind}'")
        if self.kind == CLASSIFICATION and not np.all(np.isin(labels, (-1.0, 1.0))):
            raise MkmtrlError(f"task {self.task_id}: labels must be ±1")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def subset(self, rows: Sequence[int]) -> "TaskDataset":
        rows = np.asarray(rows, dtype=int)
        return TaskDataset(self.task_id, self.features[rows], self.labels[rows], self.kind)


@dataclass(frozen=True)
class FeatureScaler:
    """Per-task train-set mean and scale"""
    means: Tuple[np.ndarray, ...]
    scales: Tuple[np.ndarray, ...]


@dataclass(frozen=True)
class DatasetBundle:
    tasks: Tuple[TaskDataset, ...]
    clusters: Optional[np.ndarray] = None
    separators: Optional[np.ndarray] = None
    scaler: Optional[FeatureScaler] = None

    def __post_init__(self):
        tasks = tuple(self.tasks)
        if not tasks:
            raise DimensionError("a bundle needs at least one task")
        dims = {task.features.shape[1] for task in tasks}
        if len(dims) != 1:
            raise DimensionError(f"tasks disagree on the feature dimension: {sorted(dims)}")
        object.__setattr__(self, "tasks", tasks)

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    @property
    def dim(self) -> int:
        return self.tasks[0].features.shape[1]

    @property
    def kind(self) -> str:
        return self.tasks[0].kind

    @property
    def labels(self) -> List[np.ndarray]:
        return [task.labels for task in self.tasks]

    def with_tasks(self, tasks: Sequence[TaskDataset], **changes) -> "DatasetBundle":
        return replace(self, tasks=tuple(tasks), **changes)


@dataclass(frozen=True)
class SplitSpec:
    train_per_task: int
    seed: int = 0
    stratified: bool = True


def _parse_label(token: str, kind: str, path: str, line_number: int) -> float:
    try:
        label = float(token)
    except ValueError:
        raise ParseError(f"bad label '{token}'", line_number, path) from None
    if kind == CLASSIFICATION and label not in (1.0, -1.0):
        raise ParseError("labels must be ±1", line_number, path)
    return label


def _parse_sparse_file(path: str, kind: str):
    """
    Parse one `<label> <index>:<value> ...` file.

    Returns:
        (labels, rows) where rows are {0-based index: value} dicts
    """
    labels, rows = [], []
    with open(path, "r") as handle:
        for line_number, line in enumerate(handle, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            tokens = stripped.split()
            label = _parse_label(tokens[0], kind, path, line_number)
            row = {}
            for token in tokens[1:]:
                index, sep, value = token.partition(":")
                if not sep:
                    raise ParseError(f"expected index:value, got '{token}'", line_number, path)
                try:
                    position = int(index)
                    number = float(value)
                except ValueError:
                    raise ParseError(f"malformed pair '{token}'", line_number, path) from None
                if position < 1:
                    raise ParseError(f"indices are 1-based, got {position}", line_number, path)
                if not np.isfinite(number):
                    raise ParseError(f"non-finite value in '{token}'", line_number, path)
                row[position - 1] = number
            labels.append(label)
            rows.append(row)
    if not labels:
        raise ParseError("no examples", path=path)
    return labels, rows


def _is_manifest(path: str) -> bool:
    """A manifest lists task files; a data file starts every line with a numeric label"""
    with open(path, "r") as handle:
        for line in handle:
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            try:
                float(stripped.split()[0])
                return False
            except ValueError:
                return True
    return False


def _densify(rows: List[dict], dim: int) -> np.ndarray:
    features = np.zeros((len(rows), dim))
    for i, row in enumerate(rows):
        for j, value in row.items():
            features[i, j] = value
    return features


def load_sparse_text(path: str, kind: str = CLASSIFICATION, dim: Optional[int] = None,
                     task_index: Optional[str] = None) -> DatasetBundle:
    """
    Load sparse `label idx:val` data.

    `path` is either a manifest (one task file per line, relative to the
    manifest) or a single data file. A single file is one task unless a
    companion `task_index` file gives one task id per example line.

    Args:
        path: Manifest or data file
        kind: 'classification' (labels must be ±1) or 'regression'
        dim: Expected feature dimension; inferred from the largest index when absent
        task_index: Optional companion file with a task id per example

    Returns:
        DatasetBundle with dense feature matrices
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Data file not found at: {path}")

    parsed = []
    if _is_manifest(path):
        base = os.path.dirname(os.path.abspath(path))
        with open(path, "r") as handle:
            entries = [line.strip() for line in handle if line.strip() and not line.strip().startswith("#")]
        for entry in entries:
            task_path = entry if os.path.isabs(entry) else os.path.join(base, entry)
            if not os.path.exists(task_path):
                raise FileNotFoundError(f"Task file listed in {path} not found: {task_path}")
            parsed.append(_parse_sparse_file(task_path, kind))
        if not parsed:
            raise ParseError("no examples", path=path)
    else:
        labels, rows = _parse_sparse_file(path, kind)
        if task_index is None:
            parsed.append((labels, rows))
        else:
            ids = np.loadtxt(task_index, dtype=int, ndmin=1)
            if ids.shape[0] != len(labels):
                raise DimensionError(
                    f"{task_index} lists {ids.shape[0]} task ids for {len(labels)} examples")
            for task_id in np.unique(ids):
                members = np.flatnonzero(ids == task_id)
                parsed.append(([labels[i] for i in members], [rows[i] for i in members]))

    largest = max((max(row) + 1 for _, rows in parsed for row in rows if row), default=0)
    if dim is None:
        dim = max(largest, 1)
    elif largest > dim:
        raise DimensionError(f"feature index {largest} exceeds the declared dimension {dim}")

    tasks = [TaskDataset(t, _densify(rows, dim), labels, kind) for t, (labels, rows) in enumerate(parsed)]
    logger.info(f"Loaded {len(tasks)} task(s), d={dim}, n={sum(t.n for t in tasks)} from {path}")
    return DatasetBundle(tuple(tasks))


def load_csv(path: str, label_col: int, task_col: int, header: bool = False,
             kind: str = CLASSIFICATION) -> DatasetBundle:
    """
    Load a rectangular numeric CSV, grouping rows into tasks by `task_col`.

    Row order within each task is preserved; tasks are ordered by task value.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Data file not found at: {path}")
    try:
        table = np.loadtxt(path, delimiter=",", skiprows=1 if header else 0, ndmin=2, dtype=float)
    except ValueError as e:
        raise ParseError(str(e), path=path) from None
    if table.size == 0:
        raise ParseError("no examples", path=path)

    width = table.shape[1]
    columns = []
    for name, col in (("label", label_col), ("task", task_col)):
        if not -width <= col < width:
            raise ConfigError(f"{name} column {col} does not exist (CSV has {width} columns)")
        columns.append(col % width)
    label_col, task_col = columns
    if label_col == task_col:
        raise ConfigError("label and task columns must differ")

    feature_cols = [c for c in range(width) if c not in (label_col, task_col)]
    if not feature_cols:
        raise DimensionError("CSV has no feature columns")

    task_values = table[:, task_col]
    tasks = []
    for position, value in enumerate(np.unique(task_values)):
        rows = table[task_values == value]
        if kind == CLASSIFICATION and not np.all(np.isin(rows[:, label_col], (-1.0, 1.0))):
            raise ParseError("labels must be ±1", path=path)
        task_id = int(value) if float(value).is_integer() else position
        tasks.append(TaskDataset(task_id, rows[:, feature_cols], rows[:, label_col], kind))
    return DatasetBundle(tuple(tasks))


def split(bundle: DatasetBundle, spec: SplitSpec) -> Tuple[DatasetBundle, DatasetBundle]:
    """
    Per-task train/test split with exactly `train_per_task` training rows.

    Deterministic given spec.seed: each task draws from its own
    counter-derived seed, so tasks do not perturb each other.
    """
    for task in bundle.tasks:
        if not 1 <= spec.train_per_task < task.n:
            raise SplitError(
                f"task {task.task_id}: train_per_task={spec.train_per_task} needs 1 <= k < n_t={task.n}")

    train_tasks, test_tasks = [], []
    for t, task in enumerate(bundle.tasks):
        seed = derive_seed(spec.seed, t)
        indices = np.arange(task.n)
        stratify = task.labels if (spec.stratified and task.kind == CLASSIFICATION) else None
        try:
            train_idx, test_idx = train_test_split(
                indices, train_size=spec.train_per_task, random_state=seed, stratify=stratify)
        except ValueError as e:
            if stratify is None:
                raise SplitError(f"task {task.task_id}: {e}") from None
            logger.warning(f"task {task.task_id}: stratified split infeasible ({e}); using a plain split")
            train_idx, test_idx = train_test_split(
                indices, train_size=spec.train_per_task, random_state=seed)
        train_tasks.append(task.subset(np.sort(train_idx)))
        test_tasks.append(task.subset(np.sort(test_idx)))

    return (bundle.with_tasks(train_tasks, scaler=None),
            bundle.with_tasks(test_tasks, scaler=None))


def synth_clustered_tasks(T: int, clusters: int, n_per_task: int, d: int, noise: float, seed: int,
                          kind: str = CLASSIFICATION, margin: float = 0.1,
                          active: Optional[int] = None) -> DatasetBundle:
    """
    Synthetic multitask data with a known cluster structure.

    Tasks are assigned to clusters in contiguous blocks. Each cluster has a
    separator drawn from the unit sphere; a task perturbs it by `noise`.
    With `active` set, every separator lives on one shared random subset of
    `active` features and the remaining features carry no signal.
    Classification labels are sign(w_t.x + noise*e); regression targets are
    w_t.x + noise*e.

    Returns:
        DatasetBundle with `clusters` (ground-truth assignment) and `separators`
    """
    if d < 1:
        raise ConfigError("d must be >= 1")
    if not 1 <= clusters <= T:
        raise ConfigError("clusters must be between 1 and T")
    if noise < 0:
        raise ConfigError("noise must be >= 0")
    if n_per_task < 1 or (kind == CLASSIFICATION and n_per_task < 2):
        raise ConfigError("n_per_task too small")
    if active is not None and not 1 <= active <= d:
        raise ConfigError("active must be between 1 and d")

    rng = np.random.default_rng(seed)
    if active is None:
        support = np.arange(d)
        centers = rng.standard_normal((clusters, d))
    else:
        support = np.sort(rng.choice(d, size=active, replace=False))
        centers = np.zeros((clusters, d))
        centers[:, support] = rng.standard_normal((clusters, active))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    assignment = (np.arange(T) * clusters) // T

    tasks, separators = [], []
    for t in range(T):
        w = centers[assignment[t]].copy()
        w[support] += noise * rng.standard_normal(support.size) / np.sqrt(support.size)
        for _ in range(100):
            X = _draw_rows(rng, n_per_task, w, margin if kind == CLASSIFICATION else 0.0)
            response = X @ w + noise * rng.standard_normal(n_per_task)
            if kind == REGRESSION:
                y = response
                break
            y = np.where(response >= 0, 1.0, -1.0)
            if np.unique(y).size == 2:
                break
        else:
            raise ConfigError(f"task {t}: could not draw both classes")
        tasks.append(TaskDataset(t, X, y, kind))
        separators.append(w)

    return DatasetBundle(tuple(tasks), clusters=assignment, separators=np.array(separators))


def _draw_rows(rng: np.random.Generator, n: int, w: np.ndarray, margin: float) -> np.ndarray:
    """Gaussian rows, rejecting those closer than margin*||w|| to the hyperplane"""
    threshold = margin * np.linalg.norm(w)
    kept = []
    total = 0
    while total < n:
        batch = rng.standard_normal((2 * n, w.shape[0]))
        batch = batch[np.abs(batch @ w) >= threshold]
        kept.append(batch)
        total += batch.shape[0]
    return np.vstack(kept)[:n]


def zscore_normalize(bundle: DatasetBundle) -> DatasetBundle:
    """
    Per-task z-score computed on the (training) bundle itself.

    Constant features are passed through untouched. The fitted transform is
    stored on the returned bundle for apply_scaler.
    """
    tasks, means, scales = [], [], []
    for task in bundle.tasks:
        scaler = StandardScaler().fit(task.features)
        constant = np.ptp(task.features, axis=0) == 0
        scaler.mean_ = np.where(constant, 0.0, scaler.mean_)
        scaler.scale_ = np.where(constant, 1.0, scaler.scale_)
        tasks.append(TaskDataset(task.task_id, scaler.transform(task.features), task.labels, task.kind))
        means.append(_frozen(scaler.mean_))
        scales.append(_frozen(scaler.scale_))
    return bundle.with_tasks(tasks, scaler=FeatureScaler(tuple(means), tuple(scales)))


def apply_scaler(bundle: DatasetBundle, scaler: FeatureScaler) -> DatasetBundle:
    """Apply a stored train transform: (x - mean_train) / scale_train"""
    if len(scaler.means) != bundle.n_tasks:
        raise DimensionError(f"scaler has {len(scaler.means)} tasks, bundle has {bundle.n_tasks}")
    tasks = [
        TaskDataset(task.task_id, (task.features - mean) / scale, task.labels, task.kind)
        for task, mean, scale in zip(bundle.tasks, scaler.means, scaler.scales)
    ]
    return bundle.with_tasks(tasks, scaler=scaler)


def add_bias_feature(bundle: DatasetBundle) -> DatasetBundle:
    """Append a constant-1 feature to every task"""
    tasks = [
        TaskDataset(task.task_id, np.hstack([task.features, np.ones((task.n, 1))]), task.labels, task.kind)
        for task in bundle.tasks
    ]
    return bundle.with_tasks(tasks)


def one_vs_all_tasks(X, y, classes: Optional[Sequence] = None) -> DatasetBundle:
    """One binary task per class: +1 for the class, -1 for every other row"""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if classes is None:
        classes = np.unique(y)
    if len(classes) < 2:
        raise ConfigError("one-vs-all needs at least two classes")
    tasks = [TaskDataset(t, X, np.where(y == c, 1.0, -1.0)) for t, c in enumerate(classes)]
    return DatasetBundle(tuple(tasks))
