"""
Kernel Bank

Builds the T x K grid of task-specific base gram matrices:
- Base kernels (linear, polynomial, gaussian and their feature-wise variants)
- Unit-trace normalization, with the train trace reused for test columns
- Weighted combination for the per-task solvers
- Pointwise evaluation for the online trainer (no n x n matrices)
"""

import hashlib
import json
import logging
import os
import struct
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.spatial.distance import pdist
from sklearn.metrics.pairwise import linear_kernel, polynomial_kernel, rbf_kernel

from ..core.config import ConfigManager
from ..core.data_io import DatasetBundle
from ..core.errors import DimensionError, KernelError

logger = logging.getLogger("KernelBank")

LINEAR = "linear"
POLYNOMIAL = "polynomial"
RBF = "rbf"
UNIVARIATE_RBF = "univariate_rbf"
UNIVARIATE_LINEAR = "univariate_linear"

_CACHE_MAGIC = b"MKGR"
_CACHE_HEADER = struct.Struct("<4sQQ32s")

# 中位数启发式的子采样上限
_MEDIAN_SUBSAMPLE = 500


@dataclass(frozen=True)
class KernelSpec:
    kind: str
    degree: Optional[int] = None
    bandwidth: Optional[float] = None
    feature: Optional[int] = None
    offset: float = 1.0

    def __post_init__(self):
        if self.kind == POLYNOMIAL:
            if self.degree is None or int(self.degree) != self.degree or self.degree < 1:
                raise KernelError(f"polynomial degree must be an integer >= 1, got {self.degree}")
        elif self.kind in (RBF, UNIVARIATE_RBF):
            if self.bandwidth is None or not self.bandwidth > 0:
                raise KernelError(f"bandwidth must be > 0, got {self.bandwidth}")
        elif self.kind != LINEAR and self.kind != UNIVARIATE_LINEAR:
            raise KernelError(f"unknown kernel kind '{self.kind}'")
        if self.kind in (UNIVARIATE_RBF, UNIVARIATE_LINEAR):
            if self.feature is None or self.feature < 0:
                raise KernelError(f"{self.kind} needs a feature index >= 0")

    @property
    def label(self) -> str:
        if self.kind == POLYNOMIAL:
            return f"poly{self.degree}"
        if self.kind == RBF:
            return f"rbf{self.bandwidth:.4g}"
        if self.kind == UNIVARIATE_RBF:
            return f"rbf{self.bandwidth:.4g}@x{self.feature}"
        if self.kind == UNIVARIATE_LINEAR:
            return f"linear@x{self.feature}"
        return LINEAR

    def to_dict(self) -> dict:
        return {key: value for key, value in asdict(self).items() if value is not None}

    @classmethod
    def from_dict(cls, payload: dict) -> "KernelSpec":
        return cls(**payload)


@dataclass(frozen=True)
class GramMatrix:
    values: np.ndarray
    spec: Optional[KernelSpec] = None
    unit_trace: bool = False
    # raw trace divided out so far; test columns are divided by the same factor
    trace_scale: float = 1.0

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class KernelBank:
    specs: Tuple[KernelSpec, ...]
    grams: Tuple[Tuple[GramMatrix, ...], ...]
    cross: Optional[Tuple[Tuple[GramMatrix, ...], ...]] = None

    @property
    def n_tasks(self) -> int:
        return len(self.grams)

    @property
    def n_kernels(self) -> int:
        return len(self.specs)

    def stacked(self, t: int) -> np.ndarray:
        """K x n_t x n_t array of task t's train grams"""
        return np.stack([g.values for g in self.grams[t]])

    def stacked_cross(self, t: int) -> np.ndarray:
        if self.cross is None:
            raise KernelError("bank has no test-side matrices")
        return np.stack([g.values for g in self.cross[t]])

    def trace_scales(self) -> np.ndarray:
        return np.array([[g.trace_scale for g in row] for row in self.grams])


def _validate_features(X, name: str = "X") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DimensionError(f"{name} must be a nonempty 2-D matrix")
    if not np.all(np.isfinite(X)):
        raise KernelError(f"{name} contains non-finite values")
    return X


def _column(spec: KernelSpec, X: np.ndarray) -> np.ndarray:
    if spec.feature >= X.shape[1]:
        raise DimensionError(f"feature {spec.feature} out of range for d={X.shape[1]}")
    return X[:, [spec.feature]]


def compute_gram(spec: KernelSpec, X, X2=None) -> GramMatrix:
    """
    Raw (unnormalized) kernel matrix k(x_i, x2_j).

    Args:
        spec: Kernel to evaluate
        X: n x d rows
        X2: Optional m x d rows; when absent the result is the symmetric n x n gram

    Returns:
        GramMatrix with unit_trace unset
    """
    X = _validate_features(X)
    Y = None
    if X2 is not None:
        Y = _validate_features(X2, "X2")
        if Y.shape[1] != X.shape[1]:
            raise DimensionError(f"feature dims differ: {X.shape[1]} vs {Y.shape[1]}")

    if spec.kind in (UNIVARIATE_RBF, UNIVARIATE_LINEAR):
        X = _column(spec, X)
        Y = None if Y is None else _column(spec, Y)

    if spec.kind in (LINEAR, UNIVARIATE_LINEAR):
        values = linear_kernel(X, Y)
    elif spec.kind == POLYNOMIAL:
        values = polynomial_kernel(X, Y, degree=spec.degree, gamma=1.0, coef0=spec.offset)
    else:
        values = rbf_kernel(X, Y, gamma=1.0 / (2.0 * spec.bandwidth ** 2))

    if X2 is None:
        values = 0.5 * (values + values.T)
    return GramMatrix(values, spec)


def kernel_eval(spec: KernelSpec, x, x2, trace_scale: float = 1.0) -> float:
    """Single normalized kernel entry k(x, x2) / trace_scale"""
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x.shape != x2.shape:
        raise DimensionError(f"vector dims differ: {x.shape[0]} vs {x2.shape[0]}")
    if not trace_scale > 0:
        raise KernelError("trace_scale must be > 0")
    if spec.kind in (UNIVARIATE_RBF, UNIVARIATE_LINEAR):
        if spec.feature >= x.shape[0]:
            raise DimensionError(f"feature {spec.feature} out of range for d={x.shape[0]}")
        x = x[[spec.feature]]
        x2 = x2[[spec.feature]]

    if spec.kind in (LINEAR, UNIVARIATE_LINEAR):
        value = float(np.dot(x, x2))
    elif spec.kind == POLYNOMIAL:
        value = float((spec.offset + np.dot(x, x2)) ** spec.degree)
    else:
        diff = x - x2
        value = float(np.exp(-np.dot(diff, diff) / (2.0 * spec.bandwidth ** 2)))
    return value / trace_scale


def diagonal_trace(spec: KernelSpec, X) -> float:
    """trace of compute_gram(spec, X) from the diagonal only"""
    X = _validate_features(X)
    if spec.kind in (RBF, UNIVARIATE_RBF):
        if spec.kind == UNIVARIATE_RBF:
            _column(spec, X)
        return float(X.shape[0])
    if spec.kind == UNIVARIATE_LINEAR:
        return float(np.sum(_column(spec, X) ** 2))
    squared = np.einsum("ij,ij->i", X, X)
    if spec.kind == LINEAR:
        return float(squared.sum())
    return float(np.sum((spec.offset + squared) ** spec.degree))


def normalize_unit_trace(g: GramMatrix) -> GramMatrix:
    trace = float(np.trace(g.values))
    if not trace > 0:
        label = g.spec.label if g.spec is not None else "combined"
        raise KernelError(f"kernel {label} has trace {trace:.3e}; cannot normalize")
    return GramMatrix(g.values / trace, g.spec, True, g.trace_scale * trace)


def scale_cross(g: GramMatrix, trace_scale: float) -> GramMatrix:
    """Scale a test x train matrix by its train gram's trace factor"""
    return GramMatrix(g.values / trace_scale, g.spec, True, trace_scale)


def combine_weighted(grams: Sequence[GramMatrix], beta) -> GramMatrix:
    """
    sum_k beta_k K_k

    Args:
        grams: K matrices of identical shape
        beta: K nonnegative weights
    """
    beta = np.asarray(beta, dtype=float).ravel()
    if len(grams) != beta.shape[0]:
        raise DimensionError(f"{len(grams)} grams but {beta.shape[0]} weights")
    if np.any(beta < 0):
        raise KernelError("kernel weights must be nonnegative")
    shapes = {g.shape for g in grams}
    if len(shapes) != 1:
        raise DimensionError(f"gram shapes differ: {sorted(shapes)}")
    stack = np.stack([g.values for g in grams])
    return GramMatrix(np.tensordot(beta, stack, axes=1))


def check_psd(values: np.ndarray, tol: float = 1e-8) -> float:
    """Raise KernelError when the smallest eigenvalue is below -tol; returns it"""
    if not np.allclose(values, values.T, atol=1e-10):
        raise KernelError("matrix is not symmetric")
    smallest = float(np.linalg.eigvalsh(values)[0])
    if smallest < -tol:
        raise KernelError(f"matrix is not PSD: min eigenvalue {smallest:.3e}")
    return smallest


def _median_distance(values: np.ndarray) -> float:
    if values.shape[0] > _MEDIAN_SUBSAMPLE:
        rows = np.linspace(0, values.shape[0] - 1, _MEDIAN_SUBSAMPLE).astype(int)
        values = values[rows]
    distances = pdist(values)
    median = float(np.median(distances)) if distances.size else 0.0
    if median == 0.0:
        nonzero = distances[distances > 0]
        if nonzero.size == 0:
            return 0.0
        median = float(np.median(nonzero))
    return median


def _bandwidths(median: float, count: int) -> np.ndarray:
    half = (count - 1) / 2.0
    return median * 2.0 ** np.linspace(-half, half, count)


def grid_specs(kind_template: str, X, count: int, offset: float = 1.0) -> List[KernelSpec]:
    """
    Expand a kernel template into a list of specs.

    polynomial gives degrees 1..count; rbf gives count bandwidths median*2^j
    around the median pairwise distance; the univariate templates repeat
    this per feature, skipping constant features.
    """
    if count < 1:
        raise KernelError("count must be >= 1")
    X = _validate_features(X)

    if kind_template == POLYNOMIAL:
        return [KernelSpec(POLYNOMIAL, degree=degree, offset=offset) for degree in range(1, count + 1)]
    if kind_template == LINEAR:
        return [KernelSpec(LINEAR)]
    if kind_template == RBF:
        median = _median_distance(X)
        if median == 0.0:
            raise KernelError("all rows are identical; cannot choose an rbf bandwidth")
        return [KernelSpec(RBF, bandwidth=float(s)) for s in _bandwidths(median, count)]

    if kind_template not in (UNIVARIATE_RBF, UNIVARIATE_LINEAR):
        raise KernelError(f"unknown kernel template '{kind_template}'")

    specs = []
    for feature in range(X.shape[1]):
        column = X[:, [feature]]
        if np.ptp(column) == 0:
            if kind_template == UNIVARIATE_LINEAR and np.any(column != 0):
                specs.append(KernelSpec(UNIVARIATE_LINEAR, feature=feature))
            else:
                logger.warning(f"feature {feature} is constant; no {kind_template} kernel for it")
            continue
        if kind_template == UNIVARIATE_LINEAR:
            specs.append(KernelSpec(UNIVARIATE_LINEAR, feature=feature))
        else:
            median = _median_distance(column)
            specs.extend(KernelSpec(UNIVARIATE_RBF, bandwidth=float(s), feature=feature)
                         for s in _bandwidths(median, count))
    if not specs:
        raise KernelError(f"{kind_template}: every feature is constant")
    return specs


def _cache_key(spec: KernelSpec, X: np.ndarray) -> bytes:
    digest = hashlib.sha256()
    digest.update(json.dumps(spec.to_dict(), sort_keys=True).encode("utf-8"))
    digest.update(np.ascontiguousarray(X, dtype="<f8").tobytes())
    return digest.digest()


def save_gram_cache(path: str, key: bytes, values: np.ndarray):
    values = np.ascontiguousarray(values, dtype="<f8")
    with open(path, "wb") as handle:
        handle.write(_CACHE_HEADER.pack(_CACHE_MAGIC, values.shape[0], values.shape[1], key))
        handle.write(values.tobytes())


def load_gram_cache(path: str, key: bytes) -> Optional[np.ndarray]:
    """Cached gram for `key`, or None on a missing / stale / corrupt file"""
    if not os.path.exists(path):
        return None
    with open(path, "rb") as handle:
        payload = handle.read()
    if len(payload) < _CACHE_HEADER.size:
        logger.warning(f"gram cache {path} is truncated; recomputing")
        return None
    magic, rows, cols, stored_key = _CACHE_HEADER.unpack_from(payload)
    body = payload[_CACHE_HEADER.size:]
    if magic != _CACHE_MAGIC or stored_key != key or len(body) != rows * cols * 8:
        logger.warning(f"gram cache {path} does not match; recomputing")
        return None
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).copy()


def _train_gram(spec: KernelSpec, X: np.ndarray, cache_dir: Optional[str], debug: bool) -> GramMatrix:
    raw = None
    if cache_dir:
        key = _cache_key(spec, X)
        path = os.path.join(cache_dir, key.hex() + ".gram")
        raw = load_gram_cache(path, key)
        if raw is not None:
            raw = GramMatrix(raw, spec)
    if raw is None:
        raw = compute_gram(spec, X)
        if cache_dir:
            os.makedirs(cache_dir, exist_ok=True)
            save_gram_cache(path, key, raw.values)
    if debug:
        check_psd(raw.values, tol=1e-8 * max(1.0, float(np.trace(raw.values))))
    return normalize_unit_trace(raw)


def build_cross_bank(train: DatasetBundle, test: DatasetBundle, specs: Sequence[KernelSpec],
                     trace_scales: np.ndarray, n_jobs: int = 1) -> Tuple[Tuple[GramMatrix, ...], ...]:
    """Test x train matrices, each divided by the trace of its train gram"""
    if test.n_tasks != train.n_tasks:
        raise DimensionError(f"train has {train.n_tasks} tasks, test has {test.n_tasks}")
    jobs = [(t, k) for t in range(train.n_tasks) for k in range(len(specs))]
    results = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(compute_gram)(specs[k], test.tasks[t].features, train.tasks[t].features) for t, k in jobs)
    grid = [[None] * len(specs) for _ in range(train.n_tasks)]
    for (t, k), raw in zip(jobs, results):
        grid[t][k] = scale_cross(raw, float(trace_scales[t][k]))
    return tuple(tuple(row) for row in grid)


def build_bank(train: DatasetBundle, specs: Sequence[KernelSpec], test: Optional[DatasetBundle] = None,
               n_jobs: int = 1, cache_dir: Optional[str] = None, debug: Optional[bool] = None) -> KernelBank:
    """
    Compute every (task, kernel) train gram, normalized to unit trace.

    Args:
        train: Training bundle
        specs: Ordered kernel list shared by all tasks
        test: Optional test bundle; adds test x train matrices with the train trace factors
        n_jobs: Worker threads over (task, kernel) pairs
        cache_dir: Optional on-disk gram cache
        debug: Run the O(n^3) PSD check (defaults to the MKMTRL_DEBUG setting)
    """
    specs = tuple(specs)
    if not specs:
        raise KernelError("a bank needs at least one kernel")
    if debug is None:
        debug = ConfigManager.get_instance().debug

    jobs = [(t, k) for t in range(train.n_tasks) for k in range(len(specs))]
    results = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_train_gram)(specs[k], train.tasks[t].features, cache_dir, debug) for t, k in jobs)
    grid = [[None] * len(specs) for _ in range(train.n_tasks)]
    for (t, k), gram in zip(jobs, results):
        grid[t][k] = gram
    grams = tuple(tuple(row) for row in grid)

    cross = None
    if test is not None:
        scales = [[g.trace_scale for g in row] for row in grams]
        cross = build_cross_bank(train, test, specs, scales, n_jobs=n_jobs)

    logger.info(f"Built kernel bank: T={train.n_tasks}, K={len(specs)}")
    return KernelBank(specs, grams, cross)
