"""
Task Clustering Engine

Groups tasks from a learned task relationship Omega:
- Correlation form of Omega
- Hierarchical / k-means clustering on correlation distance
- Automatic cluster count by silhouette score
- Agreement with a known grouping
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.cluster import AgglomerativeClustering, KMeans
from sklearn.metrics import adjusted_rand_score, silhouette_score

from ..core.errors import DimensionError, RelationshipError

logger = logging.getLogger("TaskClusters")


def task_correlation(Omega) -> np.ndarray:
    """Omega_ij / sqrt(Omega_ii Omega_jj); rows with a zero diagonal stay zero"""
    Omega = np.asarray(Omega, dtype=float)
    if Omega.ndim != 2 or Omega.shape[0] != Omega.shape[1]:
        raise DimensionError(f"Omega must be square, got {Omega.shape}")
    scale = np.sqrt(np.clip(np.diag(Omega), 0.0, None))
    safe = np.where(scale > 0, scale, 1.0)
    corr = Omega / np.outer(safe, safe)
    corr[scale == 0, :] = 0.0
    corr[:, scale == 0] = 0.0
    return np.clip(corr, -1.0, 1.0)


class TaskClusteringEngine:
    def __init__(self, random_state: int = 42):
        self.random_state = random_state

    def cluster(self, Omega, n_clusters: Optional[int] = None, algorithm: str = "hierarchical") -> List[int]:
        """
        Cluster tasks on the correlation distance 1 - corr(Omega)

        Args:
            Omega: T x T task relationship
            n_clusters: Number of groups; chosen by silhouette score when None
            algorithm: 'hierarchical' or 'kmeans'

        Returns:
            Cluster label per task
        """
        corr = task_correlation(Omega)
        T = corr.shape[0]
        if algorithm not in ("hierarchical", "kmeans"):
            raise RelationshipError(f"unknown clustering algorithm '{algorithm}'")
        if T < 2:
            return [0] * T
        if n_clusters is None:
            n_clusters = self._determine_optimal_clusters(corr, algorithm)
        if not 1 <= n_clusters <= T:
            raise RelationshipError(f"n_clusters must be between 1 and {T}")
        if n_clusters == 1:
            return [0] * T
        return self._run(corr, n_clusters, algorithm)

    def _run(self, corr: np.ndarray, n_clusters: int, algorithm: str) -> List[int]:
        if algorithm == "kmeans":
            kmeans = KMeans(n_clusters=n_clusters, random_state=self.random_state, n_init=10)
            return kmeans.fit_predict(corr).tolist()
        hierarchical = AgglomerativeClustering(n_clusters=n_clusters, metric="precomputed", linkage="average")
        return hierarchical.fit_predict(1.0 - corr).tolist()

    def _determine_optimal_clusters(self, corr: np.ndarray, algorithm: str) -> int:
        T = corr.shape[0]
        if T <= 3:
            return min(2, T)

        distance = 1.0 - corr
        np.fill_diagonal(distance, 0.0)
        best_n_clusters = 2
        best_score = -1.0
        for n_clusters in range(2, min(T - 1, 10) + 1):
            labels = self._run(corr, n_clusters, algorithm)
            # 所有任务被分到同一类时跳过
            if len(set(labels)) < 2:
                continue
            score = silhouette_score(distance, labels, metric="precomputed")
            if score > best_score:
                best_score = score
                best_n_clusters = n_clusters
        logger.debug(f"silhouette picked {best_n_clusters} task clusters (score {best_score:.3f})")
        return best_n_clusters


def cluster_tasks(Omega, n_clusters: Optional[int] = None, algorithm: str = "hierarchical") -> List[int]:
    return TaskClusteringEngine().cluster(Omega, n_clusters, algorithm)


def cluster_contrast(Omega, clusters: Sequence[int]) -> Tuple[float, float]:
    """
    Mean off-diagonal Omega entry within clusters and across clusters.

    Returns:
        (within, cross); a side with no pairs is nan
    """
    Omega = np.asarray(Omega, dtype=float)
    clusters = np.asarray(clusters)
    if clusters.shape[0] != Omega.shape[0]:
        raise DimensionError(f"{clusters.shape[0]} cluster labels for {Omega.shape[0]} tasks")
    same = clusters[:, None] == clusters[None, :]
    off = ~np.eye(Omega.shape[0], dtype=bool)
    within = Omega[same & off]
    cross = Omega[~same]
    return (float(within.mean()) if within.size else float("nan"),
            float(cross.mean()) if cross.size else float("nan"))


def cluster_agreement(pred: Sequence[int], truth: Sequence[int]) -> float:
    """Adjusted Rand index between two task groupings"""
    if len(pred) != len(truth):
        raise DimensionError("groupings have different lengths")
    return float(adjusted_rand_score(truth, pred))
