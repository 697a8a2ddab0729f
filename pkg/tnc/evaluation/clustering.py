"""k-means and the cluster-validity indices used to judge representation clusterability."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.cluster import kmeans_plusplus
from sklearn.metrics import davies_bouldin_score, silhouette_score

from ..errors import EvaluationError, NumericalError
from .encode import EncodedSet

logger = logging.getLogger(__name__)


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    n_iter: int

    def predict(self, points: np.ndarray) -> np.ndarray:
        return cdist(np.asarray(points, dtype=np.float64), self.centroids, "sqeuclidean").argmin(axis=1)


@dataclass
class ClusterEval:
    silhouette: float
    davies_bouldin: float
    k: int
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float


def _lloyd(points: np.ndarray, centroids: np.ndarray, max_iter: int) -> KMeansResult:
    previous_inertia = np.inf
    assignments = None
    for iteration in range(1, max_iter + 1):
        distances = cdist(points, centroids, "sqeuclidean")
        new_assignments = distances.argmin(axis=1)
        inertia = float(distances[np.arange(len(points)), new_assignments].sum())
        if inertia > previous_inertia * (1 + 1e-12) + 1e-12:
            raise NumericalError(f"k-means inertia rose from {previous_inertia} to {inertia} at iteration {iteration}")
        if assignments is not None and np.array_equal(assignments, new_assignments):
            return KMeansResult(centroids, assignments, inertia, iteration)
        assignments, previous_inertia = new_assignments, inertia

        updated = centroids.copy()
        for c in range(centroids.shape[0]):
            members = points[assignments == c]
            # an emptied cluster keeps its centroid
            if len(members):
                updated[c] = members.mean(axis=0)
        centroids = updated

    distances = cdist(points, centroids, "sqeuclidean")
    assignments = distances.argmin(axis=1)
    return KMeansResult(centroids, assignments, float(distances.min(axis=1).sum()), max_iter)


def kmeans(points, k: int, seed: int = 42, n_init: int = 10, max_iter: int = 300) -> KMeansResult:
    """Lloyd iterations from k-means++ seeding; keeps the lowest-inertia of ``n_init`` restarts."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise EvaluationError(f"k-means needs an n×M matrix, got shape {points.shape}")
    if k < 1 or len(points) < k:
        raise EvaluationError(f"k-means needs 1 ≤ k ≤ n, got k={k} for n={len(points)}")

    best = None
    for restart_seed in np.random.SeedSequence(seed).generate_state(n_init):
        initial, _ = kmeans_plusplus(points, k, random_state=int(restart_seed))
        result = _lloyd(points, initial.astype(np.float64), max_iter)
        if best is None or result.inertia < best.inertia:
            best = result
    logger.debug(f"k-means k={k}: inertia {best.inertia:.4f} after {best.n_iter} iterations")
    return best


def _check_clusters(points: np.ndarray, assignments: np.ndarray) -> np.ndarray:
    if len(points) != len(assignments):
        raise EvaluationError(f"{len(assignments)} assignments for {len(points)} points")
    clusters = np.unique(assignments)
    if clusters.size < 2:
        raise EvaluationError("cluster index is undefined for fewer than 2 clusters")
    return clusters


def silhouette(points, assignments) -> float:
    """Mean of (b - a) / max(a, b) over points; singleton clusters score 0."""
    points = np.asarray(points, dtype=np.float64)
    assignments = np.asarray(assignments)
    clusters = _check_clusters(points, assignments)
    if clusters.size == len(points):
        return 0.0
    return float(np.clip(silhouette_score(points, assignments, metric="euclidean"), -1.0, 1.0))


def davies_bouldin(points, assignments) -> float:
    points = np.asarray(points, dtype=np.float64)
    assignments = np.asarray(assignments)
    clusters = _check_clusters(points, assignments)
    centroids = np.stack([points[assignments == c].mean(axis=0) for c in clusters])
    separation = cdist(centroids, centroids)
    np.fill_diagonal(separation, np.inf)
    i, j = np.unravel_index(separation.argmin(), separation.shape)
    if separation[i, j] == 0:
        raise EvaluationError(f"clusters {clusters[i]} and {clusters[j]} have coincident centroids")
    return float(max(davies_bouldin_score(points, assignments), 0.0))


def cluster_report(points, k: int, seed: int = 42, n_init: int = 10) -> ClusterEval:
    points = np.asarray(points, dtype=np.float64)
    result = kmeans(points, k, seed=seed, n_init=n_init)
    return ClusterEval(
        silhouette=silhouette(points, result.assignments),
        davies_bouldin=davies_bouldin(points, result.assignments),
        k=k,
        assignments=result.assignments,
        centroids=result.centroids,
        inertia=result.inertia,
    )


def transition_hit_rate(encoded: EncodedSet, centroids: np.ndarray, tolerance: int = 1) -> float:
    """Share of ground-truth state changes along one trajectory at which the nearest
    centroid also changes within ``tolerance`` windows. NaN when there is no change.
    """
    if encoded.labels is None:
        raise EvaluationError("transition hit rate needs state labels")
    if np.unique(encoded.instance_index).size > 1:
        raise EvaluationError("transition hit rate is computed on a single instance")
    order = np.argsort(encoded.centers, kind="stable")
    labels = encoded.labels[order]
    nearest = cdist(encoded.encodings[order], centroids, "sqeuclidean").argmin(axis=1)

    true_changes = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    if true_changes.size == 0:
        return float("nan")
    cluster_changes = np.flatnonzero(nearest[1:] != nearest[:-1]) + 1
    hits = sum(bool(np.any(np.abs(cluster_changes - j) <= tolerance)) for j in true_changes)
    return hits / true_changes.size
