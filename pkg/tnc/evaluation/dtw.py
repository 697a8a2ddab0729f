"""Dynamic time warping and the DTW nearest-neighbour baseline on raw windows."""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..dataset import TimeSeriesDataset
from ..errors import ContractError, EvaluationError
from .encode import window_set

logger = logging.getLogger(__name__)


@njit(nogil=True)
def _dtw_table(a: np.ndarray, b: np.ndarray) -> float:
    # a is L1×D, b is L2×D
    n, m, d = a.shape[0], b.shape[0], a.shape[1]
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0.0
            for f in range(d):
                diff = a[i - 1, f] - b[j - 1, f]
                cost += diff * diff
            acc[i, j] = np.sqrt(cost) + min(acc[i - 1, j], acc[i, j - 1], acc[i - 1, j - 1])
    return acc[n, m]


def _frames(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ContractError(f"DTW takes a D×L matrix or a vector, got shape {x.shape}")
    if x.shape[1] == 0:
        raise ContractError("DTW needs nonempty sequences")
    return np.ascontiguousarray(x.T)


def dtw_distance(a, b) -> float:
    """Unconstrained DTW cost between D×L1 and D×L2 sequences with Euclidean frame distance."""
    fa, fb = _frames(a), _frames(b)
    if fa.shape[1] != fb.shape[1]:
        raise ContractError(f"DTW dimension mismatch: {fa.shape[1]} vs {fb.shape[1]} features")
    return float(_dtw_table(fa, fb))


def dtw_matrix(queries, references, threads: int = 1) -> np.ndarray:
    queries = [_frames(q) for q in queries]
    references = [_frames(r) for r in references]

    def _row(query: np.ndarray) -> np.ndarray:
        return np.array([_dtw_table(query, ref) for ref in references])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_row, queries))
    else:
        rows = [_row(q) for q in queries]
    return np.vstack(rows) if rows else np.zeros((0, len(references)))


def _vote(distances: np.ndarray, labels: np.ndarray, k: int) -> int:
    nearest = np.argsort(distances, kind="stable")[:k]
    candidates, counts = np.unique(labels[nearest], return_counts=True)
    tied = candidates[counts == counts.max()]
    if tied.size == 1:
        return int(tied[0])
    summed = np.array([distances[nearest][labels[nearest] == c].sum() for c in tied])
    # smallest summed distance wins; np.argmin picks the smallest label on equal sums
    return int(tied[np.argmin(summed)])


def knn_classify(train_windows, train_labels, test_windows, k: int = 1, threads: int = 1) -> np.ndarray:
    """Majority vote among the k DTW-nearest training windows.

    A tied vote goes to the class whose voters have the smallest summed distance.
    """
    train_labels = np.asarray(train_labels, dtype=np.int64)
    if len(train_windows) == 0:
        raise EvaluationError("KNN needs a nonempty training set")
    if len(train_windows) != train_labels.size:
        raise ContractError(f"{train_labels.size} labels for {len(train_windows)} training windows")
    if not 1 <= k <= len(train_windows):
        raise EvaluationError(f"k={k} must lie in [1, {len(train_windows)}]")
    distances = dtw_matrix(test_windows, train_windows, threads)
    return np.array([_vote(row, train_labels, k) for row in distances], dtype=np.int64)


@dataclass
class KnnEval:
    accuracy: float
    k: int
    n_train: int
    n_test: int
    seconds: float


def knn_baseline(
    dataset: TimeSeriesDataset,
    delta: int,
    k: int = 1,
    sample_cap: int = 50,
    seed: int = 42,
    test_fraction: float = 0.2,
    threads: int = 1,
) -> KnnEval:
    """DTW-KNN on non-overlapping raw windows of at most ``sample_cap`` instances, split by instance."""
    if not dataset.has_labels:
        raise EvaluationError("the KNN baseline needs state labels")
    rng = np.random.default_rng(seed)
    chosen = rng.permutation(dataset.n_instances)[: min(sample_cap, dataset.n_instances)]
    n_test = max(1, int(round(test_fraction * chosen.size)))
    if chosen.size - n_test < 1:
        raise EvaluationError(f"{chosen.size} instance(s) cannot be split into train and test")
    test_idx, train_idx = np.sort(chosen[:n_test]), np.sort(chosen[n_test:])

    train = window_set(dataset, delta, instances=train_idx)
    test = window_set(dataset, delta, instances=test_idx)
    started = time.perf_counter()
    predictions = knn_classify(train.windows, train.labels, test.windows, k=k, threads=threads)
    elapsed = time.perf_counter() - started
    accuracy = float(np.mean(predictions == test.labels))
    logger.info(f"DTW-KNN (k={k}): accuracy={accuracy:.4f} on {len(test)} windows in {elapsed:.1f}s")
    return KnnEval(accuracy=accuracy, k=k, n_train=len(train), n_test=len(test), seconds=elapsed)
