import functools

import numpy as np
import pytest

from tnc.errors import ContractError, EvaluationError
from tnc.evaluation import dtw_distance, dtw_matrix, knn_baseline, knn_classify


def brute_dtw(a, b):
    """Minimum over every monotone warping path, enumerated recursively."""
    a, b = np.atleast_2d(a).T, np.atleast_2d(b).T

    @functools.lru_cache(maxsize=None)
    def best(i, j):
        cost = float(np.linalg.norm(a[i] - b[j]))
        if i == 0 and j == 0:
            return cost
        options = []
        if i > 0:
            options.append(best(i - 1, j))
        if j > 0:
            options.append(best(i, j - 1))
        if i > 0 and j > 0:
            options.append(best(i - 1, j - 1))
        return cost + min(options)

    return best(len(a) - 1, len(b) - 1)


class TestDtwDistance:
    def test_identity_is_zero(self, rng):
        x = rng.standard_normal((2, 15))
        assert dtw_distance(x, x) == 0.0

    def test_repeated_frame_warps_for_free(self):
        assert dtw_distance([1.0, 2.0, 3.0], [1.0, 2.0, 2.0, 3.0]) == 0.0

    def test_symmetric(self, rng):
        a, b = rng.standard_normal((3, 7)), rng.standard_normal((3, 9))
        assert dtw_distance(a, b) == pytest.approx(dtw_distance(b, a), abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_exhaustive_paths(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal(5), rng.standard_normal(6)
        assert dtw_distance(a, b) == pytest.approx(brute_dtw(a, b), abs=1e-12)

    def test_multivariate_frames_use_euclidean_cost(self):
        a = np.array([[0.0], [0.0]])
        b = np.array([[3.0], [4.0]])
        assert dtw_distance(a, b) == pytest.approx(5.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ContractError, match="dimension"):
            dtw_distance(np.zeros((2, 5)), np.zeros((3, 5)))

    def test_empty_sequence(self):
        with pytest.raises(ContractError):
            dtw_distance(np.zeros((1, 0)), np.zeros((1, 3)))

    def test_matrix_is_thread_independent(self, rng):
        queries = [rng.standard_normal((2, 8)) for _ in range(4)]
        refs = [rng.standard_normal((2, 8)) for _ in range(3)]
        np.testing.assert_array_equal(dtw_matrix(queries, refs, threads=1), dtw_matrix(queries, refs, threads=3))


class TestKnn:
    def test_identical_window_takes_its_label(self, rng):
        train = [rng.standard_normal((1, 10)) for _ in range(5)]
        labels = [0, 1, 2, 3, 4]
        assert knn_classify(train, labels, [train[3]], k=1).tolist() == [3]

    def test_tied_vote_goes_to_smaller_summed_distance(self):
        train = [np.ones((1, 2)), np.full((1, 2), -0.5)]
        assert knn_classify(train, [1, 0], [np.zeros((1, 2))], k=2).tolist() == [0]

    def test_fully_tied_vote_goes_to_smaller_label(self):
        train = [np.ones((1, 2)), -np.ones((1, 2))]
        assert knn_classify(train, [1, 0], [np.zeros((1, 2))], k=2).tolist() == [0]

    def test_sinusoids_against_noise(self, rng):
        t = np.arange(50)

        def sine():
            return (np.sin(2 * np.pi * t / 25 + rng.uniform(0, 0.5)) + 0.1 * rng.standard_normal(50))[None, :]

        def noise():
            return 0.1 * rng.standard_normal((1, 50))

        train = [sine() for _ in range(10)] + [noise() for _ in range(10)]
        test = [sine() for _ in range(10)] + [noise() for _ in range(10)]
        labels = np.repeat([0, 1], 10)
        predictions = knn_classify(train, labels, test, k=1, threads=2)
        assert np.mean(predictions == labels) > 0.9

    def test_empty_training_set(self):
        with pytest.raises(EvaluationError):
            knn_classify([], [], [np.zeros((1, 3))])

    def test_k_larger_than_training_set(self):
        with pytest.raises(EvaluationError):
            knn_classify([np.zeros((1, 3))], [0], [np.zeros((1, 3))], k=2)

    def test_baseline_on_switching_regimes(self, two_state_dataset):
        result = knn_baseline(two_state_dataset, delta=20, k=1, test_fraction=0.34, seed=0)
        assert (result.n_train, result.n_test) == (40, 20)
        assert result.accuracy > 0.9
