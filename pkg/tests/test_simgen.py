import numpy as np
import pytest

from tnc.errors import ConfigurationError, ContractError, GenerationError
from tnc.simgen import (
    GeneratorSpec,
    HmmSpec,
    ProcessKind,
    ProcessSpec,
    assemble_dataset,
    default_generator_spec,
    default_hmm_spec,
    gen_narma,
    kernel_values,
    narma_alpha,
    narma_beta,
    periodic_kernel,
    sample_gp,
    sample_state_sequence,
    squared_exp_kernel,
    state_segments,
)

NARMA_KINDS = (ProcessKind.NARMA_ALPHA, ProcessKind.NARMA_BETA)


class TestStateSequence:
    def test_absorbing_chain_stays_in_initial_state(self, rng):
        spec = HmmSpec(n_states=3, stay_prob=1.0, switch_prob=0.0)
        states = sample_state_sequence(spec, 500, rng)
        assert np.all(states == states[0])

    def test_single_state_is_all_zeros(self, rng):
        states = sample_state_sequence(HmmSpec(n_states=1), 100, rng)
        assert states.tolist() == [0] * 100

    def test_length_and_range(self, rng):
        states = sample_state_sequence(default_hmm_spec(), 777, rng)
        assert states.shape == (777,)
        assert states.min() >= 0 and states.max() < 4

    def test_empirical_stay_frequency(self):
        spec = default_hmm_spec()
        stays = total = 0
        for seed in range(50):
            states = sample_state_sequence(spec, 2000, np.random.default_rng(seed))
            stays += int(np.sum(states[1:] == states[:-1]))
            total += states.size - 1
        assert stays / total == pytest.approx(0.85, abs=0.01)

    def test_empirical_transitions_within_binomial_interval(self):
        spec = default_hmm_spec()
        states = np.concatenate([sample_state_sequence(spec, 2000, np.random.default_rng(s)) for s in range(20)])
        counts = np.zeros((4, 4))
        np.add.at(counts, (states[:-1], states[1:]), 1)
        expected = spec.transition_matrix()
        for i in range(4):
            n = counts[i].sum()
            sigma = np.sqrt(expected[i] * (1 - expected[i]) / n)
            assert np.all(np.abs(counts[i] / n - expected[i]) <= 3 * sigma + 1e-3)

    def test_deterministic_given_seed(self):
        a = sample_state_sequence(default_hmm_spec(), 300, np.random.default_rng(5))
        b = sample_state_sequence(default_hmm_spec(), 300, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_rows_not_summing_to_one_rejected(self, rng):
        with pytest.raises(ConfigurationError):
            sample_state_sequence(HmmSpec(n_states=4, stay_prob=0.9, switch_prob=0.05), 10, rng)

    def test_bad_initial_distribution_rejected(self, rng):
        spec = HmmSpec(n_states=2, stay_prob=0.5, switch_prob=0.5, initial_dist=[0.7, 0.7])
        with pytest.raises(ConfigurationError):
            sample_state_sequence(spec, 10, rng)

    def test_zero_length_rejected(self, rng):
        with pytest.raises(ContractError):
            sample_state_sequence(default_hmm_spec(), 0, rng)


class TestGaussianProcess:
    def test_zero_variance_gives_zeros(self, rng):
        assert np.all(sample_gp(squared_exp_kernel(variance=0.0), 50, rng) == 0)

    def test_squared_exp_covariance_matches_kernel(self):
        kernel = squared_exp_kernel()
        rng = np.random.default_rng(11)
        draws = np.stack([sample_gp(kernel, 12, rng) for _ in range(10_000)])
        for lag in (0, 2, 5, 10):
            empirical = np.mean(draws[:, 0] * draws[:, lag])
            assert empirical == pytest.approx(kernel_values(kernel, np.array([lag]))[0], abs=0.05)

    def test_periodic_autocovariance_peaks_at_period(self):
        kernel = periodic_kernel(period=20.0)
        rng = np.random.default_rng(12)
        draws = np.stack([sample_gp(kernel, 41, rng) for _ in range(2000)])
        at_period = np.mean(draws[:, 0] * draws[:, 20])
        at_half = np.mean(draws[:, 0] * draws[:, 10])
        assert at_period > at_half

    def test_deterministic_given_seed(self):
        a = sample_gp(periodic_kernel(), 100, np.random.default_rng(3))
        b = sample_gp(periodic_kernel(), 100, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    def test_rejects_narma_kind(self, rng):
        with pytest.raises(ContractError):
            sample_gp(narma_alpha(), 10, rng)


class TestNarma:
    def test_alpha_constant_term(self, rng):
        y = gen_narma(narma_alpha(), 1, rng, inputs=np.zeros(1))
        assert y[0] == 0.1

    def test_beta_constant_term(self, rng):
        y = gen_narma(narma_beta(), 1, rng, inputs=np.zeros(1))
        assert y[0] == -0.005

    @pytest.mark.parametrize("spec", [narma_alpha(), narma_beta()])
    def test_replay_reproduces_sequence(self, spec):
        coefficients = {ProcessKind.NARMA_ALPHA: (0.3, 0.05, 1.5, 0.1), ProcessKind.NARMA_BETA: (0.1, 0.25, 2.5, -0.005)}
        a, b, c, d = coefficients[spec.kind]
        u = np.random.default_rng(4).uniform(spec.input_low, spec.input_high, 300)
        out = gen_narma(spec, 300, np.random.default_rng(0), inputs=u)

        y = np.concatenate([[0.0], out])
        n = spec.order
        for k in range(300):
            lagged = u[k - n + 1] if k >= n - 1 else 0.0
            replay = a * y[k] + b * y[k] * y[max(0, k - n + 1) : k + 1].sum() + c * lagged * u[k] + d
            assert replay == y[k + 1]

    def test_default_inputs_stay_bounded(self):
        for spec in (narma_alpha(), narma_beta()):
            y = gen_narma(spec, 1000, np.random.default_rng(9))
            assert np.all(np.isfinite(y)) and np.abs(y).max() < 10

    def test_divergence_names_the_step(self, rng):
        unstable = ProcessSpec(kind=ProcessKind.NARMA_BETA, input_low=0.5, input_high=0.5)
        with pytest.raises(GenerationError, match="step"):
            gen_narma(unstable, 500, rng)

    def test_rejects_gp_kind(self, rng):
        with pytest.raises(ContractError):
            gen_narma(periodic_kernel(), 10, rng)


class TestGeneratorSpec:
    def test_feature_one_and_two_must_share_kind(self):
        with pytest.raises(ValueError):
            GeneratorSpec(processes=[[periodic_kernel(), narma_alpha(), narma_beta()]])

    def test_ragged_grid_rejected(self):
        with pytest.raises(ValueError):
            GeneratorSpec(processes=[[periodic_kernel(), periodic_kernel()], [narma_alpha()]])

    def test_default_grid(self):
        gen = default_generator_spec()
        assert (gen.n_states, gen.n_features) == (4, 3)
        assert gen.noise_sigma == 0.3


class TestAssembleDataset:
    def test_shape_labels_and_normalization(self):
        ds = assemble_dataset(default_generator_spec(), default_hmm_spec(), n_instances=4, length=300, seed=1)
        assert ds.values.shape == (4, 3, 300)
        assert ds.has_labels and ds.state_labels.shape == (4, 300)
        assert ds.normalized
        np.testing.assert_allclose(ds.values.mean(axis=(0, 2)), 0.0, atol=1e-9)
        np.testing.assert_allclose(ds.values.std(axis=(0, 2)), 1.0, atol=1e-9)

    def test_noise_free_generation_is_deterministic(self):
        gen = default_generator_spec().model_copy(update={"noise_sigma": 0.0})
        a = assemble_dataset(gen, default_hmm_spec(), 3, 200, seed=8)
        b = assemble_dataset(gen, default_hmm_spec(), 3, 200, seed=8)
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.state_labels, b.state_labels)

    def test_thread_count_does_not_change_result(self):
        a = assemble_dataset(default_generator_spec(), default_hmm_spec(), 5, 200, seed=2, threads=1)
        b = assemble_dataset(default_generator_spec(), default_hmm_spec(), 5, 200, seed=2, threads=3)
        np.testing.assert_array_equal(a.values, b.values)

    def test_states_held_for_whole_blocks(self):
        ds = assemble_dataset(default_generator_spec(), default_hmm_spec(), 2, 400, seed=3)
        for labels in ds.state_labels:
            for start, _, _ in state_segments(labels):
                assert start % 50 == 0

    def test_features_one_and_two_correlated(self):
        gen = default_generator_spec().model_copy(update={"noise_sigma": 0.0})
        ds = assemble_dataset(gen, default_hmm_spec(), 4, 600, seed=5)
        correlations = []
        for values, labels in zip(ds.values, ds.state_labels):
            for start, stop, _ in state_segments(labels):
                if stop - start >= 20:
                    correlations.append(np.corrcoef(values[0, start:stop], values[1, start:stop])[0, 1])
        assert np.mean(correlations) > 0.5

    @pytest.mark.parametrize("kernel", [squared_exp_kernel(), periodic_kernel(variance=2.0)])
    def test_gp_marginal_variance_includes_noise(self, kernel):
        gen = GeneratorSpec(processes=[[kernel]], noise_sigma=0.3, normalize=False)
        ds = assemble_dataset(gen, HmmSpec(n_states=1), n_instances=4000, length=20, seed=11)
        per_step = ds.values[:, 0, :].var(axis=0)
        np.testing.assert_allclose(per_step, kernel.variance + 0.09, rtol=0.12)

    def test_segments_emitted_by_their_state_processes(self):
        gen = default_generator_spec().model_copy(update={"noise_sigma": 0.0, "normalize": False})
        ds = assemble_dataset(gen, default_hmm_spec(), 12, 600, seed=12)
        # NARMA outputs ignore the driving input until the lag reaches the order
        prefix = gen.processes[1][0].order - 1
        expected = {kind: gen_narma(ProcessSpec(kind=kind), prefix, None, inputs=np.zeros(prefix)) for kind in NARMA_KINDS}

        seen = set()
        for values, labels in zip(ds.values, ds.state_labels):
            for start, _, state in state_segments(labels):
                for feature, process in enumerate(gen.processes[state]):
                    head = values[feature, start : start + prefix]
                    if process.kind.is_gp:
                        assert not any(np.allclose(head, ref) for ref in expected.values())
                    else:
                        np.testing.assert_allclose(head, expected[process.kind], rtol=1e-12, atol=1e-15)
                seen.add(state)
        assert seen == {0, 1, 2, 3}

    def test_state_count_mismatch_rejected(self):
        with pytest.raises(ConfigurationError):
            assemble_dataset(default_generator_spec(), HmmSpec(n_states=2, stay_prob=0.5, switch_prob=0.5), 1, 100, seed=0)
