"""Synthetic non-stationary dataset: an HMM over latent states, each state
emitting its features from Gaussian-process or NARMA generators, plus white
Gaussian noise.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from enum import StrEnum
from functools import lru_cache
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import linalg

from .dataset import TimeSeriesDataset, z_normalize
from .errors import ConfigurationError, ContractError, GenerationError, NumericalError

logger = logging.getLogger(__name__)

NARMA_OVERFLOW_GUARD = 1e6


class ProcessKind(StrEnum):
    GP_PERIODIC = "gp_periodic"
    GP_SQUARED_EXP = "gp_squared_exp"
    NARMA_ALPHA = "narma_alpha"
    NARMA_BETA = "narma_beta"

    @property
    def is_gp(self) -> bool:
        return self in (ProcessKind.GP_PERIODIC, ProcessKind.GP_SQUARED_EXP)


# y(k+1) = a*y(k) + b*y(k)*sum_{i<n} y(k-i) + c*u(k-(n-1))*u(k) + d
NARMA_COEFFICIENTS = {
    ProcessKind.NARMA_ALPHA: (0.3, 0.05, 1.5, 0.1),
    ProcessKind.NARMA_BETA: (0.1, 0.25, 2.5, -0.005),
}


class ProcessSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: ProcessKind
    variance: float = Field(default=1.0, ge=0)
    lengthscale: float = Field(default=1.0, gt=0)
    period: float = Field(default=20.0, gt=0)
    order: int = Field(default=10, ge=1)
    input_low: float = 0.0
    input_high: float = 0.5

    @model_validator(mode="after")
    def _check_input_range(self) -> "ProcessSpec":
        if self.input_high < self.input_low:
            raise ValueError("input_high must not be below input_low")
        return self


def periodic_kernel(variance: float = 1.0, lengthscale: float = 1.0, period: float = 20.0) -> ProcessSpec:
    return ProcessSpec(kind=ProcessKind.GP_PERIODIC, variance=variance, lengthscale=lengthscale, period=period)


def squared_exp_kernel(variance: float = 1.0, lengthscale: float = 5.0) -> ProcessSpec:
    return ProcessSpec(kind=ProcessKind.GP_SQUARED_EXP, variance=variance, lengthscale=lengthscale)


def narma_alpha(order: int = 10) -> ProcessSpec:
    return ProcessSpec(kind=ProcessKind.NARMA_ALPHA, order=order, input_low=0.0, input_high=0.5)


def narma_beta(order: int = 10) -> ProcessSpec:
    # beta diverges under U(0, 0.5) inputs
    return ProcessSpec(kind=ProcessKind.NARMA_BETA, order=order, input_low=0.0, input_high=0.15)


class HmmSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_states: int = Field(default=4, ge=1)
    stay_prob: float = Field(default=0.85, ge=0, le=1)
    switch_prob: float = Field(default=0.05, ge=0, le=1)
    initial_dist: Optional[list[float]] = None

    def transition_matrix(self) -> np.ndarray:
        if self.n_states == 1:
            return np.ones((1, 1))
        matrix = np.full((self.n_states, self.n_states), self.switch_prob)
        np.fill_diagonal(matrix, self.stay_prob)
        rows = matrix.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > 1e-12):
            raise ConfigurationError(
                f"transition rows sum to {rows[0]:.6f}: stay_prob + (n_states-1)*switch_prob must be 1"
            )
        return matrix

    def initial_distribution(self) -> np.ndarray:
        if self.initial_dist is None:
            return np.full(self.n_states, 1.0 / self.n_states)
        dist = np.asarray(self.initial_dist, dtype=np.float64)
        if dist.shape != (self.n_states,) or np.any(dist < 0) or np.any(dist > 1):
            raise ConfigurationError(f"initial_dist must be {self.n_states} probabilities, got {self.initial_dist}")
        if abs(dist.sum() - 1.0) > 1e-12:
            raise ConfigurationError(f"initial_dist sums to {dist.sum()}, expected 1")
        return dist


class GeneratorSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    # processes[state][feature]
    processes: list[list[ProcessSpec]]
    noise_sigma: float = Field(default=0.3, ge=0)
    correlation_weight: float = Field(default=0.9, ge=0, le=1)
    state_block: int = Field(default=50, ge=1)
    normalize: bool = True

    @model_validator(mode="after")
    def _check_grid(self) -> "GeneratorSpec":
        if not self.processes or not self.processes[0]:
            raise ValueError("process grid is empty")
        width = len(self.processes[0])
        for state, row in enumerate(self.processes):
            if len(row) != width:
                raise ValueError(f"state {state} defines {len(row)} features, expected {width}")
            if width >= 2 and row[0].kind != row[1].kind:
                raise ValueError(f"state {state}: features 1 and 2 must share a process kind")
        return self

    @property
    def n_states(self) -> int:
        return len(self.processes)

    @property
    def n_features(self) -> int:
        return len(self.processes[0])


def default_hmm_spec() -> HmmSpec:
    return HmmSpec(n_states=4, stay_prob=0.85, switch_prob=0.05)


def default_generator_spec() -> GeneratorSpec:
    periodic, smooth = periodic_kernel(), squared_exp_kernel()
    alpha, beta = narma_alpha(), narma_beta()
    return GeneratorSpec(
        processes=[
            [periodic, periodic, smooth],
            [alpha, alpha, beta],
            [smooth, smooth, periodic],
            [beta, beta, alpha],
        ],
        noise_sigma=0.3,
    )


def sample_state_sequence(spec: HmmSpec, length: int, rng: np.random.Generator) -> np.ndarray:
    if length < 1:
        raise ContractError(f"state sequence length must be >= 1, got {length}")
    transition = spec.transition_matrix()
    initial = spec.initial_distribution()

    cumulative = np.cumsum(transition, axis=1)
    draws = rng.random(length)
    states = np.empty(length, dtype=np.int64)
    states[0] = min(np.searchsorted(np.cumsum(initial), draws[0], side="right"), spec.n_states - 1)
    for k in range(1, length):
        nxt = np.searchsorted(cumulative[states[k - 1]], draws[k], side="right")
        states[k] = min(nxt, spec.n_states - 1)
    return states


def kernel_values(kernel: ProcessSpec, lags: np.ndarray) -> np.ndarray:
    lags = np.abs(lags)
    if kernel.kind == ProcessKind.GP_PERIODIC:
        return kernel.variance * np.exp(-2.0 * np.sin(np.pi * lags / kernel.period) ** 2 / kernel.lengthscale**2)
    if kernel.kind == ProcessKind.GP_SQUARED_EXP:
        return kernel.variance * np.exp(-0.5 * lags**2 / kernel.lengthscale**2)
    raise ContractError(f"{kernel.kind} is not a Gaussian-process kernel")


@lru_cache(maxsize=256)
def _gram_factor(kernel: ProcessSpec, length: int) -> np.ndarray:
    steps = np.arange(length, dtype=np.float64)
    gram = kernel_values(kernel, steps[:, None] - steps[None, :])
    gram[np.diag_indices(length)] += 1e-8 * kernel.variance
    try:
        factor = linalg.cholesky(gram, lower=True, check_finite=True)
    except linalg.LinAlgError as e:
        eigmin = float(np.linalg.eigvalsh(gram).min())
        raise NumericalError(
            f"Gram matrix not positive definite for {kernel.kind} "
            f"(variance={kernel.variance}, lengthscale={kernel.lengthscale}, period={kernel.period}, "
            f"length={length}, min eigenvalue={eigmin:.3e})"
        ) from e
    factor.setflags(write=False)
    return factor


def sample_gp(kernel: ProcessSpec, length: int, rng: np.random.Generator) -> np.ndarray:
    if not kernel.kind.is_gp:
        raise ContractError(f"sample_gp needs a GP kernel, got {kernel.kind}")
    if length < 1:
        raise ContractError(f"length must be >= 1, got {length}")
    noise = rng.standard_normal(length)
    if kernel.variance == 0:
        return np.zeros(length)
    return _gram_factor(kernel, length) @ noise


def narma_step(kind: ProcessKind, y: np.ndarray, u: np.ndarray, k: int, order: int) -> float:
    """Evaluates y(k+1) from stored history; indices below zero read as zero."""
    a, b, c, d = NARMA_COEFFICIENTS[kind]
    window = y[max(0, k - order + 1) : k + 1]
    lagged = u[k - order + 1] if k - order + 1 >= 0 else 0.0
    return a * y[k] + b * y[k] * window.sum() + c * lagged * u[k] + d


def gen_narma(
    params: ProcessSpec,
    length: int,
    rng: np.random.Generator,
    inputs: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Runs the NARMA recurrence from a zero history.

    ``inputs`` overrides the driving sequence u; it needs ``length`` values.
    The returned sequence starts at y(1), the first value produced from the
    zero initial state.
    """
    if params.kind not in NARMA_COEFFICIENTS:
        raise ContractError(f"gen_narma needs a NARMA kind, got {params.kind}")
    if inputs is None:
        inputs = rng.uniform(params.input_low, params.input_high, size=length)
    elif len(inputs) < length:
        raise ContractError(f"need {length} driving inputs, got {len(inputs)}")

    y = np.zeros(length + 1)
    for k in range(length):
        y[k + 1] = narma_step(params.kind, y, inputs, k, params.order)
        if not np.isfinite(y[k + 1]) or abs(y[k + 1]) > NARMA_OVERFLOW_GUARD:
            raise GenerationError(f"{params.kind} diverged at step {k + 1} (y={y[k + 1]:.3e})")
    return y[1:]


def sample_process(spec: ProcessSpec, length: int, rng: np.random.Generator) -> np.ndarray:
    if spec.kind.is_gp:
        return sample_gp(spec, length, rng)
    return gen_narma(spec, length, rng)


def state_segments(states: np.ndarray) -> list[tuple[int, int, int]]:
    """Maximal constant-state runs as (start, stop, state)."""
    changes = np.flatnonzero(np.diff(states)) + 1
    bounds = np.concatenate([[0], changes, [len(states)]])
    return [(int(s), int(e), int(states[s])) for s, e in zip(bounds[:-1], bounds[1:])]


def generate_instance(
    gen: GeneratorSpec,
    hmm: HmmSpec,
    length: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    n_blocks = -(-length // gen.state_block)
    states = np.repeat(sample_state_sequence(hmm, n_blocks, rng), gen.state_block)[:length]

    signal = np.zeros((gen.n_features, length))
    for start, stop, state in state_segments(states):
        span = stop - start
        row = gen.processes[state]
        for feature, process in enumerate(row):
            values = sample_process(process, span, rng)
            if feature == 1:
                w = gen.correlation_weight
                values = w * signal[0, start:stop] + (1.0 - w) * values
            signal[feature, start:stop] = values

    if gen.noise_sigma > 0:
        signal += rng.normal(0.0, gen.noise_sigma, size=signal.shape)
    return signal, states


def assemble_dataset(
    gen: GeneratorSpec,
    hmm: HmmSpec,
    n_instances: int,
    length: int,
    seed: int,
    threads: int = 1,
) -> TimeSeriesDataset:
    if gen.n_states != hmm.n_states:
        raise ConfigurationError(f"generator defines {gen.n_states} states but the HMM has {hmm.n_states}")
    if n_instances < 1 or length < 1:
        raise ContractError(f"need at least one instance and one step, got {n_instances}×{length}")
    # fail fast on bad probabilities before spawning workers
    hmm.transition_matrix()
    hmm.initial_distribution()

    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_instances)]
    logger.info(f"Generating {n_instances} instances of length {length} with {threads} thread(s)")

    def _one(rng: np.random.Generator):
        return generate_instance(gen, hmm, length, rng)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_one, streams))
    else:
        results = [_one(rng) for rng in streams]

    values = np.stack([signal for signal, _ in results])
    labels = np.stack([states for _, states in results])
    mean = std = None
    if gen.normalize:
        values, mean, std = z_normalize(values)
    return TimeSeriesDataset(values=values, state_labels=labels, feature_mean=mean, feature_std=std)
