import numpy as np
import pytest
import torch

from tnc.dataset import TimeSeriesDataset
from tnc.model import DiscriminatorConfig, EncoderConfig, build_models
from tnc.simgen import assemble_dataset, default_generator_spec, default_hmm_spec


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_simulation() -> TimeSeriesDataset:
    return assemble_dataset(default_generator_spec(), default_hmm_spec(), n_instances=6, length=400, seed=7)


@pytest.fixture
def two_state_dataset() -> TimeSeriesDataset:
    """Three instances alternating between a sine regime and a flat noisy regime every 100 steps."""
    rng = np.random.default_rng(0)
    t = np.arange(400)
    states = (t // 100) % 2
    values, labels = [], []
    for _ in range(3):
        sine = np.sin(2 * np.pi * t / 10.0)
        signal = np.where(states == 0, sine, 0.0) + 0.05 * rng.standard_normal(t.size)
        values.append(np.stack([signal, -signal]))
        labels.append(states)
    return TimeSeriesDataset(values=np.stack(values), state_labels=np.stack(labels))


@pytest.fixture
def tiny_models():
    enc = EncoderConfig(input_features=2, window_size=4, hidden_size=3, encoding_size=2)
    disc = DiscriminatorConfig(encoding_size=2)
    return build_models(enc, disc, seed=3, precision="float64")


@pytest.fixture(autouse=True)
def _single_torch_thread():
    torch.set_num_threads(1)
