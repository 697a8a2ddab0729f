import math

import numpy as np
import pytest
import torch

from tnc.errors import CheckpointLoadError, ContractError, NumericalError
from tnc.model import (
    DiscriminatorConfig,
    EncoderConfig,
    ModelCheckpoint,
    backward,
    build_models,
    discriminator_forward,
    encoder_forward,
    load_checkpoint,
    named_parameters,
    param_store,
    save_checkpoint,
)
from tnc.train import pair_probabilities, tnc_objective


def _sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def _gru_cell(x, h, w_ih, w_hh, b_ih, b_hh):
    r = _sigmoid(w_ih[0] * x + b_ih[0] + w_hh[0] * h + b_hh[0])
    z = _sigmoid(w_ih[1] * x + b_ih[1] + w_hh[1] * h + b_hh[1])
    n = math.tanh(w_ih[2] * x + b_ih[2] + r * (w_hh[2] * h + b_hh[2]))
    return (1 - z) * n + z * h


class TestEncoder:
    def test_hand_unrolled_bidirectional_gru(self):
        enc_cfg = EncoderConfig(input_features=1, window_size=2, hidden_size=1, encoding_size=1)
        encoder, _ = build_models(enc_cfg, DiscriminatorConfig(encoding_size=1), seed=5, precision="float64")
        p = {name: t.detach().numpy().ravel() for name, t in encoder.named_parameters()}
        x = [0.7, -1.3]

        h_fwd = 0.0
        for value in x:
            h_fwd = _gru_cell(value, h_fwd, p["gru.weight_ih_l0"], p["gru.weight_hh_l0"], p["gru.bias_ih_l0"], p["gru.bias_hh_l0"])
        h_bwd = 0.0
        for value in reversed(x):
            h_bwd = _gru_cell(
                value, h_bwd,
                p["gru.weight_ih_l0_reverse"], p["gru.weight_hh_l0_reverse"],
                p["gru.bias_ih_l0_reverse"], p["gru.bias_hh_l0_reverse"],
            )
        expected = p["projection.weight"][0] * h_fwd + p["projection.weight"][1] * h_bwd + p["projection.bias"][0]

        z = encoder_forward(encoder, np.array([x]))
        assert z.shape == (1,)
        assert float(z[0]) == pytest.approx(expected, abs=1e-12)

    def test_zero_parameters_encode_to_zero_and_discriminate_at_half(self, tiny_models):
        encoder, discriminator = tiny_models
        with torch.no_grad():
            for p in list(encoder.parameters()) + list(discriminator.parameters()):
                p.zero_()
        z = encoder_forward(encoder, np.random.default_rng(0).standard_normal((2, 4)))
        assert torch.all(z == 0)
        assert float(discriminator_forward(discriminator, z, z)) == 0.5

    def test_same_input_gives_same_encoding(self, tiny_models):
        encoder, _ = tiny_models
        window = np.random.default_rng(1).standard_normal((2, 4))
        torch.testing.assert_close(encoder_forward(encoder, window), encoder_forward(encoder, window))

    def test_wrong_window_shape_rejected(self, tiny_models):
        encoder, _ = tiny_models
        with pytest.raises(ContractError):
            encoder_forward(encoder, np.zeros((3, 4)))
        with pytest.raises(ContractError):
            encoder_forward(encoder, np.zeros(4))

    def test_discriminator_is_a_probability(self):
        rng = np.random.default_rng(2)
        _, discriminator = build_models(
            EncoderConfig(input_features=1, window_size=2, encoding_size=3), DiscriminatorConfig(encoding_size=3), seed=0, precision="float64"
        )
        for _ in range(100):
            with torch.no_grad():
                for p in discriminator.parameters():
                    p.copy_(torch.as_tensor(0.5 * rng.standard_normal(tuple(p.shape))))
            p = discriminator_forward(discriminator, rng.standard_normal((100, 3)), rng.standard_normal((100, 3)))
            assert torch.all((p > 0) & (p < 1))

    def test_hand_computed_two_unit_discriminator(self):
        _, discriminator = build_models(
            EncoderConfig(input_features=1, window_size=2, encoding_size=1),
            DiscriminatorConfig(encoding_size=1, hidden_multiplier=2),
            seed=0,
            precision="float64",
        )
        hidden, out = discriminator.net[0], discriminator.net[2]
        with torch.no_grad():
            hidden.weight.copy_(torch.tensor([[0.5, -1.0], [2.0, 0.25]]))
            hidden.bias.copy_(torch.tensor([0.1, -3.0]))
            out.weight.copy_(torch.tensor([[1.5, -0.75]]))
            out.bias.copy_(torch.tensor([0.2]))

        a, b = 0.8, -0.4
        h1 = max(0.0, 0.5 * a - 1.0 * b + 0.1)
        h2 = max(0.0, 2.0 * a + 0.25 * b - 3.0)
        expected = _sigmoid(1.5 * h1 - 0.75 * h2 + 0.2)

        assert h2 == 0.0
        assert float(discriminator_forward(discriminator, [a], [b])) == pytest.approx(expected, abs=1e-10)

    def test_mismatched_encoding_sizes_rejected(self, tiny_models):
        _, discriminator = tiny_models
        with pytest.raises(ContractError):
            discriminator_forward(discriminator, np.zeros(2), np.zeros(3))


class TestBuildModels:
    def test_seeded_initialisation_is_reproducible(self):
        enc = EncoderConfig(input_features=3, window_size=10)
        disc = DiscriminatorConfig()
        a = param_store(build_models(enc, disc, seed=1)[0])
        b = param_store(build_models(enc, disc, seed=1)[0])
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_weights_within_fan_in_bound(self):
        encoder, discriminator = build_models(EncoderConfig(input_features=3, window_size=10, hidden_size=16), DiscriminatorConfig(), seed=0)
        assert np.abs(param_store(encoder)["gru.weight_ih_l0"]).max() <= 1 / math.sqrt(3)
        assert np.abs(param_store(encoder)["gru.weight_hh_l0"]).max() <= 1 / math.sqrt(16)
        assert np.abs(param_store(discriminator)["net.0.weight"]).max() <= 1 / math.sqrt(20)

    def test_encoding_size_mismatch_rejected(self):
        with pytest.raises(ContractError):
            build_models(EncoderConfig(input_features=1, window_size=5, encoding_size=4), DiscriminatorConfig(encoding_size=3), seed=0)


def _random_case(rng: np.random.Generator):
    d, delta, hidden, m = int(rng.integers(1, 3)), int(rng.integers(3, 6)), int(rng.integers(2, 4)), int(rng.integers(1, 3))
    k, anchors = int(rng.integers(1, 4)), 2
    enc = EncoderConfig(input_features=d, window_size=delta, hidden_size=hidden, encoding_size=m)
    models = build_models(enc, DiscriminatorConfig(encoding_size=m), seed=int(rng.integers(1 << 30)), precision="float64")
    windows = torch.as_tensor(rng.standard_normal((anchors, 1 + 2 * k, d, delta)))
    return models, windows, k, float(rng.uniform(0, 0.5))


def _objective(models, windows, k, w):
    p_nb, p_nn = pair_probabilities(*models, windows, k)
    return tnc_objective(p_nb, p_nn, w)[0]


class TestBackward:
    @pytest.mark.parametrize("case", range(20))
    def test_matches_central_differences(self, case):
        rng = np.random.default_rng(100 + case)
        models, windows, k, w = _random_case(rng)
        params = named_parameters(encoder=models[0], discriminator=models[1])
        grads = backward(_objective(models, windows, k, w), params)

        h = 1e-5
        names = list(params)
        for _ in range(25):
            name = names[rng.integers(len(names))]
            tensor = params[name]
            idx = tuple(int(rng.integers(s)) for s in tensor.shape)
            with torch.no_grad():
                original = tensor[idx].item()
                tensor[idx] = original + h
                plus = _objective(models, windows, k, w).item()
                tensor[idx] = original - h
                minus = _objective(models, windows, k, w).item()
                tensor[idx] = original
            numeric = (plus - minus) / (2 * h)
            analytic = grads[name][idx].item()
            assert abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-3) < 1e-5, name

    def test_constant_loss_gives_zero_gradients(self, tiny_models):
        params = named_parameters(encoder=tiny_models[0])
        grads = backward(torch.tensor(1.5, dtype=torch.float64), params)
        assert set(grads) == set(params)
        assert all(torch.all(g == 0) for g in grads.values())

    def test_non_finite_loss_rejected(self, tiny_models):
        params = named_parameters(encoder=tiny_models[0])
        with pytest.raises(NumericalError):
            backward(torch.tensor(float("nan")), params)

    def test_unused_parameters_get_zero_gradients(self, tiny_models):
        encoder, discriminator = tiny_models
        params = named_parameters(encoder=encoder, discriminator=discriminator)
        loss = encoder_forward(encoder, np.ones((2, 4))).sum()
        grads = backward(loss, params)
        assert torch.all(grads["discriminator.net.0.weight"] == 0)
        assert torch.any(grads["encoder.projection.weight"] != 0)


class TestCheckpoint:
    def _checkpoint(self, precision="float32"):
        enc = EncoderConfig(input_features=3, window_size=8, hidden_size=5, encoding_size=4)
        encoder, discriminator = build_models(enc, DiscriminatorConfig(encoding_size=4), seed=9, precision=precision)
        return ModelCheckpoint.from_models(encoder, discriminator, {"w": 0.05, "delta": 8}, seed=9, epoch=3)

    @pytest.mark.parametrize("precision", ["float32", "float64"])
    def test_round_trip(self, tmp_path, precision):
        ckpt = self._checkpoint(precision)
        loaded = load_checkpoint(save_checkpoint(ckpt, tmp_path / "model.tnck"))

        assert loaded.precision == precision
        assert (loaded.seed, loaded.epoch) == (9, 3)
        assert loaded.train_config == {"w": 0.05, "delta": 8}
        assert loaded.encoder_config == ckpt.encoder_config
        for name, array in ckpt.encoder_state.items():
            np.testing.assert_array_equal(loaded.encoder_state[name], array)

        window = np.random.default_rng(0).standard_normal((3, 8))
        torch.testing.assert_close(
            encoder_forward(loaded.build_encoder(), window),
            encoder_forward(ckpt.build_encoder(), window),
        )
        z_a, z_b = np.random.default_rng(1).standard_normal((2, 5, 4))
        torch.testing.assert_close(
            discriminator_forward(loaded.build_discriminator(), z_a, z_b),
            discriminator_forward(ckpt.build_discriminator(), z_a, z_b),
        )

    def test_save_load_save_is_byte_identical(self, tmp_path):
        first = save_checkpoint(self._checkpoint(), tmp_path / "first.tnck")
        second = save_checkpoint(load_checkpoint(first), tmp_path / "second.tnck")
        assert first.read_bytes() == second.read_bytes()

    def test_manifest_is_readable_text(self, tmp_path):
        path = save_checkpoint(self._checkpoint(), tmp_path / "model.tnck")
        head = path.read_bytes().split(b"\nend\n")[0].decode("utf-8").splitlines()
        assert head[0] == "TNCK"
        assert "version=1" in head
        assert "dtype=<f4" in head
        assert any(line.startswith("tensor=encoder/gru.weight_ih_l0;shape=15x3;") for line in head)

    def test_truncated_file_rejected(self, tmp_path):
        path = save_checkpoint(self._checkpoint(), tmp_path / "model.tnck")
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(CheckpointLoadError):
            load_checkpoint(path)

    def test_corrupted_blob_rejected(self, tmp_path):
        path = save_checkpoint(self._checkpoint(), tmp_path / "model.tnck")
        raw = bytearray(path.read_bytes())
        raw[-5] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointLoadError, match="checksum"):
            load_checkpoint(path)

    def test_undecodable_manifest_rejected(self, tmp_path):
        path = save_checkpoint(self._checkpoint(), tmp_path / "model.tnck")
        raw = bytearray(path.read_bytes())
        raw[6] = 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointLoadError, match="corrupt manifest"):
            load_checkpoint(path)

    def test_version_mismatch_rejected(self, tmp_path):
        path = save_checkpoint(self._checkpoint(), tmp_path / "model.tnck")
        path.write_bytes(path.read_bytes().replace(b"version=1\n", b"version=2\n", 1))
        with pytest.raises(CheckpointLoadError, match="version"):
            load_checkpoint(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(CheckpointLoadError):
            load_checkpoint(tmp_path / "absent.tnck")
