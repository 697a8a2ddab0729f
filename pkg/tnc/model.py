"""Encoder and discriminator networks, gradient extraction and the checkpoint file."""

import json
import logging
import math
from collections.abc import Mapping
from pathlib import Path
from typing import Any

import google_crc32c
import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field
from torch import nn

from .errors import CheckpointLoadError, ContractError, NumericalError

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "TNCK"
CHECKPOINT_VERSION = 1
_DTYPES = {"float32": ("<f4", torch.float32), "float64": ("<f8", torch.float64)}


class EncoderConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    input_features: int = Field(ge=1)
    window_size: int = Field(ge=1)
    hidden_size: int = Field(default=100, ge=1)
    encoding_size: int = Field(default=10, ge=1)
    bidirectional: bool = True


class DiscriminatorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    encoding_size: int = Field(default=10, ge=1)
    hidden_multiplier: int = Field(default=4, ge=1)


class RnnEncoder(nn.Module):
    """Single-layer (bi)directional GRU; the final hidden states of each direction
    are concatenated and projected to the encoding size.
    """

    def __init__(self, config: EncoderConfig) -> None:
        super().__init__()
        self.config = config
        self.gru = nn.GRU(
            input_size=config.input_features,
            hidden_size=config.hidden_size,
            num_layers=1,
            batch_first=True,
            bidirectional=config.bidirectional,
        )
        directions = 2 if config.bidirectional else 1
        self.projection = nn.Linear(directions * config.hidden_size, config.encoding_size)

    def forward(self, windows: torch.Tensor) -> torch.Tensor:
        expected = (self.config.input_features, self.config.window_size)
        if windows.dim() != 3 or tuple(windows.shape[1:]) != expected:
            raise ContractError(f"encoder expects windows of shape (batch, {expected[0]}, {expected[1]}), got {tuple(windows.shape)}")
        _, final = self.gru(windows.transpose(1, 2))
        return self.projection(torch.cat(final.unbind(0), dim=-1))


class PairDiscriminator(nn.Module):
    """Feed-forward classifier on concatenated encoding pairs; returns logits."""

    def __init__(self, config: DiscriminatorConfig) -> None:
        super().__init__()
        self.config = config
        m = config.encoding_size
        self.net = nn.Sequential(
            nn.Linear(2 * m, config.hidden_multiplier * m),
            nn.ReLU(),
            nn.Linear(config.hidden_multiplier * m, 1),
        )

    def forward(self, z_anchor: torch.Tensor, z_other: torch.Tensor) -> torch.Tensor:
        m = self.config.encoding_size
        if z_anchor.shape[-1] != m or z_other.shape[-1] != m:
            raise ContractError(
                f"discriminator expects encodings of length {m}, got {z_anchor.shape[-1]} and {z_other.shape[-1]}"
            )
        return self.net(torch.cat([z_anchor, z_other], dim=-1)).squeeze(-1)


@torch.no_grad()
def init_uniform_fan_in(module: nn.Module, generator: torch.Generator) -> None:
    """Draws every weight and bias from U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    for sub in module.modules():
        if isinstance(sub, nn.Linear):
            bound = 1.0 / math.sqrt(sub.in_features)
            for p in (sub.weight, sub.bias):
                p.uniform_(-bound, bound, generator=generator)
        elif isinstance(sub, nn.GRU):
            for name, p in sub.named_parameters():
                fan_in = sub.input_size if "_ih" in name else sub.hidden_size
                bound = 1.0 / math.sqrt(fan_in)
                p.uniform_(-bound, bound, generator=generator)


def torch_dtype(name: str) -> torch.dtype:
    try:
        return _DTYPES[name][1]
    except KeyError:
        raise ContractError(f"unsupported precision {name!r}; use one of {sorted(_DTYPES)}") from None


def build_models(
    encoder_config: EncoderConfig,
    discriminator_config: DiscriminatorConfig,
    seed: int,
    precision: str = "float32",
) -> tuple[RnnEncoder, PairDiscriminator]:
    if encoder_config.encoding_size != discriminator_config.encoding_size:
        raise ContractError(
            f"encoder emits {encoder_config.encoding_size} dims but the discriminator takes {discriminator_config.encoding_size}"
        )
    generator = torch.Generator().manual_seed(seed)
    encoder = RnnEncoder(encoder_config)
    discriminator = PairDiscriminator(discriminator_config)
    init_uniform_fan_in(encoder, generator)
    init_uniform_fan_in(discriminator, generator)
    dtype = torch_dtype(precision)
    return encoder.to(dtype), discriminator.to(dtype)


def _as_tensor(values, like: nn.Module) -> torch.Tensor:
    dtype = next(like.parameters()).dtype
    return torch.as_tensor(values, dtype=dtype)


def encoder_forward(encoder: RnnEncoder, window) -> torch.Tensor:
    """Encodes a single D×δ window into a length-M representation."""
    x = _as_tensor(window, encoder)
    if x.dim() != 2:
        raise ContractError(f"window must be a D×δ matrix, got shape {tuple(x.shape)}")
    return encoder(x.unsqueeze(0)).squeeze(0)


def discriminator_forward(discriminator: PairDiscriminator, z_anchor, z_other) -> torch.Tensor:
    """Probability that the two encodings come from the same temporal neighborhood."""
    a, b = _as_tensor(z_anchor, discriminator), _as_tensor(z_other, discriminator)
    if a.shape != b.shape:
        raise ContractError(f"encoding shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    return torch.sigmoid(discriminator(a, b))


def named_parameters(**modules: nn.Module) -> dict[str, nn.Parameter]:
    return {
        f"{prefix}.{name}": p
        for prefix, module in modules.items()
        for name, p in module.named_parameters()
    }


def backward(loss: torch.Tensor, parameters: Mapping[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    """Exact reverse-mode gradients of a scalar loss, one entry per named parameter."""
    if loss.numel() != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    if not torch.isfinite(loss).all():
        raise NumericalError(f"loss is not finite ({loss.item()})")

    names = list(parameters)
    tensors = [parameters[n] for n in names]
    if not loss.requires_grad:
        return {n: torch.zeros_like(t) for n, t in zip(names, tensors)}

    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    result = {}
    for name, tensor, grad in zip(names, tensors, grads):
        grad = torch.zeros_like(tensor) if grad is None else grad
        if not torch.isfinite(grad).all():
            raise NumericalError(f"gradient of {name} contains non-finite values")
        result[name] = grad
    return result


def param_store(module: nn.Module) -> dict[str, np.ndarray]:
    """Named parameter arrays (the ParamStore) of a module, in registration order."""
    store = {}
    for name, tensor in module.state_dict().items():
        array = tensor.detach().cpu().numpy().copy()
        if not np.all(np.isfinite(array)):
            raise NumericalError(f"parameter {name} contains non-finite values")
        store[name] = array
    return store


class ModelCheckpoint(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    encoder_config: EncoderConfig
    discriminator_config: DiscriminatorConfig
    encoder_state: dict[str, np.ndarray]
    discriminator_state: dict[str, np.ndarray]
    train_config: dict[str, Any] = Field(default_factory=dict)
    seed: int = 42
    epoch: int = 0
    precision: str = "float32"

    @classmethod
    def from_models(
        cls,
        encoder: RnnEncoder,
        discriminator: PairDiscriminator,
        train_config: dict[str, Any] | None = None,
        seed: int = 42,
        epoch: int = 0,
    ) -> "ModelCheckpoint":
        dtype = next(encoder.parameters()).dtype
        precision = "float64" if dtype == torch.float64 else "float32"
        return cls(
            encoder_config=encoder.config,
            discriminator_config=discriminator.config,
            encoder_state=param_store(encoder),
            discriminator_state=param_store(discriminator),
            train_config=train_config or {},
            seed=seed,
            epoch=epoch,
            precision=precision,
        )

    def _load(self, module: nn.Module, state: dict[str, np.ndarray]) -> nn.Module:
        dtype = torch_dtype(self.precision)
        module = module.to(dtype)
        module.load_state_dict({k: torch.from_numpy(np.array(v)) for k, v in state.items()})
        return module.eval()

    def build_encoder(self) -> RnnEncoder:
        return self._load(RnnEncoder(self.encoder_config), self.encoder_state)

    def build_discriminator(self) -> PairDiscriminator:
        return self._load(PairDiscriminator(self.discriminator_config), self.discriminator_state)


def _json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


def save_checkpoint(ckpt: ModelCheckpoint, path: Path | str) -> Path:
    """Writes a ``key=value`` manifest terminated by ``end``, then one flat little-endian blob."""
    path = Path(path)
    numpy_dtype = _DTYPES[ckpt.precision][0]

    lines = [
        CHECKPOINT_MAGIC,
        f"version={CHECKPOINT_VERSION}",
        f"dtype={numpy_dtype}",
        f"seed={ckpt.seed}",
        f"epoch={ckpt.epoch}",
        f"encoder_config={_json(ckpt.encoder_config.model_dump(mode='json'))}",
        f"discriminator_config={_json(ckpt.discriminator_config.model_dump(mode='json'))}",
        f"train_config={_json(ckpt.train_config)}",
    ]
    chunks, offset = [], 0
    for prefix, state in (("encoder", ckpt.encoder_state), ("discriminator", ckpt.discriminator_state)):
        for name, array in state.items():
            data = np.ascontiguousarray(array, dtype=numpy_dtype).tobytes()
            shape = "x".join(str(s) for s in np.shape(array))
            lines.append(f"tensor={prefix}/{name};shape={shape};offset={offset}")
            chunks.append(data)
            offset += len(data)
    blob = b"".join(chunks)
    lines.append(f"blob_bytes={len(blob)}")
    lines.append(f"blob_crc32c={google_crc32c.value(blob):08x}")
    lines.append("end")

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(("\n".join(lines) + "\n").encode("utf-8") + blob)
    logger.info(f"Saved checkpoint (epoch {ckpt.epoch}, {offset} bytes of parameters) to {path}")
    return path


def load_checkpoint(path: Path | str) -> ModelCheckpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointLoadError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    marker = raw.find(b"\nend\n")
    if not raw.startswith(CHECKPOINT_MAGIC.encode()) or marker < 0:
        raise CheckpointLoadError(f"{path}: missing manifest (truncated or not a checkpoint)")

    blob = raw[marker + len(b"\nend\n"):]
    fields: dict[str, str] = {}
    tensors: list[tuple[str, tuple[int, ...], int]] = []
    try:
        for line in raw[: marker + 1].decode("utf-8").splitlines()[1:]:
            key, sep, value = line.partition("=")
            if not sep:
                raise CheckpointLoadError(f"{path}: malformed manifest line {line!r}")
            if key == "tensor":
                name, shape, offset = value.split(";")
                dims = shape.removeprefix("shape=")
                tensors.append((name, tuple(int(s) for s in dims.split("x")) if dims else (), int(offset.removeprefix("offset="))))
            else:
                fields[key] = value

        version = int(fields["version"])
        if version != CHECKPOINT_VERSION:
            raise CheckpointLoadError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
        numpy_dtype = fields["dtype"]
        precision = next(k for k, (np_name, _) in _DTYPES.items() if np_name == numpy_dtype)
        expected_bytes = int(fields["blob_bytes"])
        if len(blob) != expected_bytes:
            raise CheckpointLoadError(f"{path}: parameter blob has {len(blob)} bytes, manifest declares {expected_bytes}")
        if f"{google_crc32c.value(blob):08x}" != fields["blob_crc32c"]:
            raise CheckpointLoadError(f"{path}: parameter blob checksum mismatch")

        states: dict[str, dict[str, np.ndarray]] = {"encoder": {}, "discriminator": {}}
        itemsize = np.dtype(numpy_dtype).itemsize
        for name, shape, offset in tensors:
            prefix, _, key = name.partition("/")
            count = int(np.prod(shape)) if shape else 1
            if prefix not in states or offset + count * itemsize > len(blob):
                raise CheckpointLoadError(f"{path}: tensor {name} does not fit the blob")
            array = np.frombuffer(blob, dtype=numpy_dtype, count=count, offset=offset).reshape(shape)
            states[prefix][key] = array.astype(numpy_dtype)

        return ModelCheckpoint(
            encoder_config=EncoderConfig.model_validate_json(fields["encoder_config"]),
            discriminator_config=DiscriminatorConfig.model_validate_json(fields["discriminator_config"]),
            encoder_state=states["encoder"],
            discriminator_state=states["discriminator"],
            train_config=json.loads(fields["train_config"]),
            seed=int(fields["seed"]),
            epoch=int(fields["epoch"]),
            precision=precision,
        )
    except CheckpointLoadError:
        raise
    except (KeyError, ValueError, StopIteration) as e:
        raise CheckpointLoadError(f"{path}: corrupt manifest ({type(e).__name__}: {e})") from e
