"""JSON run configuration shared by every CLI command.

A config file holds any subset of the sections below; omitted values take
their defaults. Command-line flags are applied on top as dotted overrides
(``train.learning_rate``) and the merged document is validated again.
``seed`` and ``threads`` are run-wide; the train section may only repeat them.

    {
      "version": 1,
      "seed": 42,
      "threads": 4,
      "generator": {"n_instances": 200, "length": 2000},
      "train": {"delta": 50, "encoding_size": 10, "w": 0.05, "epochs": 10},
      "eval": {"mode": "classify", "test_fraction": 0.2}
    }
"""

import logging
from enum import StrEnum
from pathlib import Path
from typing import Any, Literal, Mapping, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigurationError, InputError
from .model import DiscriminatorConfig, EncoderConfig
from .simgen import GeneratorSpec, HmmSpec, default_generator_spec, default_hmm_spec
from .train import TrainConfig

logger = logging.getLogger(__name__)


class EvalMode(StrEnum):
    CLUSTER = "cluster"
    CLASSIFY = "classify"
    TRAJECTORY = "trajectory"
    KNN_BASELINE = "knn-baseline"
    SUPERVISED = "supervised"


class GeneratorSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    hmm: HmmSpec = Field(default_factory=default_hmm_spec)
    spec: GeneratorSpec = Field(default_factory=default_generator_spec)
    n_instances: int = Field(default=500, ge=1)
    length: int = Field(default=2000, ge=1)


class ModelSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    hidden_size: int = Field(default=100, ge=1)
    bidirectional: bool = True
    hidden_multiplier: int = Field(default=4, ge=1)


class EvalSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: EvalMode = EvalMode.CLUSTER
    # None means non-overlapping windows (stride = delta)
    stride: Optional[int] = Field(default=None, ge=1)
    # None means one cluster per ground-truth state
    n_clusters: Optional[int] = Field(default=None, ge=1)
    kmeans_restarts: int = Field(default=10, ge=1)
    test_fraction: float = Field(default=0.2, gt=0, lt=1)
    probe_l2: float = Field(default=1e-4, gt=0)
    trajectory_instance: int = Field(default=0, ge=0)
    transition_tolerance: int = Field(default=1, ge=0)
    knn_k: int = Field(default=1, ge=1)
    knn_sample_cap: int = Field(default=50, ge=2)
    supervised_epochs: int = Field(default=20, ge=1)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    version: Literal[1] = 1
    seed: int = 42
    threads: int = Field(default=1, ge=1)
    generator: GeneratorSection = Field(default_factory=GeneratorSection)
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalSection = Field(default_factory=EvalSection)

    @model_validator(mode="after")
    def _apply_run_seed_and_threads(self) -> "RunConfig":
        # seed and threads are run-wide; the train section may only repeat them
        for key in ("seed", "threads"):
            if key in self.train.model_fields_set and getattr(self.train, key) != getattr(self, key):
                raise ValueError(
                    f"train.{key}={getattr(self.train, key)} conflicts with {key}={getattr(self, key)}; set {key} at the top level"
                )
        self.train = self.train.model_copy(update={"seed": self.seed, "threads": self.threads})
        return self

    @classmethod
    def load(cls, path: Path | str) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise InputError(f"cannot read config {path}: {e}") from e
        try:
            return cls.model_validate_json(text)
        except ValidationError as e:
            raise ConfigurationError(f"{path}: {e}") from e

    def with_overrides(self, overrides: Mapping[str, Any]) -> "RunConfig":
        """Applies ``{"section.key": value}`` overrides; ``None`` values are skipped."""
        document = self.model_dump(mode="json")
        for key in ("seed", "threads"):
            document["train"].pop(key)
        for dotted, value in overrides.items():
            if value is None:
                continue
            *parents, leaf = dotted.split(".")
            node = document
            for key in parents:
                node = node[key]
            node[leaf] = value
        try:
            return RunConfig.model_validate(document)
        except ValidationError as e:
            raise ConfigurationError(str(e)) from e

    def train_config(self) -> TrainConfig:
        """The train section; its seed and thread cap always equal the run-wide values."""
        return self.train

    def encoder_config(self, n_features: int) -> EncoderConfig:
        return EncoderConfig(
            input_features=n_features,
            window_size=self.train.delta,
            hidden_size=self.model.hidden_size,
            encoding_size=self.train.encoding_size,
            bidirectional=self.model.bidirectional,
        )

    def discriminator_config(self) -> DiscriminatorConfig:
        return DiscriminatorConfig(
            encoding_size=self.train.encoding_size,
            hidden_multiplier=self.model.hidden_multiplier,
        )

    def write(self, out_dir: Path | str) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "resolved_config.json"
        path.write_text(self.model_dump_json(indent=2) + "\n", encoding="utf-8")
        logger.debug(f"Resolved config written to {path}")
        return path
