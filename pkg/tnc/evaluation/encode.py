"""Sliding-window extraction, frozen-encoder inference and CSV export of encodings."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import torch

from ..dataset import TimeSeriesDataset
from ..errors import ContractError, EvaluationError
from ..model import ModelCheckpoint, RnnEncoder

logger = logging.getLogger(__name__)


@dataclass
class WindowSet:
    """Raw D×δ windows with their provenance and majority-state labels."""

    windows: np.ndarray
    labels: Optional[np.ndarray]
    instance_index: np.ndarray
    centers: np.ndarray

    def __len__(self) -> int:
        return self.windows.shape[0]

    def flattened(self) -> np.ndarray:
        return self.windows.reshape(len(self), -1)


@dataclass
class EncodedSet:
    encodings: np.ndarray
    labels: Optional[np.ndarray]
    instance_index: np.ndarray
    centers: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        self.encodings = np.asarray(self.encodings, dtype=np.float64)
        if self.encodings.ndim != 2:
            raise ContractError(f"encodings must be n×M, got shape {self.encodings.shape}")
        if not np.all(np.isfinite(self.encodings)):
            raise EvaluationError("encodings contain non-finite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self),):
                raise ContractError(f"{self.labels.shape[0]} labels for {len(self)} encodings")
            if (self.labels < 0).any():
                raise ContractError("state labels must be non-negative")

    def __len__(self) -> int:
        return self.encodings.shape[0]

    @property
    def encoding_size(self) -> int:
        return self.encodings.shape[1]

    def select(self, mask) -> "EncodedSet":
        return EncodedSet(
            encodings=self.encodings[mask],
            labels=None if self.labels is None else self.labels[mask],
            instance_index=self.instance_index[mask],
            centers=self.centers[mask],
        )

    def for_instances(self, instances) -> "EncodedSet":
        return self.select(np.isin(self.instance_index, np.asarray(instances)))


def majority_labels(label_windows: np.ndarray) -> np.ndarray:
    """Most frequent state per row; ties go to the smallest state index."""
    n_states = int(label_windows.max()) + 1
    counts = np.apply_along_axis(np.bincount, 1, label_windows, minlength=n_states)
    return counts.argmax(axis=1)


def window_set(
    dataset: TimeSeriesDataset,
    delta: int,
    stride: Optional[int] = None,
    instances: Optional[Sequence[int]] = None,
) -> WindowSet:
    stride = delta if stride is None else stride
    if stride < 1:
        raise ContractError(f"stride must be positive, got {stride}")
    if dataset.length < delta:
        raise EvaluationError(f"series length {dataset.length} is shorter than the window size {delta}")

    instances = np.arange(dataset.n_instances) if instances is None else np.asarray(instances, dtype=np.int64)
    starts = np.arange(0, dataset.length - delta + 1, stride)
    offsets = starts[:, None] + np.arange(delta)[None, :]

    # (instances, D, windows, δ) -> (instances, windows, D, δ)
    windows = dataset.values[instances][:, :, offsets].transpose(0, 2, 1, 3)
    labels = None
    if dataset.has_labels:
        labels = majority_labels(dataset.state_labels[instances][:, offsets].reshape(-1, delta))

    return WindowSet(
        windows=windows.reshape(-1, dataset.n_features, delta),
        labels=labels,
        instance_index=np.repeat(instances, starts.size),
        centers=np.tile(starts + delta // 2, instances.size),
    )


def _resolve_encoder(model: ModelCheckpoint | RnnEncoder) -> RnnEncoder:
    return model.build_encoder() if isinstance(model, ModelCheckpoint) else model.eval()


def encode_windows(encoder: RnnEncoder, windows: np.ndarray, batch_size: int = 512) -> np.ndarray:
    dtype = next(encoder.parameters()).dtype
    chunks = []
    with torch.no_grad():
        for start in range(0, windows.shape[0], batch_size):
            batch = torch.as_tensor(windows[start : start + batch_size], dtype=dtype)
            chunks.append(encoder(batch).cpu().numpy())
    if not chunks:
        return np.zeros((0, encoder.config.encoding_size))
    return np.concatenate(chunks).astype(np.float64)


def encode_dataset(
    model: ModelCheckpoint | RnnEncoder,
    dataset: TimeSeriesDataset,
    delta: int,
    stride: Optional[int] = None,
    instances: Optional[Sequence[int]] = None,
    batch_size: int = 512,
) -> EncodedSet:
    """Encodes every window of size ``delta`` taken every ``stride`` steps.

    ``stride`` defaults to ``delta`` (non-overlapping windows). Each window is
    labelled with the majority state it covers.
    """
    encoder = _resolve_encoder(model)
    cfg = encoder.config
    if cfg.window_size != delta:
        raise ContractError(f"checkpoint window size {cfg.window_size} does not match delta {delta}")
    if cfg.input_features != dataset.n_features:
        raise ContractError(
            f"checkpoint expects {cfg.input_features}×{cfg.window_size} windows, "
            f"dataset is {dataset.n_instances}×{dataset.n_features}×{dataset.length}"
        )

    ws = window_set(dataset, delta, stride, instances)
    encodings = encode_windows(encoder, ws.windows, batch_size)
    logger.debug(f"Encoded {len(ws)} windows into {encodings.shape[1]} dimensions")
    return EncodedSet(encodings, ws.labels, ws.instance_index, ws.centers)


def _encoding_frame(encoded: EncodedSet) -> pd.DataFrame:
    frame = pd.DataFrame(encoded.encodings, columns=[f"z_{j + 1}" for j in range(encoded.encoding_size)])
    frame.insert(0, "t", encoded.centers)
    return frame


def export_encodings_csv(encoded: EncodedSet, path: Path | str) -> Path:
    path = Path(path)
    frame = _encoding_frame(encoded)
    frame.insert(0, "instance", encoded.instance_index)
    if encoded.labels is not None:
        frame["label"] = encoded.labels
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    logger.info(f"Exported {len(frame)} encodings to {path}")
    return path


def export_trajectory_csv(encoded: EncodedSet, instance: int, path: Path | str) -> Path:
    """One row per window of a single instance: t, z_1..z_M, state_label."""
    path = Path(path)
    single = encoded.for_instances([instance])
    if len(single) == 0:
        raise EvaluationError(f"no encodings for instance {instance}")
    order = np.argsort(single.centers, kind="stable")
    single = single.select(order)
    frame = _encoding_frame(single)
    frame["state_label"] = single.labels if single.labels is not None else -1
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return path
