"""In-memory time-series datasets and the binary ``TNCD`` dataset file."""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import google_crc32c
import numpy as np
import pandas as pd

from .errors import ContractError, DatasetFormatError

logger = logging.getLogger(__name__)

MAGIC = b"TNCD"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIIIB")
_CHECKSUM = struct.Struct("<I")
FLAG_LABELS = 0x01
FLAG_NORMALIZED = 0x02


@dataclass
class TimeSeriesDataset:
    """N instances of D features over T steps, with optional per-step state labels."""

    values: np.ndarray
    state_labels: Optional[np.ndarray] = None
    feature_mean: Optional[np.ndarray] = None
    feature_std: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values)
        if self.values.ndim != 3:
            raise ContractError(f"dataset values must be N×D×T, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ContractError("dataset values contain non-finite entries")
        if self.state_labels is not None:
            self.state_labels = np.asarray(self.state_labels, dtype=np.int64)
            expected = (self.n_instances, self.length)
            if self.state_labels.shape != expected:
                raise ContractError(
                    f"state labels shape {self.state_labels.shape} does not match {expected}"
                )
        if (self.feature_mean is None) != (self.feature_std is None):
            raise ContractError("normalization metadata needs both mean and std")

    @property
    def n_instances(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    @property
    def length(self) -> int:
        return self.values.shape[2]

    @property
    def normalized(self) -> bool:
        return self.feature_mean is not None

    @property
    def has_labels(self) -> bool:
        return self.state_labels is not None

    def subset(self, indices) -> "TimeSeriesDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return TimeSeriesDataset(
            values=self.values[indices],
            state_labels=None if self.state_labels is None else self.state_labels[indices],
            feature_mean=self.feature_mean,
            feature_std=self.feature_std,
        )


def z_normalize(values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-feature z-scoring over all instances and steps.

    Returns the normalized array together with the mean and std used. A feature
    with zero spread keeps std 1 so it maps to zeros.
    """
    mean = values.mean(axis=(0, 2))
    std = values.std(axis=(0, 2))
    std = np.where(std > 0, std, 1.0)
    normalized = (values - mean[None, :, None]) / std[None, :, None]
    return normalized, mean, std


def write_dataset(dataset: TimeSeriesDataset, path: Path | str) -> Path:
    path = Path(path)
    flags = 0
    if dataset.has_labels:
        if dataset.state_labels.min() < 0 or dataset.state_labels.max() > 255:
            raise ContractError("state labels must fit in an unsigned byte")
        flags |= FLAG_LABELS
    if dataset.normalized:
        flags |= FLAG_NORMALIZED

    chunks = [
        _HEADER.pack(MAGIC, FORMAT_VERSION, dataset.n_instances, dataset.n_features, dataset.length, flags),
        np.ascontiguousarray(dataset.values, dtype="<f4").tobytes(),
    ]
    if dataset.has_labels:
        chunks.append(np.ascontiguousarray(dataset.state_labels, dtype=np.uint8).tobytes())
    if dataset.normalized:
        chunks.append(np.asarray(dataset.feature_mean, dtype="<f4").tobytes())
        chunks.append(np.asarray(dataset.feature_std, dtype="<f4").tobytes())
    body = b"".join(chunks)
    checksum = _CHECKSUM.pack(google_crc32c.value(body))

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(body + checksum)
    logger.info(f"Wrote dataset {dataset.values.shape} to {path}")
    return path


def read_dataset(path: Path | str) -> TimeSeriesDataset:
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError(f"dataset file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _HEADER.size + _CHECKSUM.size:
        raise DatasetFormatError(f"{path}: file too short for a TNCD header")

    magic, version, n, d, t, flags = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: unsupported format version {version}")

    body, (stored,) = raw[: -_CHECKSUM.size], _CHECKSUM.unpack(raw[-_CHECKSUM.size:])
    if google_crc32c.value(body) != stored:
        raise DatasetFormatError(f"{path}: checksum mismatch")

    n_values = n * d * t
    expected = _HEADER.size + 4 * n_values
    if flags & FLAG_LABELS:
        expected += n * t
    if flags & FLAG_NORMALIZED:
        expected += 8 * d
    if len(body) != expected:
        raise DatasetFormatError(
            f"{path}: declared sizes N={n} D={d} T={t} need {expected} bytes, found {len(body)}"
        )

    offset = _HEADER.size
    values = np.frombuffer(body, dtype="<f4", count=n_values, offset=offset).reshape(n, d, t)
    offset += 4 * n_values
    labels = None
    if flags & FLAG_LABELS:
        labels = np.frombuffer(body, dtype=np.uint8, count=n * t, offset=offset).reshape(n, t)
        offset += n * t
    mean = std = None
    if flags & FLAG_NORMALIZED:
        mean = np.frombuffer(body, dtype="<f4", count=d, offset=offset).astype(np.float64)
        std = np.frombuffer(body, dtype="<f4", count=d, offset=offset + 4 * d).astype(np.float64)

    return TimeSeriesDataset(
        values=values.astype(np.float32),
        state_labels=None if labels is None else labels.astype(np.int64),
        feature_mean=mean,
        feature_std=std,
    )


def _read_csv(path: Path, **kwargs) -> pd.DataFrame:
    try:
        return pd.read_csv(path, **kwargs)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DatasetFormatError(f"{path}: {e}") from e


def _numeric_frame(path: Path, columns: list[str]) -> pd.DataFrame:
    frame = _read_csv(path)

    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DatasetFormatError(f"{path}: missing column(s) {missing}; available {list(frame.columns)}")

    for column in columns:
        converted = pd.to_numeric(frame[column], errors="coerce")
        bad = converted.isna()
        if bad.any():
            # +2: one for the header line, one for 1-based numbering
            line = int(np.flatnonzero(bad.to_numpy())[0]) + 2
            raise DatasetFormatError(
                f"{path}: line {line}: column {column!r} value {frame[column].iloc[line - 2]!r} is not numeric"
            )
        frame[column] = converted
    return frame


def read_csv_column(path: Path | str, column: str) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError(f"CSV file not found: {path}")
    frame = _numeric_frame(path, [column])
    return frame[column].to_numpy(dtype=np.float64)


def _integer_labels(path: Path, column: pd.Series) -> np.ndarray:
    values = column.to_numpy(dtype=np.float64)
    fractional = np.flatnonzero(values != np.round(values))
    if fractional.size:
        line = int(fractional[0]) + 2
        raise DatasetFormatError(f"{path}: line {line}: label {values[fractional[0]]!r} is not an integer")
    return values.astype(np.int64)


def dataset_from_csv(
    directory: Path | str,
    label_column: Optional[str] = None,
    normalize: bool = True,
) -> TimeSeriesDataset:
    """Reads one instance per CSV file; every non-label column is a feature."""
    directory = Path(directory)
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise DatasetFormatError(f"no CSV files found in {directory}")

    instances, labels, feature_columns = [], [], None
    for path in files:
        frame = _read_csv(path, nrows=0)
        columns = [c for c in frame.columns if c != label_column]
        if feature_columns is None:
            feature_columns = columns
        elif columns != feature_columns:
            raise DatasetFormatError(f"{path}: columns {columns} differ from {feature_columns}")
        needed = columns + ([label_column] if label_column else [])
        frame = _numeric_frame(path, needed)
        instances.append(frame[columns].to_numpy(dtype=np.float64).T)
        if label_column:
            labels.append(_integer_labels(path, frame[label_column]))

    lengths = {x.shape[1] for x in instances}
    if len(lengths) != 1:
        raise DatasetFormatError(f"CSV instances have differing lengths {sorted(lengths)}")

    values = np.stack(instances)
    mean = std = None
    if normalize:
        values, mean, std = z_normalize(values)
    logger.info(f"Loaded {len(files)} CSV instances with {len(feature_columns)} features from {directory}")
    return TimeSeriesDataset(
        values=values,
        state_labels=np.stack(labels) if label_column else None,
        feature_mean=mean,
        feature_std=std,
    )
