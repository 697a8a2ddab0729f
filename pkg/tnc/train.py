"""Temporal neighborhood sampling, the PU-weighted contrastive objective and the
training loop that fits the encoder and discriminator together.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field

from .dataset import TimeSeriesDataset
from .errors import ContractError, NumericalError, SamplingError, TrainingError
from .model import (
    DiscriminatorConfig,
    EncoderConfig,
    ModelCheckpoint,
    PairDiscriminator,
    RnnEncoder,
    backward,
    build_models,
    named_parameters,
)
from .stationarity import NeighborhoodCache, NeighborhoodSpec, StationarityRule, span_bounds

logger = logging.getLogger(__name__)

PROBABILITY_CLAMP = 1e-7


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    delta: int = Field(default=50, ge=2)
    encoding_size: int = Field(default=10, ge=1)
    w: float = Field(default=0.05, ge=0, lt=1)
    samples_per_anchor: int = Field(default=20, ge=1)
    anchors_per_instance: int = Field(default=20, ge=1)
    epochs: int = Field(default=10, ge=1)
    batch_size: int = Field(default=32, ge=1)
    learning_rate: float = Field(default=1e-3, ge=0)
    adam_beta1: float = Field(default=0.9, ge=0, lt=1)
    adam_beta2: float = Field(default=0.999, ge=0, lt=1)
    adam_eps: float = Field(default=1e-8, gt=0)
    weight_decay: float = Field(default=0.0, ge=0)
    seed: int = 42
    eta_max: int = Field(default=3, ge=1)
    p_threshold: float = Field(default=0.01, ge=0, le=1)
    stationarity_rule: StationarityRule = StationarityRule.ALL
    validation_fraction: float = Field(default=0.2, ge=0, lt=1)
    precision: Literal["float32", "float64"] = "float32"
    threads: int = Field(default=1, ge=1)
    max_resample_rounds: int = Field(default=100, ge=1)


@dataclass(frozen=True)
class Window:
    instance_index: int
    center: int
    delta: int
    values: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class BatchLoss:
    total: float
    neighbor_term: float
    nonneighbor_negative_term: float
    nonneighbor_positive_term: float
    discriminator_accuracy: float

    @classmethod
    def average(cls, losses: Sequence["BatchLoss"], weights: Optional[Sequence[float]] = None) -> "BatchLoss":
        if not losses:
            raise ContractError("cannot average an empty list of losses")
        weights = np.ones(len(losses)) if weights is None else np.asarray(weights, dtype=np.float64)
        weights = weights / weights.sum()

        def _mean(attr: str) -> float:
            return float(sum(w * getattr(loss, attr) for w, loss in zip(weights, losses)))

        return cls(
            total=_mean("total"),
            neighbor_term=_mean("neighbor_term"),
            nonneighbor_negative_term=_mean("nonneighbor_negative_term"),
            nonneighbor_positive_term=_mean("nonneighbor_positive_term"),
            discriminator_accuracy=_mean("discriminator_accuracy"),
        )


@dataclass
class EpochRecord:
    epoch: int
    train: BatchLoss
    validation: Optional[BatchLoss]
    anchors_used: int
    anchors_skipped: int


@dataclass
class TrainResult:
    checkpoint: ModelCheckpoint
    history: list[EpochRecord]
    best_epoch: int
    train_instances: np.ndarray
    validation_instances: np.ndarray


def valid_center_range(length: int, delta: int) -> tuple[int, int]:
    """Inclusive range of centers t whose window [t - δ/2, t + δ/2) lies in [0, length)."""
    return delta // 2, length - delta + delta // 2


def extract_window(dataset: TimeSeriesDataset, instance_index: int, t: int, delta: int) -> Window:
    lo, hi = valid_center_range(dataset.length, delta)
    if not lo <= t <= hi:
        raise ContractError(f"window of size {delta} centered at t={t} leaves [0, {dataset.length})")
    start = t - delta // 2
    values = np.array(dataset.values[instance_index, :, start : start + delta], copy=True)
    return Window(instance_index=instance_index, center=int(t), delta=delta, values=values)


def sample_neighbors(
    dataset: TimeSeriesDataset,
    anchor: Window,
    spec: NeighborhoodSpec,
    count: int,
    rng: np.random.Generator,
    max_rounds: int = 100,
) -> list[Window]:
    """Centers t* ~ N(t, (η·δ)²), rejection-resampled until the window is in bounds."""
    if count <= 0:
        return []
    lo, hi = valid_center_range(dataset.length, anchor.delta)
    centers: list[int] = []
    for _ in range(max_rounds):
        draws = np.rint(rng.normal(anchor.center, spec.gaussian_spread, size=count - len(centers))).astype(np.int64)
        centers.extend(draws[(draws >= lo) & (draws <= hi)].tolist())
        if len(centers) == count:
            return [extract_window(dataset, anchor.instance_index, t, anchor.delta) for t in centers]
    raise SamplingError(
        f"found only {len(centers)}/{count} in-bounds neighbors around t={anchor.center} "
        f"after {max_rounds} rounds (T={dataset.length}, δ={anchor.delta})"
    )


def non_neighbor_centers(length: int, delta: int, t: int, margin: float) -> np.ndarray:
    lo, hi = valid_center_range(length, delta)
    candidates = np.arange(lo, hi + 1)
    return candidates[np.abs(candidates - t) > margin]


def sample_non_neighbors(
    dataset: TimeSeriesDataset,
    anchor: Window,
    spec: NeighborhoodSpec,
    count: int,
    rng: np.random.Generator,
) -> list[Window]:
    """Centers drawn uniformly from the in-bounds positions more than 4·η·δ away from t."""
    if count <= 0:
        return []
    feasible = non_neighbor_centers(dataset.length, anchor.delta, anchor.center, spec.non_neighbor_margin)
    if feasible.size == 0:
        raise SamplingError(
            f"no window lies more than {spec.non_neighbor_margin:g} steps from t={anchor.center} "
            f"in an instance of length {dataset.length}; skip this anchor"
        )
    centers = rng.choice(feasible, size=count, replace=True)
    windows = [extract_window(dataset, anchor.instance_index, int(t), anchor.delta) for t in centers]
    assert all(abs(w.center - anchor.center) > spec.non_neighbor_margin for w in windows)
    return windows


def tnc_objective(
    p_neighbors: torch.Tensor,
    p_non_neighbors: torch.Tensor,
    w: float,
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Differentiable PU-weighted objective.

    Inputs are (anchors, samples) or (samples,) probabilities. Each expectation is
    a mean over the samples of one anchor; the result is the mean over anchors.
    """
    p_nb = p_neighbors.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)
    p_nn = p_non_neighbors.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)
    terms = {
        "neighbor_term": torch.log(p_nb).mean(dim=-1).mean(),
        "nonneighbor_negative_term": ((1.0 - w) * torch.log1p(-p_nn)).mean(dim=-1).mean(),
        "nonneighbor_positive_term": (w * torch.log(p_nn)).mean(dim=-1).mean(),
    }
    total = -(terms["neighbor_term"] + terms["nonneighbor_negative_term"] + terms["nonneighbor_positive_term"])
    return total, terms


def _discriminator_accuracy(p_nb: torch.Tensor, p_nn: torch.Tensor) -> float:
    correct = (p_nb > 0.5).sum() + (p_nn < 0.5).sum()
    return float(correct) / float(p_nb.numel() + p_nn.numel())


def _batch_loss(total: torch.Tensor, terms: dict[str, torch.Tensor], p_nb, p_nn) -> BatchLoss:
    return BatchLoss(
        total=float(total.detach()),
        neighbor_term=float(terms["neighbor_term"].detach()),
        nonneighbor_negative_term=float(terms["nonneighbor_negative_term"].detach()),
        nonneighbor_positive_term=float(terms["nonneighbor_positive_term"].detach()),
        discriminator_accuracy=_discriminator_accuracy(p_nb.detach(), p_nn.detach()),
    )


def tnc_loss(d_neighbors, d_nonneighbors, w: float) -> BatchLoss:
    p_nb = torch.as_tensor(np.asarray(d_neighbors, dtype=np.float64))
    p_nn = torch.as_tensor(np.asarray(d_nonneighbors, dtype=np.float64))
    if p_nb.numel() == 0 or p_nn.numel() == 0:
        raise ContractError("tnc_loss needs at least one neighbor and one non-neighbor probability")
    if p_nb.shape != p_nn.shape:
        raise ContractError(f"probability lists differ in shape: {tuple(p_nb.shape)} vs {tuple(p_nn.shape)}")
    if not 0 <= w < 1:
        raise ContractError(f"w must lie in [0, 1), got {w}")
    if ((p_nb < 0) | (p_nb > 1) | (p_nn < 0) | (p_nn > 1)).any():
        raise ContractError("discriminator outputs must be probabilities in [0, 1]")
    total, terms = tnc_objective(p_nb, p_nn, w)
    return _batch_loss(total, terms, p_nb, p_nn)


def estimate_pu_weight(state_labels: np.ndarray) -> float:
    """Chance that a randomly drawn distant window shares the anchor's state, Σ π_s²."""
    _, counts = np.unique(np.asarray(state_labels).ravel(), return_counts=True)
    prior = counts / counts.sum()
    return float(np.sum(prior**2))


def split_instances(n_instances: int, validation_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng(seed).permutation(n_instances)
    n_val = int(round(n_instances * validation_fraction))
    if validation_fraction > 0 and n_instances >= 2:
        n_val = min(max(n_val, 1), n_instances - 1)
    else:
        n_val = 0
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def anchor_center_range(length: int, delta: int, eta_max: int) -> tuple[int, int]:
    width = eta_max * delta
    lo = width // 2
    hi = length - width + width // 2
    return lo, hi


def plan_anchors(
    instances: np.ndarray,
    length: int,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> list[tuple[int, int]]:
    lo, hi = anchor_center_range(length, cfg.delta, cfg.eta_max)
    if hi < lo:
        raise ContractError(
            f"instances of length {length} are shorter than the {cfg.eta_max}×{cfg.delta} stationarity span"
        )
    plan = [
        (int(i), int(t))
        for i in instances
        for t in rng.integers(lo, hi + 1, size=cfg.anchors_per_instance)
    ]
    return [plan[j] for j in rng.permutation(len(plan))]


class _BatchSampler:
    def __init__(self, dataset: TimeSeriesDataset, cfg: TrainConfig, cache: NeighborhoodCache, pool: Optional[ThreadPoolExecutor]):
        self.dataset = dataset
        self.cfg = cfg
        self.cache = cache
        self.pool = pool

    def _neighborhood(self, anchor: tuple[int, int]) -> NeighborhoodSpec:
        i, t = anchor
        cfg = self.cfg
        return self.cache.get_or_compute(
            i, self.dataset.values[i], t, cfg.delta, cfg.p_threshold, cfg.eta_max, cfg.stationarity_rule
        )

    def __call__(self, anchors: list[tuple[int, int]], rng: np.random.Generator) -> tuple[Optional[np.ndarray], int]:
        """Returns an (A, 1 + 2K, D, δ) window stack and the number of skipped anchors."""
        cfg = self.cfg
        if self.pool is not None:
            specs = list(self.pool.map(self._neighborhood, anchors))
        else:
            specs = [self._neighborhood(a) for a in anchors]

        stacks, skipped = [], 0
        for (i, t), spec in zip(anchors, specs):
            anchor = extract_window(self.dataset, i, t, cfg.delta)
            try:
                neighbors = sample_neighbors(self.dataset, anchor, spec, cfg.samples_per_anchor, rng, cfg.max_resample_rounds)
                others = sample_non_neighbors(self.dataset, anchor, spec, cfg.samples_per_anchor, rng)
            except SamplingError as e:
                logger.debug(f"Skipping anchor (instance {i}, t={t}): {e}")
                skipped += 1
                continue
            stacks.append(np.stack([anchor.values] + [w.values for w in neighbors] + [w.values for w in others]))
        if not stacks:
            return None, skipped
        return np.stack(stacks), skipped


def pair_probabilities(
    encoder: RnnEncoder,
    discriminator: PairDiscriminator,
    windows: torch.Tensor,
    samples_per_anchor: int,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Encodes an (A, 1 + 2K, D, δ) stack; returns neighbor and non-neighbor probabilities, each (A, K)."""
    n_anchors, per_anchor = windows.shape[:2]
    z = encoder(windows.reshape(n_anchors * per_anchor, *windows.shape[2:])).reshape(n_anchors, per_anchor, -1)
    z_anchor = z[:, :1].expand(-1, per_anchor - 1, -1)
    p = torch.sigmoid(discriminator(z_anchor, z[:, 1:]))
    return p[:, :samples_per_anchor], p[:, samples_per_anchor:]


def _validate(
    encoder: RnnEncoder,
    discriminator: PairDiscriminator,
    sampler: _BatchSampler,
    instances: np.ndarray,
    length: int,
    cfg: TrainConfig,
    dtype: torch.dtype,
) -> Optional[BatchLoss]:
    if instances.size == 0:
        return None
    # fixed anchors and samples across epochs
    rng = np.random.default_rng([cfg.seed, 1])
    anchors = plan_anchors(instances, length, cfg, rng)
    losses, counts = [], []
    with torch.no_grad():
        for start in range(0, len(anchors), cfg.batch_size):
            stack, _ = sampler(anchors[start : start + cfg.batch_size], rng)
            if stack is None:
                continue
            p_nb, p_nn = pair_probabilities(encoder, discriminator, torch.as_tensor(stack, dtype=dtype), cfg.samples_per_anchor)
            total, terms = tnc_objective(p_nb, p_nn, cfg.w)
            losses.append(_batch_loss(total, terms, p_nb, p_nn))
            counts.append(stack.shape[0])
    return BatchLoss.average(losses, counts) if losses else None


def train(
    dataset: TimeSeriesDataset,
    encoder_config: EncoderConfig,
    discriminator_config: DiscriminatorConfig,
    cfg: TrainConfig,
) -> TrainResult:
    if encoder_config.input_features != dataset.n_features:
        raise ContractError(f"encoder takes {encoder_config.input_features} features, dataset has {dataset.n_features}")
    if encoder_config.window_size != cfg.delta:
        raise ContractError(f"encoder window {encoder_config.window_size} differs from training delta {cfg.delta}")
    if encoder_config.encoding_size != cfg.encoding_size:
        raise ContractError(f"encoder size {encoder_config.encoding_size} differs from training size {cfg.encoding_size}")

    encoder, discriminator = build_models(encoder_config, discriminator_config, cfg.seed, cfg.precision)
    dtype = next(encoder.parameters()).dtype
    params = named_parameters(encoder=encoder, discriminator=discriminator)
    optimizer = torch.optim.Adam(
        params.values(),
        lr=cfg.learning_rate,
        betas=(cfg.adam_beta1, cfg.adam_beta2),
        eps=cfg.adam_eps,
        weight_decay=cfg.weight_decay,
    )

    train_idx, val_idx = split_instances(dataset.n_instances, cfg.validation_fraction, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    cache = NeighborhoodCache()
    config_snapshot = cfg.model_dump(mode="json")
    logger.info(
        f"Training on {train_idx.size} instances, validating on {val_idx.size}; "
        f"δ={cfg.delta}, M={cfg.encoding_size}, w={cfg.w}, lr={cfg.learning_rate}"
    )

    history: list[EpochRecord] = []
    best = ModelCheckpoint.from_models(encoder, discriminator, config_snapshot, cfg.seed, epoch=0)
    best_epoch, best_score = 0, np.inf

    pool = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    try:
        sampler = _BatchSampler(dataset, cfg, cache, pool)
        for epoch in range(1, cfg.epochs + 1):
            encoder.train()
            discriminator.train()
            anchors = plan_anchors(train_idx, dataset.length, cfg, rng)
            losses, counts, skipped = [], [], 0
            for batch_no, start in enumerate(range(0, len(anchors), cfg.batch_size)):
                stack, n_skipped = sampler(anchors[start : start + cfg.batch_size], rng)
                skipped += n_skipped
                if stack is None:
                    continue
                p_nb, p_nn = pair_probabilities(encoder, discriminator, torch.as_tensor(stack, dtype=dtype), cfg.samples_per_anchor)
                total, terms = tnc_objective(p_nb, p_nn, cfg.w)
                try:
                    grads = backward(total, params)
                except NumericalError as e:
                    first = anchors[start]
                    raise TrainingError(
                        f"epoch {epoch}, batch {batch_no} (first anchor: instance {first[0]}, t={first[1]}): {e}"
                    ) from e
                optimizer.zero_grad(set_to_none=True)
                for name, p in params.items():
                    p.grad = grads[name]
                optimizer.step()
                losses.append(_batch_loss(total, terms, p_nb, p_nn))
                counts.append(stack.shape[0])

            if not losses:
                raise TrainingError(f"epoch {epoch}: every anchor was skipped; instances are too short for the margin")
            train_loss = BatchLoss.average(losses, counts)

            encoder.eval()
            discriminator.eval()
            val_loss = _validate(encoder, discriminator, sampler, val_idx, dataset.length, cfg, dtype)
            record = EpochRecord(epoch, train_loss, val_loss, int(sum(counts)), skipped)
            history.append(record)

            score = val_loss.total if val_loss is not None else train_loss.total
            if score < best_score:
                best_score, best_epoch = score, epoch
                best = ModelCheckpoint.from_models(encoder, discriminator, config_snapshot, cfg.seed, epoch=epoch)

            val_text = (
                f"val_loss={val_loss.total:.4f} val_acc={val_loss.discriminator_accuracy:.3f}"
                if val_loss is not None else "val_loss=n/a"
            )
            logger.info(
                f"epoch={epoch} loss={train_loss.total:.4f} "
                f"nb={train_loss.neighbor_term:.4f} nn_neg={train_loss.nonneighbor_negative_term:.4f} "
                f"nn_pos={train_loss.nonneighbor_positive_term:.4f} acc={train_loss.discriminator_accuracy:.3f} "
                f"{val_text} skipped={skipped} eta_cache={len(cache)}"
            )
    finally:
        if pool is not None:
            pool.shutdown()

    return TrainResult(best, history, best_epoch, train_idx, val_idx)


@dataclass(frozen=True)
class WeightSweepRow:
    w: float
    final_loss: float
    discriminator_accuracy: float
    validation_accuracy: Optional[float]


def sweep_weights(
    dataset: TimeSeriesDataset,
    encoder_config: EncoderConfig,
    discriminator_config: DiscriminatorConfig,
    cfg: TrainConfig,
    weights: Sequence[float],
) -> list[WeightSweepRow]:
    """Retrains once per PU weight and reports the final objective and discriminator accuracy."""
    rows = []
    for w in weights:
        result = train(dataset, encoder_config, discriminator_config, cfg.model_copy(update={"w": float(w)}))
        last = result.history[-1]
        rows.append(
            WeightSweepRow(
                w=float(w),
                final_loss=last.train.total,
                discriminator_accuracy=last.train.discriminator_accuracy,
                validation_accuracy=None if last.validation is None else last.validation.discriminator_accuracy,
            )
        )
        logger.info(f"w={w}: loss={last.train.total:.4f} accuracy={last.train.discriminator_accuracy:.3f}")
    return rows
