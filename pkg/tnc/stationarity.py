"""Augmented Dickey-Fuller testing and per-window neighborhood-range estimation."""

import logging
import threading
import warnings
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, computed_field, model_validator
from statsmodels.tsa.stattools import adfuller

from .errors import AdfTestError, ContractError

logger = logging.getLogger(__name__)

MIN_ADF_LENGTH = 12


class StationarityRule(StrEnum):
    ALL = "all"
    ANY = "any"
    MAJORITY = "majority"


@dataclass(frozen=True)
class AdfResult:
    test_statistic: float
    p_value: float
    chosen_lag: int
    n_obs_used: int
    critical_values: dict = field(default_factory=dict)
    ic_best: Optional[float] = None


class NeighborhoodSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    eta: int = Field(ge=1)
    delta: int = Field(ge=1)
    eta_max: int = Field(default=3, ge=1)
    p_threshold: float = Field(default=0.01, ge=0, le=1)

    @model_validator(mode="after")
    def _eta_in_range(self) -> "NeighborhoodSpec":
        if self.eta > self.eta_max:
            raise ValueError(f"eta={self.eta} exceeds eta_max={self.eta_max}")
        return self

    @computed_field
    @property
    def gaussian_spread(self) -> float:
        return float(self.eta * self.delta)

    @computed_field
    @property
    def non_neighbor_margin(self) -> float:
        return 4.0 * self.gaussian_spread


def default_max_lag(n_obs: int) -> int:
    return int(np.floor(12.0 * (n_obs / 100.0) ** 0.25))


def adf_test(series, max_lag: Optional[int] = None) -> AdfResult:
    """ADF regression with a constant term; the lag is picked by AIC over 0..max_lag."""
    x = np.asarray(series, dtype=np.float64).ravel()
    if x.size < MIN_ADF_LENGTH:
        raise AdfTestError(f"series of length {x.size} is shorter than {MIN_ADF_LENGTH}")
    if not np.all(np.isfinite(x)):
        raise AdfTestError("series contains non-finite values")
    if np.ptp(x) == 0:
        raise AdfTestError("series is constant")

    if max_lag is None:
        max_lag = default_max_lag(x.size)
    # statsmodels requires maxlag < nobs/2 - ntrend - 1
    max_lag = max(0, min(max_lag, x.size // 2 - 2))

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            if max_lag > 0:
                stat, p_value, used_lag, n_obs, crit, ic_best = adfuller(
                    x, maxlag=max_lag, regression="c", autolag="AIC"
                )
            else:
                stat, p_value, used_lag, n_obs, crit = adfuller(x, maxlag=0, regression="c", autolag=None)
                ic_best = None
    except (ValueError, np.linalg.LinAlgError) as e:
        raise AdfTestError(f"ADF regression failed: {e}") from e

    if not np.isfinite(stat):
        raise AdfTestError("ADF statistic is not finite (near-constant series)")
    return AdfResult(
        test_statistic=float(stat),
        p_value=float(np.clip(p_value, 0.0, 1.0)),
        chosen_lag=int(used_lag),
        n_obs_used=int(n_obs),
        critical_values={k: float(v) for k, v in crit.items()},
        ic_best=None if ic_best is None else float(ic_best),
    )


def span_is_stationary(
    span: np.ndarray,
    p_threshold: float,
    rule: StationarityRule = StationarityRule.ALL,
) -> bool:
    """Multivariate verdict: each feature is tested separately, then combined by ``rule``.

    A feature whose test cannot run counts as failing.
    """
    verdicts = []
    for feature in np.atleast_2d(span):
        try:
            verdicts.append(adf_test(feature).p_value < p_threshold)
        except AdfTestError:
            verdicts.append(False)
    if rule == StationarityRule.ALL:
        return all(verdicts)
    if rule == StationarityRule.ANY:
        return any(verdicts)
    return sum(verdicts) * 2 > len(verdicts)


def span_bounds(t: int, width: int) -> tuple[int, int]:
    start = t - width // 2
    return start, start + width


def estimate_eta(
    instance: np.ndarray,
    t: int,
    delta: int,
    p_threshold: float = 0.01,
    eta_max: int = 3,
    rule: StationarityRule = StationarityRule.ALL,
) -> NeighborhoodSpec:
    """Grows the neighborhood from one window toward ``eta_max`` windows while the
    span around ``t`` still tests stationary; stops at the first failing width.
    """
    instance = np.atleast_2d(instance)
    length = instance.shape[-1]
    start, stop = span_bounds(t, eta_max * delta)
    if start < 0 or stop > length:
        raise ContractError(
            f"span of {eta_max}×{delta} steps around t={t} leaves [0, {length})"
        )

    eta = 1
    for candidate in range(1, eta_max + 1):
        lo, hi = span_bounds(t, candidate * delta)
        if not span_is_stationary(instance[:, lo:hi], p_threshold, rule):
            break
        eta = candidate
    return NeighborhoodSpec(eta=eta, delta=delta, eta_max=eta_max, p_threshold=p_threshold)


class NeighborhoodCache:
    """Thread-safe memo of ``estimate_eta`` keyed by (instance, t, delta)."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._entries: dict[tuple[int, int, int], NeighborhoodSpec] = {}
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._entries)

    def get_or_compute(
        self,
        instance_index: int,
        instance: np.ndarray,
        t: int,
        delta: int,
        p_threshold: float,
        eta_max: int,
        rule: StationarityRule = StationarityRule.ALL,
    ) -> NeighborhoodSpec:
        key = (instance_index, t, delta)
        with self._lock:
            cached = self._entries.get(key)
            if cached is not None:
                self.hits += 1
                return cached
            self.misses += 1
        # the test runs outside the lock; two racing writers store equal values
        spec = estimate_eta(instance, t, delta, p_threshold, eta_max, rule)
        with self._lock:
            self._entries.setdefault(key, spec)
        return spec
