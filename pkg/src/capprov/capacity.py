"""Per-pod QPS capacity from a fitted normal distribution (mean + 3 std)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .trace import SECONDS_PER_DAY

MIN_SAMPLES = 30


@dataclass(frozen=True)
class CapacityModel:
    mu: float
    sigma: float
    threshold: float
    n_samples: int
    active_hours: tuple[float, float] | None = None
    median: float | None = None  # diagnostic only; not used for sizing

    def __post_init__(self):
        if self.sigma < 0:
            raise ValidationError(f"sigma must be >= 0, got {self.sigma}")
        if self.threshold != self.mu + 3.0 * self.sigma:
            raise ValidationError("threshold must equal mu + 3 * sigma")

    @classmethod
    def from_params(cls, mu: float, sigma: float, n_samples: int = 0, active_hours=None) -> "CapacityModel":
        return cls(float(mu), float(sigma), float(mu) + 3.0 * float(sigma), int(n_samples), active_hours)

    def to_dict(self) -> dict:
        return {
            "mu": self.mu,
            "sigma": self.sigma,
            "threshold": self.threshold,
            "n_samples": self.n_samples,
            "active_hours": list(self.active_hours) if self.active_hours else None,
            "median": self.median,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "CapacityModel":
        try:
            hours = doc.get("active_hours")
            return cls(
                float(doc["mu"]),
                float(doc["sigma"]),
                float(doc["threshold"]),
                int(doc.get("n_samples", 0)),
                tuple(hours) if hours else None,
                doc.get("median"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed capacity document: {exc}") from None


def hour_of_day(ts) -> np.ndarray:
    return (np.asarray(ts, dtype=np.int64) % SECONDS_PER_DAY) / 3600.0


def filter_active_hours(values: np.ndarray, timestamps: np.ndarray, start_hour: float, end_hour: float) -> np.ndarray:
    """Keep samples whose hour of day lies in [start_hour, end_hour); wraps past midnight."""
    hours = hour_of_day(timestamps)
    if start_hour <= end_hour:
        keep = (hours >= start_hour) & (hours < end_hour)
    else:
        keep = (hours >= start_hour) | (hours < end_hour)
    return values[keep]


def _mean_std(values: list[float]) -> tuple[float, float]:
    n = len(values)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var)


def fit_capacity(
    per_instance_qps: Sequence[float],
    timestamps: Sequence[int] | None = None,
    active_hours: tuple[float, float] | None = None,
) -> CapacityModel:
    """Fit mean and sample std of per-pod processed QPS; threshold = mean + 3 std.

    Samples outside mean +/- 3 std of a first fit are treated as anomalies
    and dropped before a single refit.
    """
    values = np.asarray(per_instance_qps, dtype=float)
    if active_hours is not None:
        if timestamps is None:
            raise ValidationError("active_hours filtering needs sample timestamps")
        ts = np.asarray(timestamps)
        if ts.shape != values.shape:
            raise ValidationError("timestamps and samples differ in length")
        values = filter_active_hours(values, ts, *active_hours)
    if not np.all(np.isfinite(values)) or np.any(values < 0):
        raise ValidationError("capacity samples must be finite and nonnegative")
    if values.size < MIN_SAMPLES:
        raise ValidationError(f"need at least {MIN_SAMPLES} samples after filtering, got {values.size}")

    # sorting makes every sum below independent of input order
    data = sorted(values.tolist())
    mean, std = _mean_std(data)
    kept = [v for v in data if abs(v - mean) <= 3.0 * std]
    if len(kept) >= 2:
        mean, std = _mean_std(kept)
    else:
        kept = data
    median = float(np.median(kept))
    hours = tuple(float(h) for h in active_hours) if active_hours is not None else None
    return CapacityModel(mean, std, mean + 3.0 * std, len(kept), hours, median)


def demand_to_replicas(model: CapacityModel | float, total_qps: float) -> int:
    """Replicas needed so that replicas * threshold >= total_qps."""
    threshold = model.threshold if isinstance(model, CapacityModel) else float(model)
    if threshold <= 0:
        raise ValidationError(f"capacity threshold must be positive, got {threshold}")
    if total_qps < 0 or not math.isfinite(total_qps):
        raise ValidationError(f"demand must be finite and nonnegative, got {total_qps}")
    ratio = total_qps / threshold
    n = math.ceil(ratio)
    # the division can round across an integer boundary in either direction
    if n > 0 and (n - 1) * threshold >= total_qps:
        n -= 1
    elif n * threshold < total_qps:
        n += 1
    return int(n)
