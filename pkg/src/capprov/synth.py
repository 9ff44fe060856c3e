"""Seeded synthetic workload generator (diurnal sinusoid, noise, spikes)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .trace import SECONDS_PER_DAY, WorkloadTrace


@dataclass(frozen=True)
class Spike:
    start: int  # seconds from trace start
    duration: int
    multiplier: float


@dataclass(frozen=True)
class SyntheticSpec:
    days: float = 7.0
    sample_interval: int = 60
    peak_qps: float = 12000.0
    peak_to_trough: float = 5.0
    noise: float = 0.05  # multiplicative, std as a fraction of the clean value
    period: int = SECONDS_PER_DAY
    trough_offset: int = 4 * 3600  # time of day of the minimum
    start: int = 0
    spikes: tuple[Spike, ...] = field(default_factory=tuple)
    app_id: str = "synthetic"


def clean_signal(t: np.ndarray, spec: SyntheticSpec) -> np.ndarray:
    """Noise-free sinusoid with the requested peak and peak:trough ratio."""
    trough = spec.peak_qps / spec.peak_to_trough
    mid = (spec.peak_qps + trough) / 2.0
    amp = (spec.peak_qps - trough) / 2.0
    phase = 2.0 * np.pi * ((np.asarray(t) - spec.trough_offset) % spec.period) / spec.period
    return mid - amp * np.cos(phase)


def generate_trace(spec: SyntheticSpec | None = None, seed: int = 0) -> WorkloadTrace:
    spec = spec or SyntheticSpec()
    if spec.peak_to_trough < 1 or spec.peak_qps < 0 or spec.noise < 0:
        raise ValidationError("need peak_qps >= 0, peak_to_trough >= 1, noise >= 0")
    n = int(round(spec.days * SECONDS_PER_DAY / spec.sample_interval))
    if n < 1:
        raise ValidationError("synthetic trace would be empty")
    ts = spec.start + spec.sample_interval * np.arange(n, dtype=np.int64)
    qps = clean_signal(ts, spec)
    for spike in spec.spikes:
        rel = ts - spec.start
        qps = np.where((rel >= spike.start) & (rel < spike.start + spike.duration), qps * spike.multiplier, qps)
    if spec.noise > 0:
        rng = np.random.default_rng(seed)
        qps = qps * (1.0 + spec.noise * rng.standard_normal(n))
    return WorkloadTrace(spec.app_id, ts, np.maximum(qps, 0.0), spec.sample_interval)


def white_noise_trace(n: int, sample_interval: int = 60, mean: float = 1000.0, std: float = 100.0, seed: int = 0) -> WorkloadTrace:
    rng = np.random.default_rng(seed)
    qps = np.maximum(rng.normal(mean, std, n), 0.0)
    return WorkloadTrace("noise", sample_interval * np.arange(n, dtype=np.int64), qps, sample_interval)
