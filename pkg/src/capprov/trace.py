"""Workload traces: ingestion, window aggregation, statistics, periodicity."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import ValidationError

SECONDS_PER_DAY = 86400


class Statistic(str, Enum):
    MAX = "max"
    MEAN = "mean"
    P95 = "p95"


def _frozen(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


def apply_statistic(values: Sequence[float] | np.ndarray, statistic: Statistic | str) -> float:
    """Reduce a nonempty sequence with one of the supported window statistics."""
    statistic = Statistic(statistic)
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValidationError("cannot apply a statistic to an empty window")
    if statistic is Statistic.MAX:
        return float(arr.max())
    if statistic is Statistic.MEAN:
        return math.fsum(arr.tolist()) / arr.size
    return float(np.percentile(arr, 95.0))


@dataclass(frozen=True)
class WorkloadTrace:
    """Uniformly sampled offered-QPS series for one application."""

    app_id: str
    timestamps: np.ndarray
    qps: np.ndarray
    sample_interval: int

    def __post_init__(self):
        ts = _frozen(self.timestamps, np.int64)
        qps = _frozen(self.qps, float)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "qps", qps)
        if ts.ndim != 1 or ts.shape != qps.shape:
            raise ValidationError("timestamps and qps must be 1-D arrays of equal length")
        if int(self.sample_interval) <= 0:
            raise ValidationError(f"sample_interval must be positive, got {self.sample_interval}")
        object.__setattr__(self, "sample_interval", int(self.sample_interval))
        if not np.all(np.isfinite(qps)):
            bad = int(np.flatnonzero(~np.isfinite(qps))[0])
            raise ValidationError(f"non-finite qps at sample {bad}")
        if np.any(qps < 0):
            bad = int(np.flatnonzero(qps < 0)[0])
            raise ValidationError(f"negative qps {qps[bad]} at timestamp {ts[bad]}")
        if ts.size > 1:
            steps = np.diff(ts)
            if np.any(steps <= 0):
                bad = int(np.flatnonzero(steps <= 0)[0]) + 1
                raise ValidationError(f"non-monotone timestamp {ts[bad]} after {ts[bad - 1]}")
            if np.any(steps != self.sample_interval):
                bad = int(np.flatnonzero(steps != self.sample_interval)[0]) + 1
                raise ValidationError(
                    f"gap in trace: timestamp {ts[bad]} follows {ts[bad - 1]} "
                    f"(expected spacing {self.sample_interval} s)"
                )

    def __len__(self) -> int:
        return int(self.qps.size)

    @property
    def samples(self) -> list[tuple[int, float]]:
        return list(zip(self.timestamps.tolist(), self.qps.tolist()))

    @property
    def start(self) -> int:
        return int(self.timestamps[0])

    @property
    def end(self) -> int:
        """Exclusive end time: last sample plus one interval."""
        return int(self.timestamps[-1]) + self.sample_interval

    @property
    def duration(self) -> int:
        return len(self) * self.sample_interval

    def slice_time(self, start: int, end: int) -> "WorkloadTrace":
        """Samples with start <= timestamp < end."""
        mask = (self.timestamps >= start) & (self.timestamps < end)
        return WorkloadTrace(self.app_id, self.timestamps[mask], self.qps[mask], self.sample_interval)

    def __eq__(self, other):
        if not isinstance(other, WorkloadTrace):
            return NotImplemented
        return (
            self.app_id == other.app_id
            and self.sample_interval == other.sample_interval
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.qps, other.qps)
        )

    __hash__ = None


@dataclass(frozen=True)
class AggregatedTrace:
    """Tumbling-window reduction of a trace; one value per window."""

    window_starts: np.ndarray
    values: np.ndarray
    window_size: int
    statistic: Statistic
    app_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "window_starts", _frozen(self.window_starts, np.int64))
        object.__setattr__(self, "values", _frozen(self.values, float))
        object.__setattr__(self, "statistic", Statistic(self.statistic))
        if self.window_starts.shape != self.values.shape:
            raise ValidationError("window_starts and values must have equal length")

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def windows(self) -> list[tuple[int, float]]:
        return list(zip(self.window_starts.tolist(), self.values.tolist()))

    def head(self, n: int) -> "AggregatedTrace":
        return AggregatedTrace(self.window_starts[:n], self.values[:n], self.window_size, self.statistic, self.app_id)

    def tail(self, n: int) -> "AggregatedTrace":
        return AggregatedTrace(self.window_starts[-n:], self.values[-n:], self.window_size, self.statistic, self.app_id)


@dataclass(frozen=True)
class SummaryStats:
    n: int
    mean: float
    std_error: float
    min: float
    max: float
    skewness: float | None
    kurtosis: float | None

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mean": self.mean,
            "std_error": self.std_error,
            "min": self.min,
            "max": self.max,
            "skewness": self.skewness,
            "kurtosis": self.kurtosis,
        }


class PeriodicityKind(str, Enum):
    PERIODICAL = "periodical"
    NON_PERIODICAL = "non_periodical"


@dataclass(frozen=True)
class PeriodicityLabel:
    kind: PeriodicityKind
    period: int | None
    score: float
    autocorrelations: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind is PeriodicityKind.PERIODICAL and not (self.period and self.period > 0):
            raise ValidationError("a periodical label needs a positive period")
        if self.kind is PeriodicityKind.NON_PERIODICAL and self.period is not None:
            raise ValidationError("a non-periodical label carries no period")

    @property
    def is_periodical(self) -> bool:
        return self.kind is PeriodicityKind.PERIODICAL

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "period": self.period,
            "score": self.score,
            "autocorrelations": {str(k): v for k, v in sorted(self.autocorrelations.items())},
        }


# -- ingestion / emission -------------------------------------------------


def _read_text(source: bytes | str | IO) -> str:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source).decode("utf-8")
    if isinstance(source, str):
        return source
    data = source.read()
    return data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data


def _parse_csv(text: str) -> tuple[list[int], list[float]]:
    timestamps: list[int] = []
    values: list[float] = []
    reader = csv.reader(io.StringIO(text))
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if lineno == 1 and row[0].strip().lower() == "timestamp":
            if [c.strip().lower() for c in row] != ["timestamp", "qps"]:
                raise ValidationError(f"line 1: expected header 'timestamp,qps', got {','.join(row)!r}")
            continue
        if len(row) != 2:
            raise ValidationError(f"line {lineno}: expected 2 fields, got {len(row)}")
        try:
            ts = int(row[0].strip())
        except ValueError:
            raise ValidationError(f"line {lineno}, field 'timestamp': not an integer: {row[0]!r}") from None
        try:
            qps = float(row[1].strip())
        except ValueError:
            raise ValidationError(f"line {lineno}, field 'qps': not a number: {row[1]!r}") from None
        timestamps.append(ts)
        values.append(qps)
    return timestamps, values


def _infer_interval(timestamps: list[int], declared: int | None) -> int:
    if declared is not None:
        return int(declared)
    if len(timestamps) < 2:
        raise ValidationError("sample_interval must be declared for traces with fewer than 2 samples")
    step = timestamps[1] - timestamps[0]
    if step <= 0:
        raise ValidationError(f"non-monotone timestamp {timestamps[1]} after {timestamps[0]}")
    return step


def ingest_trace(
    source: bytes | str | IO,
    format: str = "csv",
    *,
    sample_interval: int | None = None,
    app_id: str = "app",
) -> WorkloadTrace:
    """Parse and validate a trace.

    CSV input is ``timestamp,qps`` rows (header optional); the interval is
    taken from ``sample_interval`` or inferred from the first two rows.
    JSON input is ``{"app_id", "sample_interval", "samples": [[ts, qps], ...]}``.
    Gaps are rejected, never interpolated.
    """
    text = _read_text(source)
    if format == "csv":
        timestamps, values = _parse_csv(text)
        if not timestamps:
            raise ValidationError("trace contains no samples")
        interval = _infer_interval(timestamps, sample_interval)
        return WorkloadTrace(app_id, timestamps, values, interval)
    if format == "json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"line {exc.lineno}: malformed JSON: {exc.msg}") from None
        if not isinstance(doc, dict):
            raise ValidationError("JSON trace must be an object")
        for key in ("sample_interval", "samples"):
            if key not in doc:
                raise ValidationError(f"JSON trace missing field {key!r}")
        timestamps, values = [], []
        for i, rec in enumerate(doc["samples"]):
            if not isinstance(rec, (list, tuple)) or len(rec) != 2:
                raise ValidationError(f"samples[{i}]: expected [timestamp, qps]")
            ts, qps = rec
            if isinstance(ts, bool) or not isinstance(ts, int):
                raise ValidationError(f"samples[{i}], field 'timestamp': not an integer: {ts!r}")
            if isinstance(qps, bool) or not isinstance(qps, (int, float)):
                raise ValidationError(f"samples[{i}], field 'qps': not a number: {qps!r}")
            timestamps.append(ts)
            values.append(float(qps))
        if not timestamps:
            raise ValidationError("trace contains no samples")
        interval = doc["sample_interval"]
        if sample_interval is not None and int(sample_interval) != int(interval):
            raise ValidationError(f"declared interval {sample_interval} != file interval {interval}")
        return WorkloadTrace(str(doc.get("app_id", app_id)), timestamps, values, int(interval))
    raise ValidationError(f"unsupported trace format {format!r}")


def emit_trace(trace: WorkloadTrace, format: str = "csv") -> str:
    """Serialize a trace; ``ingest_trace(emit_trace(t, f), f)`` reproduces ``t``."""
    if format == "csv":
        lines = ["timestamp,qps"]
        lines.extend(f"{ts},{q!r}" for ts, q in trace.samples)
        return "\n".join(lines) + "\n"
    if format == "json":
        doc = {
            "app_id": trace.app_id,
            "sample_interval": trace.sample_interval,
            "samples": [[ts, q] for ts, q in trace.samples],
        }
        return json.dumps(doc)
    raise ValidationError(f"unsupported trace format {format!r}")


def load_trace(path, *, sample_interval: int | None = None) -> WorkloadTrace:
    """Read a trace file, choosing the format from the extension."""
    from pathlib import Path

    path = Path(path)
    fmt = "json" if path.suffix.lower() == ".json" else "csv"
    with open(path, "rb") as fh:
        return ingest_trace(fh, fmt, sample_interval=sample_interval, app_id=path.stem)


# -- aggregation and statistics ------------------------------------------


def aggregate(trace: WorkloadTrace, window_size: int, statistic: Statistic | str = Statistic.MAX) -> AggregatedTrace:
    """Tumbling-window reduction. A partial trailing window is dropped."""
    statistic = Statistic(statistic)
    if len(trace) == 0:
        raise ValidationError("cannot aggregate an empty trace")
    if window_size < trace.sample_interval:
        raise ValidationError(f"window_size {window_size} s is smaller than sample interval {trace.sample_interval} s")
    if window_size % trace.sample_interval:
        raise ValidationError(f"window_size {window_size} s is not a multiple of {trace.sample_interval} s")
    per = window_size // trace.sample_interval
    n_windows = len(trace) // per
    if n_windows == 0:
        raise ValidationError(f"trace of {trace.duration} s is shorter than one {window_size} s window")
    blocks = trace.qps[: n_windows * per].reshape(n_windows, per)
    if statistic is Statistic.MAX:
        values = blocks.max(axis=1)
    elif statistic is Statistic.MEAN:
        values = np.array([math.fsum(b) / per for b in blocks.tolist()])
        # fsum mean can round outside [min, max] by an ulp on near-constant windows
        values = np.clip(values, blocks.min(axis=1), blocks.max(axis=1))
    else:
        values = np.percentile(blocks, 95.0, axis=1)
    starts = trace.timestamps[: n_windows * per : per]
    return AggregatedTrace(starts, values, window_size, statistic, trace.app_id)


def summarize(trace: WorkloadTrace | Sequence[float]) -> SummaryStats:
    """Mean, standard error, range, skewness and excess kurtosis.

    Skewness and kurtosis use the biased (population) standardized moments
    and are ``None`` when the variance is zero.
    """
    values = trace.qps.tolist() if isinstance(trace, WorkloadTrace) else [float(v) for v in trace]
    n = len(values)
    if n < 4:
        raise ValidationError(f"summarize needs at least 4 samples, got {n}")
    mean = math.fsum(values) / n
    dev = [v - mean for v in values]
    m2 = math.fsum(d * d for d in dev) / n
    sample_var = m2 * n / (n - 1)
    std_error = math.sqrt(sample_var) / math.sqrt(n)
    if m2 > 0:
        m3 = math.fsum(d**3 for d in dev) / n
        m4 = math.fsum(d**4 for d in dev) / n
        skewness = m3 / m2**1.5
        kurtosis = m4 / m2**2 - 3.0
    else:
        skewness = kurtosis = None
    lo, hi = min(values), max(values)
    return SummaryStats(n, min(max(mean, lo), hi), std_error, lo, hi, skewness, kurtosis)


def lag_autocorrelation(values: np.ndarray, lag: int) -> float:
    """Pearson correlation between the series and itself shifted by ``lag``.

    Returns 0.0 when either overlapping segment has zero variance.
    """
    x = np.asarray(values, dtype=float)
    if lag <= 0 or lag >= x.size:
        raise ValidationError(f"lag {lag} out of range for series of length {x.size}")
    a, b = x[:-lag], x[lag:]
    a = a - a.mean()
    b = b - b.mean()
    denom = math.sqrt(float(a @ a) * float(b @ b))
    if denom == 0.0:
        return 0.0
    return float(a @ b) / denom


def classify_periodicity(
    trace: WorkloadTrace,
    candidate_periods: Iterable[int],
    threshold: float = 0.5,
) -> PeriodicityLabel:
    """Label a trace periodical if some candidate lag autocorrelates strongly.

    Ties between candidates go to the shorter period.
    """
    periods = sorted({int(p) for p in candidate_periods})
    if not periods:
        raise ValidationError("no candidate periods given")
    if any(p <= 0 for p in periods):
        raise ValidationError("candidate periods must be positive")
    for p in periods:
        if p % trace.sample_interval:
            raise ValidationError(f"candidate period {p} s is not a multiple of sample interval {trace.sample_interval} s")
    if trace.duration < 2 * max(periods):
        raise ValidationError(
            f"trace spans {trace.duration} s, need at least {2 * max(periods)} s for candidate period {max(periods)} s"
        )
    acf = {p: lag_autocorrelation(trace.qps, p // trace.sample_interval) for p in periods}
    best = max(periods, key=lambda p: (acf[p], -p))
    score = min(max(acf[best], 0.0), 1.0)
    if acf[best] >= threshold:
        return PeriodicityLabel(PeriodicityKind.PERIODICAL, best, score, acf)
    return PeriodicityLabel(PeriodicityKind.NON_PERIODICAL, None, score, acf)
