"""Workload forecasting: lag features, boosted trees, grid search, metrics."""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .gbdt import BoostedEnsemble, Hyperparams, RegressionTree, boost
from .trace import SECONDS_PER_DAY, AggregatedTrace

DEFAULT_GRID = {
    "max_depth": [3, 6, 9],
    "num_leaves": [7, 31],
    "learning_rate": [0.05, 0.1, 0.3],
}
DEFAULT_N_TREES = 200
MIN_SAMPLES_LEAF = 5

# 1970-01-01 was a Thursday; Monday is day 0
_EPOCH_WEEKDAY = 3


def time_of_day(ts: int) -> float:
    return (int(ts) % SECONDS_PER_DAY) / SECONDS_PER_DAY


def day_of_week(ts: int) -> int:
    return (int(ts) // SECONDS_PER_DAY + _EPOCH_WEEKDAY) % 7


@dataclass(frozen=True)
class FeatureRow:
    lags: tuple[float, ...]
    time_of_day: float
    day_of_week: int
    target: float
    timestamp: int = 0

    def vector(self) -> list[float]:
        return [*self.lags, self.time_of_day, float(self.day_of_week)]


def _feature_vector(history: Sequence[float], lag_offsets: Sequence[int], ts: int) -> list[float]:
    return [*(history[-lag] for lag in lag_offsets), time_of_day(ts), float(day_of_week(ts))]


def build_features(trace: AggregatedTrace, lag_offsets: Sequence[int]) -> list[FeatureRow]:
    """One row per window whose every lag is inside the trace."""
    lags = list(lag_offsets)
    if not lags:
        raise ValidationError("lag set is empty")
    if any(int(lag) < 1 for lag in lags):
        raise ValidationError("lag offsets must be positive window counts")
    max_lag = max(lags)
    values = trace.values.tolist()
    starts = trace.window_starts.tolist()
    if len(values) <= max_lag:
        raise ValidationError(f"trace of {len(values)} windows is too short for max lag {max_lag}")
    return [
        FeatureRow(
            lags=tuple(values[t - lag] for lag in lags),
            time_of_day=time_of_day(starts[t]),
            day_of_week=day_of_week(starts[t]),
            target=values[t],
            timestamp=starts[t],
        )
        for t in range(max_lag, len(values))
    ]


def rows_to_matrix(rows: Sequence[FeatureRow]) -> tuple[np.ndarray, np.ndarray]:
    if not rows:
        raise ValidationError("no feature rows")
    width = len(rows[0].lags)
    if any(len(r.lags) != width for r in rows):
        raise ValidationError("feature rows have inconsistent lag counts")
    X = np.array([r.vector() for r in rows], dtype=float)
    y = np.array([r.target for r in rows], dtype=float)
    return X, y


@dataclass
class GbdtModel:
    """Boosted tree forecaster plus the feature layout it was trained on."""

    ensemble: BoostedEnsemble
    lag_offsets: tuple[int, ...] = ()
    window_size: int = 0
    cv_scores: dict = field(default_factory=dict)

    @property
    def trees(self) -> list[RegressionTree]:
        return self.ensemble.trees

    @property
    def base_prediction(self) -> float:
        return self.ensemble.base_prediction

    @property
    def learning_rate(self) -> float:
        return self.ensemble.learning_rate

    @property
    def hyperparams(self) -> Hyperparams:
        return self.ensemble.hyperparams

    @property
    def train_rmse(self) -> list[float]:
        return self.ensemble.train_rmse

    def predict_rows(self, rows: Sequence[FeatureRow]) -> np.ndarray:
        X, _ = rows_to_matrix(rows)
        return self.ensemble.predict(X)

    def to_dict(self) -> dict:
        return {
            "hyperparams": self.hyperparams.to_dict(),
            "base_prediction": self.base_prediction,
            "lag_offsets": list(self.lag_offsets),
            "window_size": self.window_size,
            "trees": [t.to_dict() for t in self.trees],
            "train_rmse": list(self.train_rmse),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "GbdtModel":
        try:
            hp = Hyperparams(**doc["hyperparams"])
            trees = [RegressionTree.from_dict(t) for t in doc["trees"]]
            ensemble = BoostedEnsemble(trees, float(doc["base_prediction"]), hp, [float(x) for x in doc.get("train_rmse", [])])
            return cls(ensemble, tuple(int(x) for x in doc["lag_offsets"]), int(doc["window_size"]))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed model document: {exc}") from None


def fit_gbdt(
    rows: Sequence[FeatureRow],
    hyperparams: Hyperparams | None = None,
    n_trees: int = DEFAULT_N_TREES,
    seed: int = 0,
    *,
    lag_offsets: Sequence[int] = (),
    window_size: int = 0,
    min_samples_leaf: int = MIN_SAMPLES_LEAF,
) -> GbdtModel:
    if not rows:
        raise ValidationError("cannot fit on empty rows")
    X, y = rows_to_matrix(rows)
    ensemble = boost(X, y, hyperparams or Hyperparams(), n_trees, seed, min_samples_leaf=min_samples_leaf)
    return GbdtModel(ensemble, tuple(lag_offsets), int(window_size))


def _time_series_blocks(n: int, folds: int) -> list[np.ndarray]:
    return np.array_split(np.arange(n), folds + 1)


def grid_search(
    rows: Sequence[FeatureRow],
    grid: dict | None = None,
    n_trees: int = DEFAULT_N_TREES,
    folds: int = 3,
    seed: int = 0,
    *,
    lag_offsets: Sequence[int] = (),
    window_size: int = 0,
    min_samples_leaf: int = MIN_SAMPLES_LEAF,
) -> tuple[GbdtModel, Hyperparams]:
    """Pick hyperparameters by forward-chaining cross-validation, then refit on all rows.

    Rows are cut into ``folds + 1`` contiguous blocks in time order; fold i
    trains on blocks ``0..i-1`` and validates on block ``i``. The tuple with
    the lowest mean validation RMSE wins, ties going to the smaller
    ``(max_depth, num_leaves, learning_rate)``.
    """
    grid = grid or DEFAULT_GRID
    for key in ("max_depth", "num_leaves", "learning_rate"):
        if not grid.get(key):
            raise ValidationError(f"grid dimension {key!r} is empty")
    if folds < 2:
        raise ValidationError(f"folds must be >= 2, got {folds}")
    X, y = rows_to_matrix(rows)
    blocks = _time_series_blocks(len(y), folds)
    if min(b.size for b in blocks) < 2:
        raise ValidationError(f"{len(y)} rows are too few for {folds} folds")

    candidates = [
        Hyperparams(int(d), int(nl), float(lr))
        for d, nl, lr in itertools.product(grid["max_depth"], grid["num_leaves"], grid["learning_rate"])
    ]
    scores: dict[tuple, float] = {}
    for hp in candidates:
        errs = []
        for i in range(1, folds + 1):
            train = np.concatenate(blocks[:i])
            valid = blocks[i]
            ens = boost(X[train], y[train], hp, n_trees, seed, min_samples_leaf=min_samples_leaf)
            errs.append(rmse(y[valid], ens.predict(X[valid])))
        scores[hp.key()] = math.fsum(errs) / len(errs)
    best = min(candidates, key=lambda hp: (scores[hp.key()], hp.key()))
    model = fit_gbdt(
        rows, best, n_trees, seed, lag_offsets=lag_offsets, window_size=window_size, min_samples_leaf=min_samples_leaf
    )
    model.cv_scores = {f"{k[0]},{k[1]},{k[2]}": v for k, v in sorted(scores.items())}
    return model, best


@dataclass(frozen=True)
class Forecast:
    timestamps: np.ndarray
    values: np.ndarray
    interval: int

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)
        if ts.shape != vals.shape:
            raise ValidationError("forecast timestamps and values differ in length")
        if ts.size > 1 and np.any(np.diff(ts) != self.interval):
            raise ValidationError("forecast timestamps are not contiguous")
        if np.any(vals < 0):
            raise ValidationError("forecast values must be nonnegative")

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def horizon(self) -> list[tuple[int, float]]:
        return list(zip(self.timestamps.tolist(), self.values.tolist()))

    def to_csv(self) -> str:
        lines = ["timestamp,predicted_qps"]
        lines.extend(f"{ts},{v!r}" for ts, v in self.horizon)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str, interval: int | None = None) -> "Forecast":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["timestamp", "predicted_qps"]:
            raise ValidationError("line 1: expected header 'timestamp,predicted_qps'")
        ts, vals = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                ts.append(int(row[0]))
                vals.append(float(row[1]))
            except (ValueError, IndexError):
                raise ValidationError(f"line {lineno}: malformed forecast record {row!r}") from None
        if interval is None:
            if len(ts) < 2:
                raise ValidationError("forecast interval cannot be inferred from fewer than 2 rows")
            interval = ts[1] - ts[0]
        return cls(np.array(ts), np.array(vals), int(interval))


def predict_horizon(model: GbdtModel, trace: AggregatedTrace, horizon_windows: int) -> Forecast:
    """Recursive multi-step forecast; each prediction feeds later lags.

    Predictions are clamped at zero before being fed back.
    """
    if horizon_windows <= 0:
        raise ValidationError(f"horizon_windows must be positive, got {horizon_windows}")
    if not model.lag_offsets:
        raise ValidationError("model carries no lag layout")
    if len(trace) < max(model.lag_offsets):
        raise ValidationError(f"trace of {len(trace)} windows cannot supply lag {max(model.lag_offsets)}")
    step = trace.window_size
    history = trace.values.tolist()
    next_ts = int(trace.window_starts[-1]) + step
    out_ts, out_vals = [], []
    for _ in range(horizon_windows):
        x = np.array([_feature_vector(history, model.lag_offsets, next_ts)])
        value = max(float(model.ensemble.predict(x)[0]), 0.0)
        history.append(value)
        out_ts.append(next_ts)
        out_vals.append(value)
        next_ts += step
    return Forecast(np.array(out_ts), np.array(out_vals), step)


def seasonal_naive(trace: AggregatedTrace, period_windows: int, horizon_windows: int) -> Forecast:
    """Repeat the value observed one period earlier."""
    if period_windows < 1:
        raise ValidationError("period_windows must be positive")
    if horizon_windows <= 0:
        raise ValidationError(f"horizon_windows must be positive, got {horizon_windows}")
    if len(trace) < period_windows:
        raise ValidationError(f"trace of {len(trace)} windows is shorter than one period ({period_windows})")
    history = trace.values.tolist()
    for _ in range(horizon_windows):
        history.append(history[-period_windows])
    step = trace.window_size
    start = int(trace.window_starts[-1]) + step
    ts = start + step * np.arange(horizon_windows, dtype=np.int64)
    return Forecast(ts, np.array(history[len(trace):]), step)


# -- accuracy metrics ----------------------------------------------------


@dataclass(frozen=True)
class ForecastEvaluation:
    n: int
    rmse: float
    mape: float
    mape_excluded: int = 0

    def to_dict(self) -> dict:
        return {"n": self.n, "rmse": self.rmse, "mape": self.mape, "mape_excluded": self.mape_excluded}


def rmse(actual, predicted) -> float:
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    return float(np.sqrt(np.mean((a - p) ** 2)))


def evaluate(actual: Sequence[float], predicted: Sequence[float]) -> ForecastEvaluation:
    """RMSE over all points; MAPE over points with nonzero actuals.

    Zero actuals are left out of the MAPE average and counted in
    ``mape_excluded``.
    """
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if a.shape != p.shape or a.ndim != 1:
        raise ValidationError(f"length mismatch: {a.size} actuals vs {p.size} predictions")
    if a.size == 0:
        raise ValidationError("evaluate needs at least one point")
    nonzero = a != 0
    if not nonzero.any():
        raise ValidationError("MAPE undefined: every actual value is zero")
    mape = float(np.mean(np.abs((a[nonzero] - p[nonzero]) / a[nonzero])))
    return ForecastEvaluation(int(a.size), rmse(a, p), mape, int(np.sum(~nonzero)))
