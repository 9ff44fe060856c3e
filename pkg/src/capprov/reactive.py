"""Threshold-driven reactive scaling with a safety band and scale-down cooldown."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

from .errors import ValidationError
from .trace import Statistic, apply_statistic


class Reason(str, Enum):
    WITHIN_SAFETY_BAND = "within_safety_band"
    SCALED_UP = "scaled_up"
    SCALED_DOWN = "scaled_down"
    UNCHANGED = "unchanged"  # outside the band, but the rounded target equals the current count
    CLAMPED_MIN = "clamped_min"
    CLAMPED_MAX = "clamped_max"
    COOLDOWN_BLOCKED = "cooldown_blocked"


class Rounding(str, Enum):
    HALF_UP = "half_up"
    CEIL = "ceil"


@dataclass(frozen=True)
class ReactiveConfig:
    threshold_tstar: float
    c_min: int = 1
    c_max: int = 100
    window_w: int = 300
    safety_sp: float = 0.1
    cooldown_ct: int = 600
    statistic: Statistic = Statistic.P95
    decision_shift_sigma: int = 60
    rounding: Rounding = Rounding.HALF_UP

    def __post_init__(self):
        object.__setattr__(self, "statistic", Statistic(self.statistic))
        object.__setattr__(self, "rounding", Rounding(self.rounding))
        if not (self.threshold_tstar > 0 and math.isfinite(self.threshold_tstar)):
            raise ValidationError(f"threshold t* must be positive, got {self.threshold_tstar}")
        if not 0 < self.c_min <= self.c_max:
            raise ValidationError(f"need 0 < c_min <= c_max, got c_min={self.c_min}, c_max={self.c_max}")
        if not 0.0 <= self.safety_sp <= 1.0:
            raise ValidationError(f"safety parameter must be in [0, 1], got {self.safety_sp}")
        if self.window_w <= 0 or self.cooldown_ct < 0 or self.decision_shift_sigma < 0:
            raise ValidationError("window must be positive; cooldown and decision shift nonnegative")

    def to_dict(self) -> dict:
        return {
            "threshold_tstar": self.threshold_tstar,
            "c_min": self.c_min,
            "c_max": self.c_max,
            "window_w": self.window_w,
            "safety_sp": self.safety_sp,
            "cooldown_ct": self.cooldown_ct,
            "statistic": self.statistic.value,
            "decision_shift_sigma": self.decision_shift_sigma,
            "rounding": self.rounding.value,
        }


@dataclass(frozen=True)
class ReactiveState:
    current_replicas: int
    config: ReactiveConfig
    last_scale_down_time: int | float | None = None

    def __post_init__(self):
        if not self.config.c_min <= self.current_replicas <= self.config.c_max:
            raise ValidationError(
                f"current replicas {self.current_replicas} outside [{self.config.c_min}, {self.config.c_max}]"
            )


@dataclass(frozen=True)
class ScalingDecision:
    new_replicas: int
    reason: Reason
    metric_value: float
    ratio_nr: float
    target: int  # rounded n_r * C_t before clamping
    old_replicas: int
    now: int | float
    effective_at: int | float

    def log_record(self, app_id: str = "") -> dict:
        return {
            "ts": self.now,
            "app_id": app_id,
            "old": self.old_replicas,
            "new": self.new_replicas,
            "reason": self.reason.value,
            "metric": self.metric_value,
            "nr": self.ratio_nr,
        }

    def log_line(self, app_id: str = "") -> str:
        return json.dumps(self.log_record(app_id), sort_keys=True)


# slack for decimal inputs such as rt = 110, t* = 100, sp = 0.1, where the
# float ratio lands a hair outside a band edge it sits on exactly
_BAND_EPS = 1e-12


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def step(
    state: ReactiveState,
    metric_samples: Sequence[tuple[float, float]],
    now: int | float,
) -> tuple[ScalingDecision, ReactiveState]:
    """One control step: window statistic, ratio to target, clamp, cooldown."""
    cfg = state.config
    if not metric_samples:
        raise ValidationError("empty metric window")
    lo = now - cfg.window_w
    for ts, _ in metric_samples:
        if not lo <= ts <= now:
            raise ValidationError(f"sample at {ts} outside window [{lo}, {now}]")
    c_t = state.current_replicas
    rt = apply_statistic([v for _, v in metric_samples], cfg.statistic)
    nr = rt / cfg.threshold_tstar
    raw = nr * c_t
    c_hat = math.ceil(raw) if cfg.rounding is Rounding.CEIL else round_half_up(raw)

    if abs(nr - 1.0) <= cfg.safety_sp + _BAND_EPS:
        target, reason = c_t, Reason.WITHIN_SAFETY_BAND
    elif cfg.c_min < c_hat < cfg.c_max:
        target = c_hat
        reason = Reason.SCALED_UP if c_hat > c_t else Reason.SCALED_DOWN if c_hat < c_t else Reason.UNCHANGED
    elif c_hat <= cfg.c_min:
        target, reason = cfg.c_min, Reason.CLAMPED_MIN
    else:
        target, reason = cfg.c_max, Reason.CLAMPED_MAX

    last_down = state.last_scale_down_time
    if target < c_t and last_down is not None and now - last_down < cfg.cooldown_ct:
        target, reason = c_t, Reason.COOLDOWN_BLOCKED
    if target < c_t:
        last_down = now

    decision = ScalingDecision(target, reason, rt, nr, c_hat, c_t, now, now + cfg.decision_shift_sigma)
    return decision, replace(state, current_replicas=target, last_scale_down_time=last_down)
