"""Scaling policies: Over-Pro, Kube-Pro, Optimal-Pro, Conserv-Pro, Ali-Pro.

Every policy is an immutable description; ``start(trace, sim_config)``
returns a fresh controller holding the per-run state, so one policy can
drive any number of independent simulations.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import reactive
from .capacity import CapacityModel, demand_to_replicas
from .errors import InfeasibleError, ValidationError
from .forecaster import Forecast
from .planner import (
    DEFAULT_HEADROOM,
    DEFAULT_SLOT,
    EdgeWeight,
    ReplicaPlan,
    build_graph,
    default_change_penalty,
    plan,
)
from .reactive import ReactiveConfig, ReactiveState, Rounding
from .trace import PeriodicityLabel, Statistic, WorkloadTrace


class PolicyKind(str, Enum):
    OVER_PRO = "over_pro"
    KUBE_PRO = "kube_pro"
    OPTIMAL_PRO = "optimal_pro"
    CONSERV_PRO = "conserv_pro"
    ALI_PRO = "ali_pro"
    REACTIVE = "reactive"
    SCHEDULE = "schedule"


def plan_max_over(p: ReplicaPlan, a: float, b: float) -> int:
    """Largest replica count in force anywhere in the closed interval [a, b] (clipped to the plan)."""
    a = max(a, p.start)
    b = min(b, p.end - 1e-9)
    if a > b:
        raise ValidationError(f"interval [{a}, {b}] outside plan range")
    lo = int(np.searchsorted(p.starts, a, side="right")) - 1
    hi = int(np.searchsorted(p.starts, b, side="right")) - 1
    return int(p.replicas[lo : hi + 1].max())


def conserv_plan(base: ReplicaPlan, shift: int = 1800) -> ReplicaPlan:
    """Window-max transform: value(t) = max of base over [t - shift, t + shift].

    Rises move ``shift`` seconds earlier and falls ``shift`` seconds later.
    Slot k of the base influences [start_k - shift, end_k + shift), so the
    result is piecewise constant with breakpoints at those shifted edges.
    """
    if shift < 0:
        raise ValidationError(f"shift must be >= 0, got {shift}")
    lo, hi = base.start, base.end
    cuts = {lo, hi}
    for s, d in zip(base.starts.tolist(), base.durations.tolist()):
        for c in (s - shift, s + d + shift):
            if lo < c < hi:
                cuts.add(c)
    cuts = sorted(cuts)
    starts, reps = [], []
    for a in cuts[:-1]:
        active = (base.starts - shift <= a) & (base.starts + base.durations + shift > a)
        value = int(base.replicas[active].max())
        if reps and reps[-1] == value:
            continue
        starts.append(a)
        reps.append(value)
    starts.append(hi)
    durations = np.diff(starts)
    return ReplicaPlan(np.array(starts[:-1]), durations, np.array(reps))


# -- controllers ---------------------------------------------------------


@dataclass
class ScheduleController:
    """Follows a fixed replica plan; launches pods early enough to be ready on time."""

    name: str
    schedule: ReplicaPlan
    lead: int = 0
    app_id: str = ""
    log: list = field(default_factory=list)
    _last: int | None = None

    def target(self, ts: int) -> int:
        return plan_max_over(self.schedule, ts, ts + self.lead)

    def initial_replicas(self) -> int:
        return self.target(self.schedule.start)

    def decide(self, ts: int, history) -> int:
        new = self.target(ts)
        if new != self._last:
            self.log.append(
                {"ts": ts, "app_id": self.app_id, "old": self._last, "new": new, "reason": "scheduled", "metric": None, "nr": None}
            )
        self._last = new
        return new


@dataclass
class ReactiveController:
    """Drives reactive.step once per control interval on a simulator metric."""

    name: str
    state: ReactiveState
    metric: str
    control_interval: int
    app_id: str = ""
    log: list = field(default_factory=list)

    def initial_replicas(self) -> int:
        return self.state.current_replicas

    def step(self, ts: int, history):
        """Decide from the last observed interval; returns None before any observation."""
        if not len(history):
            return None
        observed = history.ts[-1]
        samples = history.window(self.metric, observed, self.state.config.window_w)
        decision, self.state = reactive.step(self.state, samples, observed)
        return decision

    def decide(self, ts: int, history) -> int:
        decision = self.step(ts, history)
        if decision is not None:
            # log at the decision time, like every other controller
            self.log.append({**decision.log_record(self.app_id), "ts": ts})
        return self.state.current_replicas


@dataclass
class AliProController:
    """Proactive plan with an increase-only reactive override on top.

    The override engages only when the reactive controller asks for more
    replicas than are running. While engaged it follows the reactive
    decisions (band, cooldown and all) and disengages once they fall back
    to the plan. Reactive scale-downs that the plan overrules do not start
    the cooldown clock.
    """

    name: str
    schedule: ScheduleController
    reactive: ReactiveController
    app_id: str = ""
    log: list = field(default_factory=list)
    overrides: int = 0
    engaged: bool = False

    def initial_replicas(self) -> int:
        return self.schedule.initial_replicas()

    def decide(self, ts: int, history) -> int:
        planned = self.schedule.target(ts)
        before = self.reactive.state
        old = before.current_replicas
        decision = self.reactive.step(ts, history)
        use = decision is not None and (self.engaged or decision.new_replicas > decision.old_replicas)
        proposed = decision.new_replicas if use else planned
        new = max(planned, proposed)
        self.engaged = new > planned
        cfg = before.config
        last_down = self.reactive.state.last_scale_down_time if self.engaged else before.last_scale_down_time
        self.reactive.state = replace(
            self.reactive.state, current_replicas=min(max(new, cfg.c_min), cfg.c_max), last_scale_down_time=last_down
        )
        if self.engaged:
            self.overrides += 1
            reason = decision.reason.value
        else:
            reason = "scheduled"
        self.log.append(
            {
                "ts": ts,
                "app_id": self.app_id,
                "old": old,
                "new": new,
                "reason": reason,
                "metric": decision.metric_value if decision is not None else None,
                "nr": decision.ratio_nr if decision is not None else None,
                "planned": planned,
            }
        )
        return new


# -- policies ------------------------------------------------------------


def _check_sigma(cfg: ReactiveConfig, sim) -> None:
    if cfg.decision_shift_sigma != sim.control_interval:
        raise ValidationError(
            f"decision shift {cfg.decision_shift_sigma} s must equal the control interval {sim.control_interval} s"
        )


@dataclass(frozen=True)
class OverPro:
    max_replicas: int
    kind: PolicyKind = PolicyKind.OVER_PRO
    name: str = "over_pro"

    def start(self, trace: WorkloadTrace, sim) -> ScheduleController:
        return ScheduleController(self.name, ReplicaPlan.uniform(trace.start, trace.duration, [self.max_replicas]), app_id=trace.app_id)


def over_pro(max_replicas: int) -> OverPro:
    if max_replicas < 1:
        raise ValidationError(f"max_replicas must be >= 1, got {max_replicas}")
    return OverPro(int(max_replicas))


@dataclass(frozen=True)
class SchedulePolicy:
    """Any precomputed plan; optionally launches pods ahead by the startup delay."""

    schedule: ReplicaPlan
    kind: PolicyKind
    name: str
    lead_startup: bool = True

    def start(self, trace: WorkloadTrace, sim) -> ScheduleController:
        if self.schedule.start > trace.start or self.schedule.end < trace.start + trace.duration:
            raise ValidationError(
                f"{self.name} plan [{self.schedule.start}, {self.schedule.end}) does not cover the trace"
            )
        lead = sim.pod_startup_delay if self.lead_startup else 0
        return ScheduleController(self.name, self.schedule, lead, app_id=trace.app_id)


def schedule_policy(schedule: ReplicaPlan, name: str = "schedule", lead_startup: bool = True) -> SchedulePolicy:
    """Replay an arbitrary plan (e.g. one read back from a plan CSV)."""
    return SchedulePolicy(schedule, PolicyKind.SCHEDULE, name, lead_startup)


def conserv_pro(
    base_plan: ReplicaPlan,
    shift: int = 1800,
    reactive_config: ReactiveConfig | None = None,
    metric: str = "utilization",
):
    """Ali-Pro's plan with every rise ``shift`` s earlier and every fall ``shift`` s later.

    Given a ``reactive_config`` the same increase-only override as Ali-Pro
    runs on top of the shifted plan.
    """
    shifted = conserv_plan(base_plan, shift)
    if reactive_config is None:
        return SchedulePolicy(shifted, PolicyKind.CONSERV_PRO, "conserv_pro")
    return PlanWithOverride(shifted, reactive_config, metric, PolicyKind.CONSERV_PRO, "conserv_pro")


@dataclass(frozen=True)
class PlanWithOverride:
    """A fixed plan plus the increase-only reactive override."""

    schedule: ReplicaPlan
    reactive_config: ReactiveConfig
    metric: str = "utilization"
    kind: PolicyKind = PolicyKind.ALI_PRO
    name: str = "ali_pro"

    def start(self, trace: WorkloadTrace, sim) -> AliProController:
        schedule = SchedulePolicy(self.schedule, self.kind, self.name).start(trace, sim)
        cfg = self.reactive_config
        if self.schedule.replicas.max() > cfg.c_max:
            raise ValidationError(f"{self.name}: plan peak exceeds the reactive c_max {cfg.c_max}")
        _check_sigma(cfg, sim)
        start = min(max(schedule.initial_replicas(), cfg.c_min), cfg.c_max)
        ctrl = ReactiveController(self.name, ReactiveState(start, cfg), self.metric, sim.control_interval, app_id=trace.app_id)
        return AliProController(self.name, schedule, ctrl, app_id=trace.app_id)


@dataclass(frozen=True)
class OptimalPro:
    """Oracle: replicas covering the true peak of each slot, never below one."""

    capacity: CapacityModel
    slot_duration: int | None = None
    kind: PolicyKind = PolicyKind.OPTIMAL_PRO
    name: str = "optimal_pro"

    def schedule_for(self, trace: WorkloadTrace, control_interval: int) -> ReplicaPlan:
        slot = self.slot_duration or control_interval
        if slot % trace.sample_interval:
            raise ValidationError(f"slot {slot} s is not a multiple of the sample interval")
        per = slot // trace.sample_interval
        n = -(-len(trace) // per)
        padded = np.zeros(n * per)
        padded[: len(trace)] = trace.qps
        peaks = padded.reshape(n, per).max(axis=1)
        reps = [max(demand_to_replicas(self.capacity, float(q)), 1) for q in peaks]
        return ReplicaPlan.uniform(trace.start, slot, reps)

    def start(self, trace: WorkloadTrace, sim) -> ScheduleController:
        schedule = self.schedule_for(trace, sim.control_interval)
        return ScheduleController(self.name, schedule, sim.pod_startup_delay, app_id=trace.app_id)


def optimal_pro(capacity: CapacityModel, slot_duration: int | None = None) -> OptimalPro:
    return OptimalPro(capacity, slot_duration)


@dataclass(frozen=True)
class ReactivePolicy:
    """Threshold-driven reactive controller on a simulator metric ('utilization' or 'response_time')."""

    config: ReactiveConfig
    metric: str = "utilization"
    initial: int | None = None
    kind: PolicyKind = PolicyKind.REACTIVE
    name: str = "reactive"

    def initial_for(self, trace: WorkloadTrace, sim) -> int:
        if self.initial is not None:
            start = self.initial
        elif self.metric == "utilization":
            # size the first interval at the target utilization
            first = float(trace.qps[: max(1, sim.control_interval // trace.sample_interval)].mean())
            start = demand_to_replicas(sim.capacity.threshold * self.config.threshold_tstar, first)
        else:
            start = self.config.c_min
        return min(max(start, self.config.c_min), self.config.c_max)

    def start(self, trace: WorkloadTrace, sim) -> ReactiveController:
        _check_sigma(self.config, sim)
        state = ReactiveState(self.initial_for(trace, sim), self.config)
        return ReactiveController(self.name, state, self.metric, sim.control_interval, app_id=trace.app_id)


def reactive_only(config: ReactiveConfig, metric: str = "utilization", initial: int | None = None) -> ReactivePolicy:
    if metric not in ("utilization", "response_time"):
        raise ValidationError(f"unknown metric {metric!r}")
    return ReactivePolicy(config, metric, initial)


def kube_pro(
    target_utilization: float = 0.6,
    c_min: int = 1,
    c_max: int = 100,
    cooldown: int = 300,
    *,
    window: int = 60,
    control_interval: int = 60,
) -> ReactivePolicy:
    """Static-threshold HPA: desired = ceil(C * mean utilization / target)."""
    if not 0.0 < target_utilization <= 1.0:
        raise ValidationError(f"target utilization must be in (0, 1], got {target_utilization}")
    cfg = ReactiveConfig(
        threshold_tstar=target_utilization,
        c_min=c_min,
        c_max=c_max,
        window_w=window,
        safety_sp=0.0,
        cooldown_ct=cooldown,
        statistic=Statistic.MEAN,
        decision_shift_sigma=control_interval,
        rounding=Rounding.CEIL,
    )
    return ReactivePolicy(cfg, "utilization", None, PolicyKind.KUBE_PRO, "kube_pro")


@dataclass(frozen=True)
class ProactiveParams:
    slot_duration: int = DEFAULT_SLOT
    headroom_levels: int = DEFAULT_HEADROOM
    change_penalty: float | None = None  # None -> 0.25 replica-hours per slot-hour
    max_replicas: int = 100
    min_replicas: int = 1

    def weight(self) -> EdgeWeight:
        lam = default_change_penalty(self.slot_duration) if self.change_penalty is None else self.change_penalty
        return EdgeWeight(lam)


def proactive_plan(forecast: Forecast, capacity: CapacityModel, params: ProactiveParams) -> ReplicaPlan:
    graph = build_graph(
        forecast, capacity, params.slot_duration, params.headroom_levels, params.max_replicas, params.min_replicas
    )
    return plan(graph, params.weight())


@dataclass(frozen=True)
class AliPro:
    forecast: Forecast
    capacity: CapacityModel
    proactive: ProactiveParams
    reactive_config: ReactiveConfig
    periodicity: PeriodicityLabel
    metric: str = "utilization"
    kind: PolicyKind = PolicyKind.ALI_PRO
    name: str = "ali_pro"

    def base_plan(self) -> ReplicaPlan:
        try:
            return proactive_plan(self.forecast, self.capacity, self.proactive)
        except InfeasibleError as exc:
            raise InfeasibleError(f"{self.name}: {exc}", slot=exc.slot, policy=self.name) from None

    def start(self, trace: WorkloadTrace, sim):
        reactive_policy = ReactivePolicy(self.reactive_config, self.metric, name=self.name)
        if not self.periodicity.is_periodical:
            return reactive_policy.start(trace, sim)
        return PlanWithOverride(self.base_plan(), self.reactive_config, self.metric, self.kind, self.name).start(trace, sim)


def ali_pro(
    forecaster_output: Forecast,
    capacity: CapacityModel,
    proactive: ProactiveParams,
    reactive_config: ReactiveConfig,
    periodicity: PeriodicityLabel,
    metric: str = "utilization",
) -> AliPro:
    return AliPro(forecaster_output, capacity, proactive, reactive_config, periodicity, metric)
