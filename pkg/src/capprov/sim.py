"""Deterministic discrete-time cluster simulator and evaluation metrics."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .capacity import CapacityModel, hour_of_day
from .errors import ValidationError
from .trace import WorkloadTrace

U_CAP = 0.99


def overflow_slope(base_rt: float, u_cap: float = U_CAP) -> float:
    """Slope of base/(1-u) at u_cap, so the overflow segment joins smoothly."""
    return base_rt / (1.0 - u_cap) ** 2


def response_time(u, base_rt: float, u_cap: float = U_CAP, overflow_penalty: float | None = None):
    """Queueing-style latency: base/(1-u) below u_cap, linear growth above it."""
    if overflow_penalty is None:
        overflow_penalty = overflow_slope(base_rt, u_cap)
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise ValidationError("utilization must be nonnegative")
    below = base_rt / (1.0 - np.minimum(u, u_cap))
    out = np.where(u < u_cap, below, base_rt / (1.0 - u_cap) + overflow_penalty * (u - u_cap))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "edges", np.asarray(self.edges, dtype=float))
        object.__setattr__(self, "counts", np.asarray(self.counts, dtype=float))
        if self.edges.ndim != 1 or self.edges.size != self.counts.size + 1:
            raise ValidationError("histogram needs len(edges) == len(counts) + 1")
        if np.any(np.diff(self.edges) <= 0):
            raise ValidationError("histogram edges must be strictly increasing")

    @classmethod
    def of(cls, values, edges) -> "Histogram":
        """Bin values; anything beyond the outer edges lands in the first or last bin."""
        edges = np.asarray(edges, dtype=float)
        clipped = np.clip(np.asarray(values, dtype=float), edges[0], edges[-1])
        counts, _ = np.histogram(clipped, bins=edges)
        return cls(edges, counts)

    def to_csv(self) -> str:
        lines = ["bin_left,bin_right,count"]
        for lo, hi, c in zip(self.edges[:-1].tolist(), self.edges[1:].tolist(), self.counts.tolist()):
            lines.append(f"{lo!r},{hi!r},{int(c) if float(c).is_integer() else c!r}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"edges": self.edges.tolist(), "counts": self.counts.tolist()}


def kl_divergence(p_hist: Histogram, q_hist: Histogram, smoothing_eps: float = 1e-6) -> float:
    """KL(p || q) in nats after adding ``smoothing_eps`` to every bin and renormalizing."""
    if smoothing_eps <= 0:
        raise ValidationError("smoothing_eps must be positive")
    if p_hist.edges.shape != q_hist.edges.shape or not np.array_equal(p_hist.edges, q_hist.edges):
        raise ValidationError("histograms have mismatched bins")
    p = p_hist.counts + smoothing_eps
    q = q_hist.counts + smoothing_eps
    p = p / p.sum()
    q = q / q.sum()
    return max(float(np.sum(p * np.log(p / q))), 0.0)


@dataclass(frozen=True)
class SimConfig:
    capacity: CapacityModel
    control_interval: int = 60
    pod_startup_delay: int = 120
    base_response_time: float = 5.0  # ms
    sla_threshold: float | None = None  # ms; default is the latency at utilization 1.0
    seed: int = 0
    u_cap: float = U_CAP
    overflow_penalty: float | None = None
    rt_bins: tuple[float, ...] | None = None
    load_bins: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.control_interval <= 0:
            raise ValidationError("control_interval must be positive")
        if self.pod_startup_delay < 0:
            raise ValidationError("pod_startup_delay must be >= 0")
        if self.base_response_time <= 0:
            raise ValidationError("base_response_time must be positive")
        if not 0 < self.u_cap < 1:
            raise ValidationError("u_cap must be in (0, 1)")
        if self.capacity.threshold <= 0:
            raise ValidationError("capacity threshold must be positive")

    @property
    def penalty(self) -> float:
        return self.overflow_penalty if self.overflow_penalty is not None else overflow_slope(self.base_response_time, self.u_cap)

    @property
    def sla_ms(self) -> float:
        if self.sla_threshold is not None:
            return self.sla_threshold
        return response_time(1.0, self.base_response_time, self.u_cap, self.penalty)

    def rt(self, u):
        return response_time(u, self.base_response_time, self.u_cap, self.penalty)

    def rt_edges(self) -> np.ndarray:
        if self.rt_bins is not None:
            return np.asarray(self.rt_bins, dtype=float)
        # 50 equal-width bins up to the SLA; slower intervals land in the last bin
        return np.linspace(0.0, self.sla_ms, 51)

    def load_edges(self) -> np.ndarray:
        if self.load_bins is not None:
            return np.asarray(self.load_bins, dtype=float)
        return np.linspace(0.0, 1.5 * self.capacity.threshold, 51)


class History:
    """Read-only view of the intervals simulated so far, handed to controllers."""

    def __init__(self):
        self.ts: list[int] = []
        self.offered: list[float] = []
        self.active: list[int] = []
        self.utilization: list[float] = []
        self.rt_ms: list[float] = []

    def __len__(self) -> int:
        return len(self.ts)

    def series(self, metric: str) -> list[float]:
        if metric == "utilization":
            return self.utilization
        if metric == "response_time":
            return self.rt_ms
        raise ValidationError(f"unknown metric {metric!r}")

    def window(self, metric: str, now: int, width: int) -> list[tuple[int, float]]:
        """(timestamp, value) pairs with now - width <= timestamp <= now."""
        values = self.series(metric)
        out = []
        for ts, v in zip(reversed(self.ts), reversed(values)):
            if ts < now - width:
                break
            if ts <= now:
                out.append((ts, v))
        out.reverse()
        return out


class Controller(Protocol):
    name: str
    log: list[dict]

    def initial_replicas(self) -> int: ...

    def decide(self, ts: int, history: History) -> int: ...


@dataclass
class SimulationReport:
    policy: str
    app_id: str
    control_interval: int
    capacity_threshold: float
    ts: np.ndarray
    offered_qps: np.ndarray
    active_replicas: np.ndarray
    provisioned_replicas: np.ndarray
    per_pod_qps: np.ndarray
    utilization: np.ndarray
    response_time_ms: np.ndarray
    sla_violated: np.ndarray
    rt_histogram: Histogram
    load_histogram: Histogram
    decision_log: list[dict] = field(default_factory=list)
    sp_vs_baseline: float | None = None

    def __len__(self) -> int:
        return int(self.ts.size)

    @property
    def replica_hours(self) -> float:
        return float(np.sum(self.provisioned_replicas)) * self.control_interval / 3600.0

    @property
    def mean_utilization(self) -> float:
        return float(np.mean(self.utilization))

    @property
    def sla_violation_rate(self) -> float:
        return float(np.mean(self.sla_violated))

    def totals(self) -> dict:
        return {
            "replica_hours": self.replica_hours,
            "sp_vs_baseline": self.sp_vs_baseline,
            "mean_utilization": self.mean_utilization,
            "sla_violation_rate": self.sla_violation_rate,
            "mean_response_time_ms": float(np.mean(self.response_time_ms)),
            "p95_response_time_ms": float(np.percentile(self.response_time_ms, 95)),
            "peak_replicas": int(self.provisioned_replicas.max()),
        }

    def timeline_records(self) -> list[dict]:
        return [
            {
                "ts": int(t),
                "offered_qps": float(q),
                "active_replicas": int(a),
                "provisioned_replicas": int(p),
                "per_pod_qps": float(pp),
                "utilization": float(u),
                "response_time_ms": float(r),
                "sla_violated": bool(s),
            }
            for t, q, a, p, pp, u, r, s in zip(
                self.ts, self.offered_qps, self.active_replicas, self.provisioned_replicas,
                self.per_pod_qps, self.utilization, self.response_time_ms, self.sla_violated,
            )
        ]

    def timeline_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["ts", "offered_qps", "replicas", "utilization", "rt_ms", "sla_violated"])
        for t, q, a, u, r, s in zip(
            self.ts.tolist(), self.offered_qps.tolist(), self.active_replicas.tolist(),
            self.utilization.tolist(), self.response_time_ms.tolist(), self.sla_violated.tolist(),
        ):
            w.writerow([t, repr(q), a, repr(u), repr(r), int(s)])
        return buf.getvalue()

    def decision_log_jsonl(self) -> str:
        return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.decision_log)

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "app_id": self.app_id,
            "control_interval": self.control_interval,
            "capacity_threshold": self.capacity_threshold,
            "totals": self.totals(),
            "timeline": self.timeline_records(),
            "distributions": {
                "response_time_ms": self.rt_histogram.to_dict(),
                "per_pod_qps": self.load_histogram.to_dict(),
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def interval_load(trace: WorkloadTrace, control_interval: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean offered QPS per control interval (trailing partial interval dropped)."""
    if control_interval < trace.sample_interval or control_interval % trace.sample_interval:
        raise ValidationError(
            f"control interval {control_interval} s must be a multiple of the sample interval {trace.sample_interval} s"
        )
    per = control_interval // trace.sample_interval
    n = len(trace) // per
    if n == 0:
        raise ValidationError("trace is shorter than one control interval")
    blocks = trace.qps[: n * per].reshape(n, per)
    return trace.timestamps[: n * per : per].copy(), blocks.mean(axis=1)


def simulate(trace: WorkloadTrace, policy, config: SimConfig) -> SimulationReport:
    """Replay ``trace`` against ``policy``.

    Each control interval the policy names a replica count. Decreases apply
    at once; increases launch pods that start serving after
    ``pod_startup_delay``. Load is split evenly across serving pods.
    Replica-hours count every provisioned pod, starting or serving.
    """
    ts, offered = interval_load(trace, config.control_interval)
    ctrl = policy.start(trace, config)
    threshold = config.capacity.threshold
    history = History()

    active = int(ctrl.initial_replicas())
    if active < 1:
        raise ValidationError(f"policy {ctrl.name} starts with {active} replicas; need >= 1")
    pending: list[int] = []  # ready times of launching pods, ascending

    n = ts.size
    out_active = np.zeros(n, dtype=np.int64)
    out_prov = np.zeros(n, dtype=np.int64)
    out_pp = np.zeros(n)
    out_u = np.zeros(n)
    out_rt = np.zeros(n)
    for k in range(n):
        now = int(ts[k])
        target = int(ctrl.decide(now, history))
        if target < 1:
            raise ValidationError(f"policy {ctrl.name} asked for {target} replicas at t={now}; need >= 1")
        while pending and pending[0] <= now:
            pending.pop(0)
            active += 1
        if target < active:
            active = target
            pending.clear()
        elif target < active + len(pending):
            del pending[target - active:]
        elif target > active + len(pending):
            ready = now + config.pod_startup_delay
            pending.extend([ready] * (target - active - len(pending)))
            while pending and pending[0] <= now:
                pending.pop(0)
                active += 1

        per_pod = offered[k] / active
        u = per_pod / threshold
        rt = config.rt(u)
        out_active[k] = active
        out_prov[k] = active + len(pending)
        out_pp[k] = per_pod
        out_u[k] = u
        out_rt[k] = rt

        history.ts.append(now)
        history.offered.append(float(offered[k]))
        history.active.append(active)
        history.utilization.append(u)
        history.rt_ms.append(rt)

    return SimulationReport(
        policy=ctrl.name,
        app_id=trace.app_id,
        control_interval=config.control_interval,
        capacity_threshold=threshold,
        ts=ts,
        offered_qps=offered,
        active_replicas=out_active,
        provisioned_replicas=out_prov,
        per_pod_qps=out_pp,
        utilization=out_u,
        response_time_ms=out_rt,
        sla_violated=out_rt > config.sla_ms,
        rt_histogram=Histogram.of(out_rt, config.rt_edges()),
        load_histogram=Histogram.of(out_pp, config.load_edges()),
        decision_log=list(ctrl.log),
    )


def per_instance_qps_samples(
    report: SimulationReport,
    active_hours: tuple[float, float] | None = None,
    *,
    with_timestamps: bool = False,
):
    """Processed QPS of each serving pod in each interval, optionally hour-filtered."""
    if len(report) == 0:
        raise ValidationError("empty simulation report")
    keep = np.ones(len(report), dtype=bool)
    if active_hours is not None:
        start, end = active_hours
        hours = hour_of_day(report.ts)
        keep = (hours >= start) & (hours < end) if start <= end else (hours >= start) | (hours < end)
    counts = report.active_replicas[keep]
    values = np.repeat(report.per_pod_qps[keep], counts)
    stamps = np.repeat(report.ts[keep], counts)
    if values.size == 0:
        raise ValidationError("no per-instance samples left after the active-hours filter")
    if with_timestamps:
        return values.tolist(), stamps.tolist()
    return values.tolist()


def replica_plan_of(report: SimulationReport):
    """The provisioned replica timeline as a ReplicaPlan (for SP comparisons)."""
    from .planner import ReplicaPlan

    return ReplicaPlan.uniform(int(report.ts[0]), report.control_interval, report.provisioned_replicas.tolist())

