"""Proactive replica planning as a shortest path through a slot/level DAG."""

from __future__ import annotations

import csv
import heapq
import io
import json
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .capacity import CapacityModel, demand_to_replicas
from .errors import CapprovError, InfeasibleError, ValidationError
from .forecaster import Forecast

DEFAULT_SLOT = 3600
DEFAULT_HEADROOM = 3
DEFAULT_PENALTY_FACTOR = 0.25

SOURCE = ("source",)
SINK = ("sink",)


@dataclass(frozen=True)
class ReplicaPlan:
    """Piecewise-constant replica schedule over contiguous half-open slots."""

    starts: np.ndarray
    durations: np.ndarray
    replicas: np.ndarray

    def __post_init__(self):
        starts = np.asarray(self.starts, dtype=np.int64)
        durs = np.asarray(self.durations, dtype=np.int64)
        reps = np.asarray(self.replicas, dtype=np.int64)
        for arr in (starts, durs, reps):
            arr.setflags(write=False)
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "durations", durs)
        object.__setattr__(self, "replicas", reps)
        if not (starts.shape == durs.shape == reps.shape) or starts.size == 0:
            raise ValidationError("a plan needs equally many starts, durations and replica counts (>= 1)")
        if np.any(durs <= 0):
            raise ValidationError("slot durations must be positive")
        if np.any(reps < 0):
            raise ValidationError("replica counts must be nonnegative")
        if np.any(starts[1:] != starts[:-1] + durs[:-1]):
            raise ValidationError("plan slots must be contiguous and non-overlapping")

    @classmethod
    def uniform(cls, start: int, slot: int, replicas: Sequence[int]) -> "ReplicaPlan":
        n = len(replicas)
        return cls(start + slot * np.arange(n, dtype=np.int64), np.full(n, slot), np.asarray(replicas))

    def __len__(self) -> int:
        return int(self.replicas.size)

    @property
    def entries(self) -> list[tuple[int, int, int]]:
        return list(zip(self.starts.tolist(), self.durations.tolist(), self.replicas.tolist()))

    @property
    def start(self) -> int:
        return int(self.starts[0])

    @property
    def end(self) -> int:
        return int(self.starts[-1] + self.durations[-1])

    @property
    def total_duration(self) -> int:
        return int(self.durations.sum())

    def replica_hours(self) -> float:
        return float(np.sum(self.replicas * self.durations)) / 3600.0

    def replicas_at(self, t) -> np.ndarray | int:
        """Replica count in force at time(s) t."""
        t_arr = np.asarray(t)
        if np.any(t_arr < self.start) or np.any(t_arr >= self.end):
            raise ValidationError(f"time outside plan range [{self.start}, {self.end})")
        idx = np.searchsorted(self.starts, t_arr, side="right") - 1
        out = self.replicas[idx]
        return int(out) if out.ndim == 0 else out

    def to_csv(self) -> str:
        lines = ["slot_start,duration_s,replicas"]
        lines.extend(f"{s},{d},{r}" for s, d, r in self.entries)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "ReplicaPlan":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["slot_start", "duration_s", "replicas"]:
            raise ValidationError("line 1: expected header 'slot_start,duration_s,replicas'")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append(tuple(int(x) for x in row))
            except ValueError:
                raise ValidationError(f"line {lineno}: malformed plan record {row!r}") from None
            if len(rows[-1]) != 3:
                raise ValidationError(f"line {lineno}: expected 3 fields")
        if not rows:
            raise ValidationError("plan has no rows")
        s, d, r = zip(*rows)
        return cls(np.array(s), np.array(d), np.array(r))

    def to_json(self) -> str:
        return json.dumps(
            {"entries": [{"slot_start": s, "duration_s": d, "replicas": r} for s, d, r in self.entries]},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "ReplicaPlan":
        try:
            entries = json.loads(text)["entries"]
            return cls(
                np.array([e["slot_start"] for e in entries]),
                np.array([e["duration_s"] for e in entries]),
                np.array([e["replicas"] for e in entries]),
            )
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ValidationError(f"malformed plan document: {exc}") from None


@dataclass(frozen=True)
class PlanGraph:
    """Layered DAG: one layer of candidate replica levels per time slot.

    Node ``(i, r)`` means "run r replicas in slot i". Edges join every node
    of slot i to every node of slot i + 1, plus a virtual source before
    slot 0 and a virtual sink after the last slot.
    """

    slot_starts: tuple[int, ...]
    slot_durations: tuple[int, ...]
    demand: tuple[int, ...]
    levels: tuple[tuple[int, ...], ...]

    @property
    def n_slots(self) -> int:
        return len(self.demand)

    @property
    def nodes(self) -> list[tuple[int, int]]:
        return [(i, r) for i, lv in enumerate(self.levels) for r in lv]

    def successors(self, node) -> list:
        if node == SOURCE:
            return [(0, r) for r in self.levels[0]]
        if node == SINK:
            return []
        i = node[0]
        if i + 1 == self.n_slots:
            return [SINK]
        return [(i + 1, r) for r in self.levels[i + 1]]

    def edges(self, weight: "EdgeWeight") -> Iterator[tuple]:
        for u in [SOURCE, *self.nodes]:
            for v in self.successors(u):
                yield u, v, weight(self, u, v)


@dataclass(frozen=True)
class EdgeWeight:
    """Cost of entering node (i, r): r * slot hours, plus a penalty per replica changed.

    The move out of the source carries no change penalty; edges into the
    sink are free.
    """

    change_penalty: float = 0.0

    def __post_init__(self):
        if self.change_penalty < 0 or not math.isfinite(self.change_penalty):
            raise ValidationError("change penalty must be finite and >= 0")

    def __call__(self, graph: PlanGraph, u, v) -> float:
        if v == SINK:
            return 0.0
        i, r = v
        cost = r * graph.slot_durations[i] / 3600.0
        if u != SOURCE and self.change_penalty:
            cost += self.change_penalty * abs(r - u[1])
        return cost


REPLICA_HOURS = EdgeWeight(0.0)


def replica_hours_plus_change_penalty(penalty: float) -> EdgeWeight:
    return EdgeWeight(float(penalty))


def default_change_penalty(slot_duration: int = DEFAULT_SLOT) -> float:
    return DEFAULT_PENALTY_FACTOR * slot_duration / 3600.0


def build_graph_from_demand(
    demand: Sequence[int],
    slot_starts: Sequence[int],
    slot_durations: Sequence[int],
    headroom_levels: int = DEFAULT_HEADROOM,
    max_replicas: int | None = None,
) -> PlanGraph:
    if headroom_levels < 1:
        raise ValidationError(f"headroom_levels must be >= 1, got {headroom_levels}")
    if not demand:
        raise ValidationError("no slots to plan")
    levels = []
    for i, d in enumerate(demand):
        if max_replicas is not None and d > max_replicas:
            raise InfeasibleError(f"slot {i} needs {d} replicas but max_replicas is {max_replicas}", slot=i)
        top = d + headroom_levels - 1
        if max_replicas is not None:
            top = min(top, max_replicas)
        levels.append(tuple(range(d, top + 1)))
    return PlanGraph(tuple(int(s) for s in slot_starts), tuple(int(s) for s in slot_durations), tuple(int(d) for d in demand), tuple(levels))


def slot_peaks(forecast: Forecast, slot_duration: int) -> tuple[list[int], list[float]]:
    """Slot start times and the peak forecast QPS in each slot."""
    if slot_duration <= 0 or slot_duration % forecast.interval:
        raise ValidationError(f"slot duration {slot_duration} s must be a positive multiple of {forecast.interval} s")
    per = slot_duration // forecast.interval
    if len(forecast) == 0 or len(forecast) % per:
        raise ValidationError(f"forecast of {len(forecast)} windows does not cover a whole number of {slot_duration} s slots")
    blocks = forecast.values.reshape(-1, per)
    starts = forecast.timestamps[::per].tolist()
    return starts, blocks.max(axis=1).tolist()


def build_graph(
    forecast: Forecast,
    capacity: CapacityModel,
    slot_duration: int = DEFAULT_SLOT,
    headroom_levels: int = DEFAULT_HEADROOM,
    max_replicas: int | None = None,
    min_replicas: int = 0,
) -> PlanGraph:
    """Per-slot demand is the replica count covering the slot's peak forecast."""
    starts, peaks = slot_peaks(forecast, slot_duration)
    demand = [max(demand_to_replicas(capacity, q), min_replicas) for q in peaks]
    return build_graph_from_demand(demand, starts, [slot_duration] * len(demand), headroom_levels, max_replicas)


def plan(graph: PlanGraph, weight: EdgeWeight = REPLICA_HOURS) -> ReplicaPlan:
    """Dijkstra from source to sink with a binary-heap priority queue.

    Equal-cost paths are ordered by their replica sequence, so the plan
    with the lower count at the earliest differing slot wins.
    """
    dist = {SOURCE: 0.0}
    path: dict = {SOURCE: ()}
    settled = set()
    heap = [(0.0, (), SOURCE)]
    while heap:
        d, p, u = heapq.heappop(heap)
        if u in settled:
            continue
        settled.add(u)
        if u == SINK:
            break
        for v in graph.successors(u):
            nd = d + weight(graph, u, v)
            np_ = p if v == SINK else p + (v[1],)
            if v not in dist or nd < dist[v] or (nd == dist[v] and np_ < path[v]):
                dist[v] = nd
                path[v] = np_
                heapq.heappush(heap, (nd, np_, v))
    if SINK not in settled:
        raise CapprovError("sink unreachable in plan graph")
    return ReplicaPlan(np.array(graph.slot_starts), np.array(graph.slot_durations), np.array(path[SINK]))


def path_cost(graph: PlanGraph, replicas: Sequence[int], weight: EdgeWeight = REPLICA_HOURS) -> float:
    """Cost of the source-to-sink path through the given levels, summed in path order."""
    if len(replicas) != graph.n_slots:
        raise ValidationError("path length does not match the number of slots")
    nodes = [SOURCE, *((i, int(r)) for i, r in enumerate(replicas)), SINK]
    total = 0.0
    for u, v in zip(nodes, nodes[1:]):
        total += weight(graph, u, v)
    return total


def sp_metric(plan_: ReplicaPlan, baseline: ReplicaPlan) -> float:
    """Saved percentage: 1 - replica-hours(plan) / replica-hours(baseline)."""
    if plan_.total_duration != baseline.total_duration:
        raise ValidationError(
            f"plans cover different durations ({plan_.total_duration} s vs {baseline.total_duration} s)"
        )
    base = baseline.replica_hours()
    if base <= 0:
        raise ValidationError("baseline plan has zero replica-hours")
    return 1.0 - plan_.replica_hours() / base
