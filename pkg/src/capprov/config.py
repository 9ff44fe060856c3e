"""Run configuration: JSON file with a ``schema_version``, merged over defaults."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ValidationError

SCHEMA_VERSION = 1

POLICY_NAMES = ("ali_pro", "conserv_pro", "kube_pro", "optimal_pro", "over_pro")

DEFAULTS: dict = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "trace": {"path": None, "sample_interval": None},
    "split": {"train_days": 6, "eval_days": 1},
    "aggregation": {"window": 300, "statistic": "max"},
    "periodicity": {"candidates": [43200, 86400], "threshold": 0.5},
    "forecaster": {
        "lags": [1, 2, 288],
        "grid": {"max_depth": [3, 6, 9], "num_leaves": [7, 31], "learning_rate": [0.05, 0.1, 0.3]},
        "n_trees": 200,
        "folds": 3,
    },
    "capacity": {"mu": 573.7, "sigma": 65.9, "samples_path": None, "active_hours": None},
    "planner": {"slot": 3600, "headroom": 3, "change_penalty": None, "max_replicas": 200, "min_replicas": 1},
    "reactive": {
        "metric": "utilization",
        "threshold_tstar": None,  # None -> 1 / (1 + safety_sp)
        "safety_sp": 0.1,
        "window_w": 300,
        "cooldown_ct": 600,
        "statistic": "p95",
        "c_min": 1,
        "c_max": 200,
        "decision_shift_sigma": None,  # None -> control interval
    },
    "policies": list(POLICY_NAMES),
    "reference_policy": "over_pro",
    "over_pro": {"max_replicas": None},  # None -> replicas covering the trace peak
    "kube_pro": {"target_utilization": 0.6, "cooldown": 300, "window": 60, "c_min": 1, "c_max": 200},
    "optimal_pro": {"slot": None},
    "conserv_pro": {"shift": 1800, "reactive_override": True},
    "simulator": {
        "control_interval": 60,
        "pod_startup_delay": 120,
        "base_response_time": 5.0,
        "sla_threshold": None,
        "kl_smoothing": 1e-6,
    },
}


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key != "grid":
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class RunConfig:
    data: dict
    base_dir: Path

    def __getitem__(self, key):
        return self.data[key]

    def resolve(self, path: str | None) -> Path | None:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def trace_path(self) -> Path:
        return self.resolve(self.data["trace"]["path"])


def _require(cond: bool, msg: str):
    if not cond:
        raise ValidationError(f"config: {msg}")


def validate(cfg: RunConfig, *, need_trace: bool = True) -> RunConfig:
    d = cfg.data
    _require(d.get("schema_version") == SCHEMA_VERSION, f"schema_version must be {SCHEMA_VERSION}")
    if need_trace:
        _require(d["trace"]["path"] is not None, "trace.path is required")
        _require(cfg.trace_path.exists(), f"trace file not found: {cfg.trace_path}")
    samples = d["capacity"].get("samples_path")
    if samples is not None:
        _require(cfg.resolve(samples).exists(), f"capacity samples file not found: {cfg.resolve(samples)}")
    unknown = [p for p in d["policies"] if p not in POLICY_NAMES]
    _require(not unknown, f"unknown policies {unknown}; choose from {list(POLICY_NAMES)}")
    _require(len(d["policies"]) >= 1, "at least one policy is required")
    _require(d["reference_policy"] in d["policies"], "reference_policy must be one of the listed policies")
    _require(d["split"]["train_days"] > 0 and d["split"]["eval_days"] > 0, "split days must be positive")
    _require(d["aggregation"]["window"] > 0, "aggregation.window must be positive")
    _require(d["forecaster"]["n_trees"] >= 1, "forecaster.n_trees must be >= 1")
    _require(d["forecaster"]["folds"] >= 2, "forecaster.folds must be >= 2")
    _require(bool(d["forecaster"]["lags"]), "forecaster.lags must be nonempty")
    for k in ("max_depth", "num_leaves", "learning_rate"):
        _require(bool(d["forecaster"]["grid"].get(k)), f"forecaster.grid.{k} must be nonempty")
    _require(d["planner"]["headroom"] >= 1, "planner.headroom must be >= 1")
    _require(d["planner"]["slot"] > 0, "planner.slot must be positive")
    _require(0.0 < d["kube_pro"]["target_utilization"] <= 1.0, "kube_pro.target_utilization must be in (0, 1]")
    _require(d["conserv_pro"]["shift"] >= 0, "conserv_pro.shift must be >= 0")
    _require(d["simulator"]["control_interval"] > 0, "simulator.control_interval must be positive")
    _require(d["simulator"]["pod_startup_delay"] >= 0, "simulator.pod_startup_delay must be >= 0")
    _require(d["simulator"]["kl_smoothing"] > 0, "simulator.kl_smoothing must be positive")
    return cfg


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Read a JSON run config (or use defaults when ``path`` is None) and apply overrides."""
    data: dict = {}
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: line {exc.lineno}: malformed JSON: {exc.msg}") from None
        if not isinstance(data, dict):
            raise ValidationError(f"{path}: config must be a JSON object")
        base_dir = path.parent
    merged = deep_merge(DEFAULTS, data)
    if overrides:
        merged = deep_merge(merged, overrides)
    return RunConfig(merged, base_dir)
