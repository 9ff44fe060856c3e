"""Command-line entry point.

Subcommands: analyze, forecast, fit-capacity, plan, simulate, compare,
gen-trace. Exit codes: 0 success, 1 internal or feasibility error, 2 usage
or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path


from .capacity import CapacityModel, demand_to_replicas, fit_capacity
from .config import POLICY_NAMES, RunConfig, load_config, validate
from .errors import CapprovError, InfeasibleError, ValidationError
from .forecaster import (
    Forecast,
    GbdtModel,
    build_features,
    evaluate,
    fit_gbdt,
    grid_search,
    predict_horizon,
    seasonal_naive,
)
from .gbdt import Hyperparams
from .planner import ReplicaPlan, build_graph, plan as plan_dijkstra, EdgeWeight, default_change_penalty
from .policies import (
    ProactiveParams,
    ali_pro,
    conserv_pro,
    kube_pro,
    optimal_pro,
    over_pro,
    schedule_policy,
)
from .reactive import ReactiveConfig
from .sim import SimConfig, SimulationReport, kl_divergence, simulate
from .synth import Spike, SyntheticSpec, generate_trace
from .trace import (
    SECONDS_PER_DAY,
    WorkloadTrace,
    aggregate,
    classify_periodicity,
    emit_trace,
    load_trace,
    summarize,
)

log = logging.getLogger("capprov")


def _dump(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text, encoding="utf-8")
    return path


# -- shared pipeline -----------------------------------------------------


def read_capacity_samples(path: Path) -> tuple[list[float], list[int] | None]:
    """Per-instance QPS samples: CSV ``timestamp,qps`` / ``qps`` or a JSON list."""
    if not path.exists():
        raise ValidationError(f"samples file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: line {exc.lineno}: malformed JSON") from None
        if isinstance(doc, dict):
            return [float(v) for v in doc["qps"]], [int(t) for t in doc["timestamps"]] if doc.get("timestamps") else None
        return [float(v) for v in doc], None
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if not rows:
        raise ValidationError(f"{path}: no samples")
    header = [h.strip().lower() for h in rows[0]]
    body = rows[1:] if header[0] in ("timestamp", "qps") else rows
    values, stamps = [], []
    for lineno, row in enumerate(body, start=2 if body is not rows else 1):
        try:
            if len(row) == 2:
                stamps.append(int(row[0]))
                values.append(float(row[1]))
            else:
                values.append(float(row[0]))
        except ValueError:
            raise ValidationError(f"{path}: line {lineno}: malformed sample {row!r}") from None
    return values, (stamps if len(stamps) == len(values) else None)


def capacity_from_config(cfg: RunConfig) -> CapacityModel:
    cap = cfg["capacity"]
    hours = tuple(cap["active_hours"]) if cap.get("active_hours") else None
    if cap.get("samples_path"):
        values, stamps = read_capacity_samples(cfg.resolve(cap["samples_path"]))
        return fit_capacity(values, stamps, hours)
    return CapacityModel.from_params(cap["mu"], cap["sigma"], 0, hours)


def reactive_from_config(cfg: RunConfig) -> ReactiveConfig:
    r = cfg["reactive"]
    sp = float(r["safety_sp"])
    tstar = r["threshold_tstar"]
    if tstar is None:
        # override fires once the window statistic exceeds full capacity
        tstar = 1.0 / (1.0 + sp)
    sigma = r["decision_shift_sigma"]
    if sigma is None:
        sigma = cfg["simulator"]["control_interval"]
    return ReactiveConfig(
        threshold_tstar=float(tstar),
        c_min=int(r["c_min"]),
        c_max=int(r["c_max"]),
        window_w=int(r["window_w"]),
        safety_sp=sp,
        cooldown_ct=int(r["cooldown_ct"]),
        statistic=r["statistic"],
        decision_shift_sigma=int(sigma),
    )


def sim_config_from(cfg: RunConfig, capacity: CapacityModel) -> SimConfig:
    s = cfg["simulator"]
    return SimConfig(
        capacity=capacity,
        control_interval=int(s["control_interval"]),
        pod_startup_delay=int(s["pod_startup_delay"]),
        base_response_time=float(s["base_response_time"]),
        sla_threshold=s["sla_threshold"],
        seed=int(cfg["seed"]),
    )


def split_trace(trace: WorkloadTrace, cfg: RunConfig) -> tuple[WorkloadTrace, WorkloadTrace]:
    train_days = cfg["split"]["train_days"]
    eval_days = cfg["split"]["eval_days"]
    cut = trace.start + int(round(train_days * SECONDS_PER_DAY))
    end = cut + int(round(eval_days * SECONDS_PER_DAY))
    if trace.end < end:
        raise ValidationError(
            f"trace covers {trace.duration / SECONDS_PER_DAY:g} days; split needs {train_days + eval_days:g}"
        )
    return trace.slice_time(trace.start, cut), trace.slice_time(cut, end)


def train_forecaster(train: WorkloadTrace, cfg: RunConfig):
    agg_cfg = cfg["aggregation"]
    fc_cfg = cfg["forecaster"]
    agg = aggregate(train, int(agg_cfg["window"]), agg_cfg["statistic"])
    lags = [int(x) for x in fc_cfg["lags"]]
    rows = build_features(agg, lags)
    grid = fc_cfg["grid"]
    seed = int(cfg["seed"])
    if all(len(grid[k]) == 1 for k in ("max_depth", "num_leaves", "learning_rate")):
        hp = Hyperparams(int(grid["max_depth"][0]), int(grid["num_leaves"][0]), float(grid["learning_rate"][0]))
        model = fit_gbdt(rows, hp, int(fc_cfg["n_trees"]), seed, lag_offsets=lags, window_size=agg.window_size)
    else:
        model, hp = grid_search(
            rows, grid, int(fc_cfg["n_trees"]), int(fc_cfg["folds"]), seed, lag_offsets=lags, window_size=agg.window_size
        )
    return agg, model, hp


@dataclass
class Prepared:
    cfg: RunConfig
    trace: WorkloadTrace
    train: WorkloadTrace
    eval: WorkloadTrace
    capacity: CapacityModel
    sim: SimConfig
    label: object = None
    agg: object = None
    model: GbdtModel | None = None
    hyperparams: Hyperparams | None = None
    forecast: Forecast | None = None
    base_plan: ReplicaPlan | None = None


def prepare(cfg: RunConfig, need_forecast: bool) -> Prepared:
    trace = load_trace(cfg.trace_path, sample_interval=cfg["trace"]["sample_interval"])
    train, test = split_trace(trace, cfg)
    capacity = capacity_from_config(cfg)
    prep = Prepared(cfg, trace, train, test, capacity, sim_config_from(cfg, capacity))
    if need_forecast:
        per = cfg["periodicity"]
        prep.label = classify_periodicity(train, per["candidates"], per["threshold"])
        prep.agg, prep.model, prep.hyperparams = train_forecaster(train, cfg)
        horizon = test.duration // prep.agg.window_size
        prep.forecast = predict_horizon(prep.model, prep.agg, horizon)
    return prep


def build_policy(name: str, prep: Prepared):
    cfg = prep.cfg
    capacity = prep.capacity
    if name == "over_pro":
        n = cfg["over_pro"]["max_replicas"]
        if n is None:
            n = max(demand_to_replicas(capacity, float(prep.trace.qps.max())), 1)
        return over_pro(int(n))
    if name == "optimal_pro":
        return optimal_pro(capacity, cfg["optimal_pro"]["slot"])
    if name == "kube_pro":
        k = cfg["kube_pro"]
        return kube_pro(
            float(k["target_utilization"]), int(k["c_min"]), int(k["c_max"]), int(k["cooldown"]),
            window=int(k["window"]), control_interval=prep.sim.control_interval,
        )
    p = cfg["planner"]
    params = ProactiveParams(int(p["slot"]), int(p["headroom"]), p["change_penalty"], int(p["max_replicas"]), int(p["min_replicas"]))
    reactive_cfg = reactive_from_config(cfg)
    ali = ali_pro(prep.forecast, capacity, params, reactive_cfg, prep.label, cfg["reactive"]["metric"])
    if prep.base_plan is None and prep.label.is_periodical:
        prep.base_plan = ali.base_plan()
    if name == "ali_pro":
        return ali
    if name == "conserv_pro":
        if not prep.label.is_periodical:
            raise ValidationError("conserv_pro needs a periodical workload (it shifts the proactive plan)")
        c = cfg["conserv_pro"]
        override = reactive_cfg if c["reactive_override"] else None
        return conserv_pro(prep.base_plan, int(c["shift"]), override, cfg["reactive"]["metric"])
    raise ValidationError(f"unknown policy {name!r}")


def _needs_forecast(names) -> bool:
    return any(n in ("ali_pro", "conserv_pro") for n in names)


def run_policy(name: str, prep: Prepared) -> SimulationReport:
    try:
        policy = build_policy(name, prep)
        return simulate(prep.eval, policy, prep.sim)
    except InfeasibleError as exc:
        if exc.policy is not None:
            raise
        raise InfeasibleError(f"{name}: {exc}", slot=exc.slot, policy=name) from None


def write_report(out: Path, report: SimulationReport, prefix: str = "") -> None:
    _write(out, f"{prefix}report.json", report.to_json() + "\n")
    _write(out, f"{prefix}timeline.csv", report.timeline_csv())
    _write(out, f"{prefix}hist_rt.csv", report.rt_histogram.to_csv())
    _write(out, f"{prefix}hist_load.csv", report.load_histogram.to_csv())
    _write(out, f"{prefix}decisions.jsonl", report.decision_log_jsonl())


# -- subcommands ----------------------------------------------------------


def cmd_analyze(trace_path: Path, candidate_periods, threshold: float = 0.5, out: Path | None = None) -> dict:
    trace = load_trace(trace_path)
    label = classify_periodicity(trace, candidate_periods, threshold)
    doc = {**label.to_dict(), "app_id": trace.app_id, "stats": summarize(trace).to_dict()}
    if out is not None:
        _write(out, "analysis.json", _dump(doc))
    return doc


def cmd_forecast(cfg: RunConfig, out: Path, horizon: int | None = None) -> dict:
    validate(cfg)
    trace = load_trace(cfg.trace_path, sample_interval=cfg["trace"]["sample_interval"])
    cut = trace.start + int(round(cfg["split"]["train_days"] * SECONDS_PER_DAY))
    train = trace.slice_time(trace.start, cut)
    if len(train) == 0:
        raise ValidationError("no training data before the split point")
    agg, model, hp = train_forecaster(train, cfg)
    if horizon is None:
        horizon = int(round(cfg["split"]["eval_days"] * SECONDS_PER_DAY)) // agg.window_size
    if horizon <= 0:
        raise ValidationError(f"horizon must be positive, got {horizon}")
    fc = predict_horizon(model, agg, horizon)
    _write(out, "forecast.csv", fc.to_csv())
    _write(out, "model.json", model.to_json() + "\n")
    doc: dict = {"hyperparams": hp.to_dict(), "cv_scores": model.cv_scores, "horizon_windows": horizon}
    rest = trace.slice_time(cut, trace.end)
    if len(rest) and rest.duration >= horizon * agg.window_size:
        actual = aggregate(rest, agg.window_size, agg.statistic).values[:horizon]
        period = int(cfg["periodicity"]["candidates"][-1]) // agg.window_size
        doc["gbdt"] = evaluate(actual, fc.values).to_dict()
        if len(agg) >= period:
            doc["seasonal_naive"] = evaluate(actual, seasonal_naive(agg, period, horizon).values).to_dict()
    doc["train_rmse_first_last"] = [model.train_rmse[0], model.train_rmse[-1]]
    _write(out, "evaluation.json", _dump(doc))
    return doc


def cmd_fit_capacity(samples_path: Path, active_hours=None, out: Path | None = None) -> CapacityModel:
    values, stamps = read_capacity_samples(samples_path)
    model = fit_capacity(values, stamps, tuple(active_hours) if active_hours else None)
    if out is not None:
        _write(out, "capacity.json", _dump(model.to_dict()))
    return model


def cmd_plan(forecast_path: Path, capacity: CapacityModel, cfg: RunConfig, out: Path, fmt: str = "csv") -> ReplicaPlan:
    if not forecast_path.exists():
        raise ValidationError(f"forecast file not found: {forecast_path}")
    fc = Forecast.from_csv(forecast_path.read_text(encoding="utf-8"))
    p = cfg["planner"]
    graph = build_graph(fc, capacity, int(p["slot"]), int(p["headroom"]), int(p["max_replicas"]), int(p["min_replicas"]))
    lam = default_change_penalty(int(p["slot"])) if p["change_penalty"] is None else float(p["change_penalty"])
    result = plan_dijkstra(graph, EdgeWeight(lam))
    if fmt == "json":
        _write(out, "plan.json", result.to_json() + "\n")
    else:
        _write(out, "plan.csv", result.to_csv())
    return result


def cmd_simulate(cfg: RunConfig, out: Path, policy: str | None = None, plan_path: Path | None = None) -> dict:
    validate(cfg)
    if plan_path is not None:
        if not plan_path.exists():
            raise ValidationError(f"plan file not found: {plan_path}")
        text = plan_path.read_text(encoding="utf-8")
        replay = ReplicaPlan.from_json(text) if plan_path.suffix == ".json" else ReplicaPlan.from_csv(text)
        prep = prepare(cfg, need_forecast=False)
        report = simulate(prep.eval, schedule_policy(replay, name=plan_path.stem), prep.sim)
    else:
        policy = policy or "ali_pro"
        if policy not in POLICY_NAMES:
            raise ValidationError(f"unknown policy {policy!r}")
        prep = prepare(cfg, need_forecast=_needs_forecast([policy]))
        report = run_policy(policy, prep)
    write_report(out, report)
    return {"policy": report.policy, **report.totals()}


def cmd_compare(cfg: RunConfig, out: Path) -> dict:
    """Simulate every configured policy on the evaluation span and compare them."""
    validate(cfg)
    names = sorted(cfg["policies"])
    prep = prepare(cfg, need_forecast=_needs_forecast(names))
    reports = {name: run_policy(name, prep) for name in names}
    ref = reports[cfg["reference_policy"]]
    eps = float(cfg["simulator"]["kl_smoothing"])
    table = {}
    for name in names:
        rep = reports[name]
        rep.sp_vs_baseline = 1.0 - rep.replica_hours / ref.replica_hours
        table[name] = {
            **rep.totals(),
            "kl_rt_vs_reference": kl_divergence(rep.rt_histogram, ref.rt_histogram, eps),
            "kl_load_vs_reference": kl_divergence(rep.load_histogram, ref.load_histogram, eps),
        }
        write_report(out / name, rep)
    doc: dict = {
        "schema_version": cfg["schema_version"],
        "reference_policy": cfg["reference_policy"],
        "capacity": prep.capacity.to_dict(),
        "eval_span": [prep.eval.start, prep.eval.end],
        "sla_threshold_ms": prep.sim.sla_ms,
        "policies": table,
    }
    if prep.forecast is not None:
        window = prep.agg.window_size
        actual = aggregate(prep.eval, window, prep.agg.statistic).values[: len(prep.forecast)]
        period = int(prep.label.period or SECONDS_PER_DAY) // window
        doc["periodicity"] = prep.label.to_dict()
        doc["forecast"] = {
            "hyperparams": prep.hyperparams.to_dict(),
            "gbdt": evaluate(actual, prep.forecast.values).to_dict(),
            "seasonal_naive": evaluate(actual, seasonal_naive(prep.agg, period, len(prep.forecast)).values).to_dict(),
        }
        _write(out, "forecast.csv", prep.forecast.to_csv())
        _write(out, "model.json", prep.model.to_json() + "\n")
        if prep.base_plan is not None:
            _write(out, "plan_ali_pro.csv", prep.base_plan.to_csv())
    _write(out, "capacity.json", _dump(prep.capacity.to_dict()))
    _write(out, "comparison.json", _dump(doc))
    lines = ["policy,sp,replica_hours,mean_utilization,sla_violation_rate,kl_rt,kl_load"]
    for name in names:
        t = table[name]
        lines.append(
            f"{name},{t['sp_vs_baseline']!r},{t['replica_hours']!r},{t['mean_utilization']!r},"
            f"{t['sla_violation_rate']!r},{t['kl_rt_vs_reference']!r},{t['kl_load_vs_reference']!r}"
        )
    _write(out, "comparison.csv", "\n".join(lines) + "\n")
    return doc


def _parse_spike(text: str) -> Spike:
    try:
        start, duration, mult = text.split(":")
        return Spike(int(start), int(duration), float(mult))
    except ValueError:
        raise ValidationError(f"spike must be START:DURATION:MULTIPLIER, got {text!r}") from None


def cmd_gen_trace(args, out: Path) -> Path:
    spec = SyntheticSpec(
        days=args.days,
        sample_interval=args.interval,
        peak_qps=args.peak,
        peak_to_trough=args.peak_to_trough,
        noise=args.noise,
        period=args.period,
        spikes=tuple(_parse_spike(s) for s in args.spike or ()),
        app_id=args.app_id,
    )
    trace = generate_trace(spec, seed=args.seed)
    fmt = args.format or "csv"
    if args.output:
        path = Path(args.output)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(emit_trace(trace, fmt), encoding="utf-8")
        return path
    return _write(out, f"trace.{fmt}", emit_trace(trace, fmt))


# -- argument parsing -----------------------------------------------------


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--out", type=Path, default=None, help="output directory (default: ./out)")
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    common.add_argument("--format", choices=("json", "csv"), default=None, help="format for trace/plan output")

    parser = argparse.ArgumentParser(prog="capprov", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common], help="summary statistics and periodicity of a trace")
    p.add_argument("trace", type=Path)
    p.add_argument("--periods", type=_int_list, default=[43200, 86400], help="candidate periods in seconds")
    p.add_argument("--threshold", type=float, default=0.5)

    p = sub.add_parser("forecast", parents=[common], help="train the forecaster and predict the next span")
    p.add_argument("--trace", type=Path)
    p.add_argument("--horizon", type=int, default=None, help="forecast length in aggregation windows")

    p = sub.add_parser("fit-capacity", parents=[common], help="fit the per-pod QPS capacity threshold")
    p.add_argument("samples", type=Path)
    p.add_argument("--active-hours", type=float, nargs=2, metavar=("START", "END"))

    p = sub.add_parser("plan", parents=[common], help="proactive replica plan from a forecast")
    p.add_argument("--forecast", type=Path, required=True)
    p.add_argument("--capacity", type=Path, help="capacity JSON (default: config capacity)")
    p.add_argument("--slot", type=int)
    p.add_argument("--headroom", type=int)
    p.add_argument("--change-penalty", type=float)
    p.add_argument("--max-replicas", type=int)

    p = sub.add_parser("simulate", parents=[common], help="simulate one policy")
    p.add_argument("--trace", type=Path)
    p.add_argument("--policy", choices=POLICY_NAMES)
    p.add_argument("--plan", type=Path, help="replay a plan CSV/JSON instead of a named policy")

    p = sub.add_parser("compare", parents=[common], help="simulate and compare all configured policies")
    p.add_argument("--trace", type=Path)

    p = sub.add_parser("gen-trace", parents=[common], help="write a seeded synthetic diurnal trace")
    p.add_argument("--days", type=float, default=7.0)
    p.add_argument("--interval", type=int, default=60)
    p.add_argument("--peak", type=float, default=12000.0)
    p.add_argument("--peak-to-trough", type=float, default=5.0)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--period", type=int, default=SECONDS_PER_DAY)
    p.add_argument("--spike", action="append", help="START:DURATION:MULTIPLIER (seconds from trace start)")
    p.add_argument("--app-id", default="synthetic")
    p.add_argument("--output", help="write to this path instead of OUT/trace.FORMAT")
    return parser


def _config_with_flags(args) -> RunConfig:
    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    trace = getattr(args, "trace", None)
    if trace is not None and args.command != "analyze":
        overrides["trace"] = {"path": str(Path(trace).resolve())}
    planner = {k: getattr(args, k) for k in ("slot", "headroom", "change_penalty", "max_replicas") if getattr(args, k, None) is not None}
    if "headroom" in planner or "slot" in planner or planner:
        overrides["planner"] = planner
    return load_config(args.config, overrides)


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = args.out or Path("out")
    try:
        if args.command == "gen-trace":
            args.seed = 0 if args.seed is None else args.seed
            path = cmd_gen_trace(args, out)
            print(path)
        elif args.command == "analyze":
            if not args.trace.exists():
                raise ValidationError(f"trace file not found: {args.trace}")
            doc = cmd_analyze(args.trace, args.periods, args.threshold, args.out)
            print(_dump(doc), end="")
        elif args.command == "fit-capacity":
            if not args.samples.exists():
                raise ValidationError(f"samples file not found: {args.samples}")
            model = cmd_fit_capacity(args.samples, args.active_hours, out)
            print(_dump(model.to_dict()), end="")
        else:
            cfg = _config_with_flags(args)
            if args.command == "forecast":
                doc = cmd_forecast(cfg, out, args.horizon)
                print(_dump(doc), end="")
            elif args.command == "plan":
                if args.capacity is not None:
                    if not args.capacity.exists():
                        raise ValidationError(f"capacity file not found: {args.capacity}")
                    capacity = CapacityModel.from_dict(json.loads(args.capacity.read_text(encoding="utf-8")))
                else:
                    capacity = capacity_from_config(cfg)
                result = cmd_plan(args.forecast, capacity, cfg, out, args.format or "csv")
                print(f"planned {len(result)} slots, {result.replica_hours():.2f} replica-hours")
            elif args.command == "simulate":
                doc = cmd_simulate(cfg, out, args.policy, args.plan)
                print(_dump(doc), end="")
            elif args.command == "compare":
                doc = cmd_compare(cfg, out)
                print(_dump({k: v["sp_vs_baseline"] for k, v in doc["policies"].items()}), end="")
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 1
    except CapprovError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
