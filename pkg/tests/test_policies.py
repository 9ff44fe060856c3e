import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capprov.capacity import CapacityModel, demand_to_replicas
from capprov.errors import InfeasibleError, ValidationError
from capprov.forecaster import Forecast
from capprov.planner import ReplicaPlan, sp_metric
from capprov.policies import (
    ProactiveParams,
    ali_pro,
    conserv_plan,
    conserv_pro,
    kube_pro,
    optimal_pro,
    over_pro,
    plan_max_over,
    reactive_only,
)
from capprov.reactive import ReactiveConfig, ReactiveState, step
from capprov.sim import SimConfig, replica_plan_of, simulate
from capprov.synth import Spike, SyntheticSpec, generate_trace
from capprov.trace import PeriodicityKind, PeriodicityLabel, WorkloadTrace, aggregate

HOUR, DAY = 3600, 86400
CAP = CapacityModel.from_params(573.7, 65.9)
SIM = SimConfig(CAP)
PERIODICAL = PeriodicityLabel(PeriodicityKind.PERIODICAL, DAY, 1.0)
NON_PERIODICAL = PeriodicityLabel(PeriodicityKind.NON_PERIODICAL, None, 0.1)


def reactive_cfg(**kw):
    base = dict(threshold_tstar=1 / 1.1, c_min=1, c_max=60, window_w=300, safety_sp=0.1, cooldown_ct=600, decision_shift_sigma=60)
    base.update(kw)
    return ReactiveConfig(**base)


def day_trace(noise=0.0, spikes=(), seed=0):
    return generate_trace(SyntheticSpec(days=1, noise=noise, spikes=spikes), seed=seed)


def perfect_forecast(trace):
    agg = aggregate(trace, 300, "max")
    return Forecast(agg.window_starts, agg.values, 300)


# -- Over-Pro -----------------------------------------------------------------


def test_over_pro_flat_eighteen():
    rep = simulate(day_trace(), over_pro(18), SIM)
    assert set(rep.provisioned_replicas.tolist()) == {18}
    assert rep.replica_hours == pytest.approx(18 * 24)
    plan = replica_plan_of(rep)
    assert sp_metric(plan, plan) == 0.0


def test_over_pro_rejects_zero():
    with pytest.raises(ValidationError):
        over_pro(0)


# -- Kube-Pro -----------------------------------------------------------------


def test_kube_formula():
    cfg = kube_pro(0.6).config
    d, _ = step(ReactiveState(3, cfg), [(0, 0.6)], 0)
    assert d.new_replicas == 3
    d, _ = step(ReactiveState(3, cfg), [(0, 1.2)], 0)
    assert d.new_replicas == 6
    d, _ = step(ReactiveState(3, cfg), [(0, 0.61)], 0)
    assert d.new_replicas == 4  # ceil(3.05)


def test_kube_lags_demand_rise():
    n = 30
    qps = np.where(np.arange(n) >= 10, 3000.0, 800.0)
    trace = WorkloadTrace("step", 60 * np.arange(n), qps, 60)
    rep = simulate(trace, kube_pro(0.6, cooldown=300), SIM)
    rise = 600
    first_up = min(r["ts"] for r in rep.decision_log if r["new"] > r["old"])
    assert first_up - rise >= SIM.control_interval
    first_provisioned = int(rep.ts[np.argmax(rep.provisioned_replicas > rep.provisioned_replicas[0])])
    assert first_provisioned - rise >= SIM.control_interval


def test_kube_rejects_bad_target():
    with pytest.raises(ValidationError):
        kube_pro(0.0)


# -- Optimal-Pro ----------------------------------------------------------------


def test_optimal_slot_sizing():
    trace = WorkloadTrace("o", 60 * np.arange(4), np.array([1500.0, 0.0, 800.0, 0.0]), 60)
    sched = optimal_pro(CAP).schedule_for(trace, 60)
    assert sched.replicas.tolist() == [2, 1, 2, 1]


def test_optimal_never_overloaded_and_cheapest(diurnal_trace):
    day = diurnal_trace.slice_time(6 * DAY, 7 * DAY)
    opt = simulate(day, optimal_pro(CAP), SIM)
    assert np.all(opt.offered_qps <= opt.active_replicas * CAP.threshold + 1e-9)
    peak = demand_to_replicas(CAP, float(day.qps.max()))
    others = [over_pro(peak), kube_pro(0.6, c_max=200)]
    for pol in others:
        rep = simulate(day, pol, SIM)
        if rep.sla_violation_rate == 0:
            assert opt.replica_hours <= rep.replica_hours


# -- Conserv-Pro ----------------------------------------------------------------


def test_conserv_constant_plan_unchanged():
    base = ReplicaPlan.uniform(0, HOUR, [4] * 24)
    assert conserv_plan(base, 1800).replicas.tolist() == [4]
    assert conserv_plan(base, 1800).total_duration == DAY


def test_conserv_rise_earlier_fall_later():
    reps = [2] * 9 + [5] * 13 + [2] * 2
    base = ReplicaPlan.uniform(0, HOUR, reps)
    shifted = conserv_plan(base, 1800)
    assert shifted.replicas_at(9 * HOUR - 1801) == 2
    assert shifted.replicas_at(9 * HOUR - 1800) == 5  # 08:30
    assert shifted.replicas_at(22 * HOUR + 1799) == 5
    assert shifted.replicas_at(22 * HOUR + 1800) == 2  # 22:30


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 9), min_size=1, max_size=10), st.sampled_from([0, 300, 900, 1800, 5400]))
def test_conserv_dominance_against_window_oracle(reps, shift):
    base = ReplicaPlan.uniform(0, 1800, reps)
    shifted = conserv_plan(base, shift)
    assert shifted.start == base.start and shifted.end == base.end
    for t in range(0, base.end, 150):
        window = [base.replicas_at(x) for x in range(max(0, t - shift), min(base.end - 1, t + shift) + 1, 150)]
        window.append(base.replicas_at(min(base.end - 1, t + shift)))
        assert shifted.replicas_at(t) == max(window) >= base.replicas_at(t)
        assert (shifted.replicas_at(t) == base.replicas_at(t)) == (max(window) == base.replicas_at(t))


def test_conserv_rejects_negative_shift():
    with pytest.raises(ValidationError):
        conserv_plan(ReplicaPlan.uniform(0, HOUR, [1]), -1)


def test_plan_max_over():
    p = ReplicaPlan.uniform(0, HOUR, [1, 7, 3])
    assert plan_max_over(p, 0, HOUR - 1) == 1
    assert plan_max_over(p, HOUR - 60, HOUR) == 7
    assert plan_max_over(p, 2 * HOUR, 10 * HOUR) == 3


# -- Ali-Pro --------------------------------------------------------------------


def ali(trace, label=PERIODICAL, **kw):
    return ali_pro(perfect_forecast(trace), CAP, ProactiveParams(max_replicas=60), reactive_cfg(**kw), label)


def test_perfect_forecast_no_override():
    trace = day_trace()
    policy = ali(trace)
    ctrl = policy.start(trace, SIM)
    rep = simulate(trace, policy, SIM)
    assert all(r["new"] == r["planned"] and r["reason"] == "scheduled" for r in rep.decision_log)
    base = policy.base_plan()
    lead = SIM.pod_startup_delay
    expected = [plan_max_over(base, t, t + lead) for t in rep.ts.tolist()]
    assert rep.provisioned_replicas.tolist() == expected
    assert ctrl.overrides == 0


def test_unforecast_spike_triggers_override():
    clean = day_trace()
    spiky = day_trace(spikes=(Spike(14 * HOUR, 1800, 3.0),))
    policy = ali_pro(perfect_forecast(clean), CAP, ProactiveParams(max_replicas=60), reactive_cfg(), PERIODICAL)
    rep = simulate(spiky, policy, SIM)
    overrides = [r for r in rep.decision_log if r["new"] > r["planned"]]
    assert overrides
    first = min(r["ts"] for r in overrides)
    assert 14 * HOUR < first <= 14 * HOUR + SIM.control_interval + reactive_cfg().window_w


def test_ali_never_below_plan():
    clean = day_trace()
    noisy = day_trace(noise=0.2, seed=4)
    policy = ali_pro(perfect_forecast(clean), CAP, ProactiveParams(max_replicas=60), reactive_cfg(), PERIODICAL)
    rep = simulate(noisy, policy, SIM)
    base = policy.base_plan()
    planned = np.array([plan_max_over(base, t, t + SIM.pod_startup_delay) for t in rep.ts.tolist()])
    assert np.all(rep.provisioned_replicas >= planned)


def test_non_periodical_matches_reactive_alone():
    trace = day_trace(noise=0.1, seed=2)
    cfg = reactive_cfg()
    a = simulate(trace, ali(trace, NON_PERIODICAL), SIM)
    b = simulate(trace, reactive_only(cfg), SIM)
    assert a.decision_log == b.decision_log
    assert a.provisioned_replicas.tolist() == b.provisioned_replicas.tolist()


def test_ali_infeasible_names_policy_and_slot():
    trace = day_trace()
    policy = ali_pro(perfect_forecast(trace), CAP, ProactiveParams(max_replicas=3), reactive_cfg(), PERIODICAL)
    with pytest.raises(InfeasibleError) as info:
        policy.base_plan()
    assert info.value.policy == "ali_pro" and info.value.slot is not None
    assert "ali_pro" in str(info.value) and f"slot {info.value.slot}" in str(info.value)


def test_sigma_must_match_control_interval():
    trace = day_trace()
    with pytest.raises(ValidationError):
        simulate(trace, reactive_only(reactive_cfg(decision_shift_sigma=120)), SIM)


def test_over_pro_is_pointwise_max(diurnal_trace):
    day = diurnal_trace.slice_time(6 * DAY, 7 * DAY)
    train = diurnal_trace.slice_time(5 * DAY, 6 * DAY)
    peak = demand_to_replicas(CAP, float(diurnal_trace.qps.max()))
    fc = perfect_forecast(train)
    fc = Forecast(fc.timestamps + DAY, fc.values, fc.interval)
    a = ali_pro(fc, CAP, ProactiveParams(max_replicas=peak), reactive_cfg(c_max=peak), PERIODICAL)
    policies = [a, conserv_pro(a.base_plan(), 1800), kube_pro(0.6, c_max=peak), optimal_pro(CAP)]
    over = simulate(day, over_pro(peak), SIM)
    for pol in policies:
        rep = simulate(day, pol, SIM)
        assert np.all(rep.provisioned_replicas <= over.provisioned_replicas)
