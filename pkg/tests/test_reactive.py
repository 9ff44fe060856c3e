import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capprov.errors import ValidationError
from capprov.reactive import ReactiveConfig, ReactiveState, Reason, Rounding, step

NOW = 10_000


def cfg(**kw):
    base = dict(threshold_tstar=100.0, c_min=1, c_max=8, window_w=300, safety_sp=0.1, cooldown_ct=600, statistic="max")
    base.update(kw)
    return ReactiveConfig(**base)


def one(rt):
    return [(NOW, rt)]


# Hand-traced scenarios. Columns: id, config overrides, C_t, last scale-down,
# samples, expected (new replicas, reason, rounded target, last scale-down after).
SCENARIOS = [
    # rt = t*: n_r = 1, |0| <= 0.1
    ("at_target", {}, 4, None, one(100.0), (4, Reason.WITHIN_SAFETY_BAND, 4, None)),
    # n_r = 1.1 sits on the band edge, inclusive
    ("band_upper_edge", {}, 4, None, one(110.0), (4, Reason.WITHIN_SAFETY_BAND, 4, None)),
    # n_r = 0.9, lower edge, inclusive
    ("band_lower_edge", {}, 4, None, one(90.0), (4, Reason.WITHIN_SAFETY_BAND, 4, None)),
    # n_r = 1.5, 1.5 * 4 = 6, inside (1, 8)
    ("scale_up", {}, 4, None, one(150.0), (6, Reason.SCALED_UP, 6, None)),
    # n_r = 0.5, target 2, 120 s since last decrease < 600 s
    ("cooldown_blocks", {}, 4, NOW - 120, one(50.0), (4, Reason.COOLDOWN_BLOCKED, 2, NOW - 120)),
    # same but 600 s elapsed: 600 < 600 is false, decrease commits
    ("cooldown_expired", {}, 4, NOW - 600, one(50.0), (2, Reason.SCALED_DOWN, 2, NOW)),
    # no prior decrease at all
    ("first_scale_down", {}, 4, None, one(50.0), (2, Reason.SCALED_DOWN, 2, NOW)),
    # n_r = 10, 40 >= c_max
    ("clamp_max", {}, 4, None, one(1000.0), (8, Reason.CLAMPED_MAX, 40, None)),
    # n_r = 2, 8 == c_max counts as clamped (interior is strict)
    ("clamp_max_boundary", {}, 4, None, one(200.0), (8, Reason.CLAMPED_MAX, 8, None)),
    # n_r = 0.3, 0.9 rounds to 1 == c_min
    ("clamp_min", {}, 3, None, one(30.0), (1, Reason.CLAMPED_MIN, 1, NOW)),
    # a clamped decrease is still subject to the cooldown
    ("clamp_min_in_cooldown", {}, 3, NOW - 100, one(30.0), (3, Reason.COOLDOWN_BLOCKED, 1, NOW - 100)),
    # increases ignore the cooldown
    ("increase_during_cooldown", {}, 4, NOW - 10, one(150.0), (6, Reason.SCALED_UP, 6, NOW - 10)),
    # 1.25 * 2 = 2.5 rounds half up to 3
    ("round_half_up_rising", {}, 2, None, one(125.0), (3, Reason.SCALED_UP, 3, None)),
    # 0.625 * 4 = 2.5 rounds up to 3
    ("round_half_up_falling", {}, 4, None, one(62.5), (3, Reason.SCALED_DOWN, 3, NOW)),
    # 1.2 * 2 = 2.4 rounds to 2: outside the band yet no change
    ("rounds_to_current", {}, 2, None, one(120.0), (2, Reason.UNCHANGED, 2, None)),
    # ceiling rounding: 1.2 * 2 = 2.4 -> 3
    ("ceil_rounding", {"rounding": Rounding.CEIL}, 2, None, one(120.0), (3, Reason.SCALED_UP, 3, None)),
    # mean of 100 and 200 is 150
    ("mean_statistic", {"statistic": "mean"}, 4, None, [(NOW - 60, 100.0), (NOW, 200.0)], (6, Reason.SCALED_UP, 6, None)),
    # p95 of ten 100s and ten 400s is 400 (rank 18.05 lies among the 400s)
    ("p95_statistic", {"statistic": "p95"}, 1, None,
     [(NOW - 19 + i, 100.0 if i < 10 else 400.0) for i in range(20)], (4, Reason.SCALED_UP, 4, None)),
    # sp = 0: only an exact hit stays put
    ("zero_band_exact", {"safety_sp": 0.0}, 5, None, one(100.0), (5, Reason.WITHIN_SAFETY_BAND, 5, None)),
    # sp = 0 with a 2% excess: 1.02 * 5 = 5.1 -> 5
    ("zero_band_small_excess", {"safety_sp": 0.0}, 5, None, one(102.0), (5, Reason.UNCHANGED, 5, None)),
]


@pytest.mark.parametrize("name, overrides, c_t, last_down, samples, expected", SCENARIOS, ids=[s[0] for s in SCENARIOS])
def test_hand_traced_table(name, overrides, c_t, last_down, samples, expected):
    state = ReactiveState(c_t, cfg(**overrides), last_down)
    decision, new_state = step(state, samples, NOW)
    new, reason, target, after = expected
    assert (decision.new_replicas, decision.reason, decision.target) == (new, reason, target)
    assert new_state.current_replicas == new
    assert new_state.last_scale_down_time == after
    assert decision.old_replicas == c_t
    assert decision.effective_at == NOW + 60


def test_table_covers_required_cases():
    reasons = {s[5][1] for s in SCENARIOS}
    assert len(SCENARIOS) >= 12
    assert {Reason.WITHIN_SAFETY_BAND, Reason.CLAMPED_MIN, Reason.CLAMPED_MAX, Reason.COOLDOWN_BLOCKED} <= reasons


def test_empty_window_rejected():
    with pytest.raises(ValidationError):
        step(ReactiveState(2, cfg()), [], NOW)


def test_samples_outside_window_rejected():
    with pytest.raises(ValidationError):
        step(ReactiveState(2, cfg()), [(NOW - 301, 1.0)], NOW)
    with pytest.raises(ValidationError):
        step(ReactiveState(2, cfg()), [(NOW + 1, 1.0)], NOW)


def test_config_validation():
    with pytest.raises(ValidationError):
        cfg(threshold_tstar=0.0)
    with pytest.raises(ValidationError):
        cfg(c_min=5, c_max=4)
    with pytest.raises(ValidationError):
        cfg(safety_sp=1.5)
    with pytest.raises(ValidationError):
        ReactiveState(9, cfg())


def test_log_record_format():
    decision, _ = step(ReactiveState(4, cfg()), one(150.0), NOW)
    rec = json.loads(decision.log_line("svc"))
    assert rec == {"ts": NOW, "app_id": "svc", "old": 4, "new": 6, "reason": "scaled_up", "metric": 150.0, "nr": 1.5}


# -- properties ------------------------------------------------------------------

metric = st.floats(0.0, 1e4, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 20), st.floats(0.0, 1.0), st.floats(-1.0, 1.0), st.floats(1.0, 1e3))
def test_safety_band_neutral(c_t, sp, frac, tstar):
    config = ReactiveConfig(tstar, 1, 20, 300, sp, 600, "max")
    rt = tstar * (1 + frac * sp)
    decision, state = step(ReactiveState(c_t, config), [(NOW, rt)], NOW)
    assert decision.new_replicas == c_t == state.current_replicas


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 20), st.lists(metric, min_size=1, max_size=5), st.integers(-20, 20), st.sampled_from(list(Rounding)))
def test_homogeneity(c_t, values, exp, rounding):
    k = 2.0 ** exp
    samples = [(NOW - i, v) for i, v in enumerate(values)]
    a_cfg = ReactiveConfig(50.0, 1, 20, 300, 0.1, 600, "p95", rounding=rounding)
    b_cfg = ReactiveConfig(50.0 * k, 1, 20, 300, 0.1, 600, "p95", rounding=rounding)
    da, _ = step(ReactiveState(c_t, a_cfg), samples, NOW)
    db, _ = step(ReactiveState(c_t, b_cfg), [(t, v * k) for t, v in samples], NOW)
    assert (da.new_replicas, da.reason, da.target) == (db.new_replicas, db.reason, db.target)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 20), st.lists(metric, min_size=1, max_size=5), st.one_of(st.none(), st.integers(0, NOW)))
def test_step_is_pure(c_t, values, last_down):
    state = ReactiveState(c_t, cfg(c_max=20), last_down)
    samples = [(NOW, v) for v in values]
    assert step(state, samples, NOW) == step(state, samples, NOW)


def test_randomized_sequence_safety():
    import numpy as np

    rng = np.random.default_rng(99)
    config = ReactiveConfig(0.7, 2, 15, 120, 0.1, 300, "p95")
    state = ReactiveState(5, config)
    last_committed_down = None
    now = 0
    for _ in range(10_000):
        now += int(rng.integers(1, 90))
        samples = [(now - int(rng.integers(0, 121)), float(rng.gamma(2.0, 0.4))) for _ in range(int(rng.integers(1, 6)))]
        decision, new = step(state, samples, now)
        assert config.c_min <= decision.new_replicas <= config.c_max
        if abs(decision.ratio_nr - 1) <= config.safety_sp:
            assert decision.new_replicas == state.current_replicas
        if decision.new_replicas < state.current_replicas:
            if last_committed_down is not None:
                assert now - last_committed_down >= config.cooldown_ct
            last_committed_down = now
        if decision.target > state.current_replicas and abs(decision.ratio_nr - 1) > config.safety_sp:
            # increases are never held back by the cooldown
            assert decision.reason is not Reason.COOLDOWN_BLOCKED
            assert decision.new_replicas == min(decision.target, config.c_max)
        state = new
