import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from victimtag.domain import FSMState, ScenarioConfig, generate_instance, make_instance, start_color
from victimtag.policies import ALL_POLICIES, Policy, PolicyKind
from victimtag.sim import (
    StepCapExceeded,
    WorldState,
    fsm_transition,
    mean_curve,
    run_episode,
    run_experiment,
    sample_stats,
)

IDLE, SELECT, MOVE, TAG = (int(s) for s in FSMState)


def test_single_responder_hand_trace():
    # select, five unit moves 5 -> 0, three tag ticks
    inst = make_instance([[5, 0]], tag_time=3)
    res = run_episode(inst, "nvp", seed=0)
    assert res.t_all == 9
    assert res.tagged_series.tolist() == [0] * 9 + [1]
    assert [int(s) for s in res.timeline[:, 0]] == [MOVE] * 6 + [TAG, TAG, IDLE]


def test_move_enters_tag_on_third_activation():
    inst = make_instance([[2.5, 0]])
    w = WorldState(inst)
    pol = Policy(PolicyKind.NVP)
    fsm_transition(w, 0, pol)
    assert w.state[0] == MOVE
    dists = []
    for _ in range(3):
        fsm_transition(w, 0, pol)
        dists.append(round(w.dist(0, 0), 6))
    assert dists[:2] == [1.5, 0.5]
    assert w.state[0] == TAG and w.timer[0] == 2


def test_tag_takes_tau_activations():
    inst = make_instance([[0.5, 0]], tag_time=4)
    w = WorldState(inst)
    pol = Policy(PolicyKind.NVP)
    fsm_transition(w, 0, pol)
    for k in range(4):
        assert not w.tagged[0]
        fsm_transition(w, 0, pol)
    assert w.tagged[0]
    assert w.color[0] == start_color(1.0)


def test_idle_with_everything_tagged_stays_idle():
    inst = make_instance([[1, 0]])
    w = WorldState(inst)
    w.tagged[:] = True
    fsm_transition(w, 0, Policy(PolicyKind.NVP))
    assert w.state[0] == IDLE


def test_no_victims():
    inst = make_instance(np.zeros((0, 2)), n=2)
    assert run_episode(inst, "lnvp").t_all == 0


@pytest.mark.parametrize("policy", [p.value for p in ALL_POLICIES])
def test_episode_is_deterministic(policy):
    inst = generate_instance(ScenarioConfig(5, 12, 60, 40), 3)
    assert run_episode(inst, policy, 11) == run_episode(inst, policy, 11)


def test_step_cap():
    inst = generate_instance(ScenarioConfig(1, 5), 0)
    with pytest.raises(StepCapExceeded):
        run_episode(inst, "nvp", step_cap=3)


@given(st.integers(0, 2**31), st.sampled_from([p.value for p in ALL_POLICIES]), st.integers(1, 6), st.integers(1, 15))
def test_episode_invariants(seed, policy, n, m):
    inst = generate_instance(ScenarioConfig(n, m, 40, 25), seed)
    res = run_episode(inst, policy, seed)
    series = res.tagged_series
    assert series[-1] == m and np.all(np.diff(series) >= 0) and np.all(np.diff(series) <= n)
    assert len(res.timeline) == res.t_all
    assert sorted(v for r in res.routes for v in r) == list(range(m))
    assert res.tags_per_responder.sum() == m
    assert np.all(res.colors > 0)
    for i, route in enumerate(res.routes):
        assert all(res.tagged_by[k] == i for k in route)


@given(st.integers(0, 2**31), st.sampled_from(["lnvp", "lcvp", "rvp"]))
def test_displacement_and_claims_per_step(seed, policy):
    from victimtag.domain import RngStream
    from victimtag.sim import step

    inst = generate_instance(ScenarioConfig(4, 10, 40, 25), seed)
    pol = Policy(PolicyKind(policy)).for_instance(inst)
    w = WorldState(inst)
    rng = RngStream(seed)
    while not w.done:
        before = w.pos.copy()
        step(w, pol, rng)
        assert np.all(np.hypot(*(w.pos - before).T) <= inst.speed + 1e-12)
        claimed = w.claim[w.claim >= 0]
        assert len(claimed) == len(set(claimed.tolist()))
        assert np.all(w.claimant[claimed] == np.flatnonzero(w.claim >= 0))
        assert not np.any(w.tagged[claimed])


def test_preemptions_satisfy_condition():
    inst = generate_instance(ScenarioConfig(20, 100), 5)
    w_res = run_episode(inst, "lnvp", 5)
    assert w_res.preemptions > 0


def test_experiment_single_iteration_has_zero_std():
    agg = run_experiment(ScenarioConfig(2, 3, 20, 20), "nvp", 1)
    assert agg.std == 0.0 and len(agg.t_all) == 1


def test_experiment_is_reproducible():
    cfg = ScenarioConfig(3, 6, 30, 20)
    a = run_experiment(cfg, "rvp", 5, seed_base=10)
    b = run_experiment(cfg, "rvp", seeds=a.seeds)
    assert np.array_equal(a.t_all, b.t_all) and np.array_equal(a.mean_curve, b.mean_curve)


@pytest.mark.parametrize("values, mean, std", [([10, 10, 10], 10, 0), ([1, 2, 3], 2, 1), ([7], 7, 0)])
def test_sample_stats(values, mean, std):
    assert sample_stats(values) == pytest.approx((mean, std))


def test_mean_curve_pads_with_final_value():
    assert mean_curve([np.array([0, 1, 2]), np.array([0, 2])]).tolist() == [0, 1.5, 2]


def test_csv_and_json_outputs(tmp_path):
    inst = generate_instance(ScenarioConfig(2, 4, 20, 20), 1)
    res = run_episode(inst, "lcvp", 1)
    res.write_series_csv(tmp_path / "s.csv")
    res.write_timeline_csv(tmp_path / "t.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "t,tagged_count" and len(lines) == res.t_all + 2
    tl = (tmp_path / "t.csv").read_text().splitlines()
    assert tl[0] == "t,responder_id,psi" and len(tl) == 1 + 2 * res.t_all
    agg = run_experiment(ScenarioConfig(2, 4, 20, 20), "lcvp", 3)
    agg.write_json(tmp_path / "a.json")
    doc = json.loads((tmp_path / "a.json").read_text())
    assert doc["mean"] == pytest.approx(np.mean(doc["t_all"]))
