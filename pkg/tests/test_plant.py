import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from modsbsg.errors import (
    ActionCountMismatch,
    DegenerateSpread,
    MalformedTopology,
    MissingCoalition,
    NegativePower,
    UnknownPlantName,
)
from modsbsg.maps import LeaderActionEncoder
from modsbsg.plant import (
    PLANT_NAMES,
    ActuatorModel,
    EvalParams,
    UtilityEvaluator,
    actuate,
    actuator_powers,
    actuator_powers_batch,
    build_plant,
    eval_player,
    eval_power,
    eval_volume,
    load_plant_config,
    player_state_view,
    step_plant,
)

CUSTOM = {
    "name": "two_stage",
    "reservoirs": [{"id": "r0", "capacity": 10.0}, {"id": "r1", "capacity": 1.0},
                   {"id": "r2", "capacity": 5.0}],
    "actuators": [
        {"id": "a0", "mode": "binary", "params": {"q_on": 0.05, "p_on": 0.1},
         "sources": ["r0"], "sinks": ["r1"]},
        {"id": "a1", "mode": "binary", "params": {"q_on": 0.01, "p_on": 0.1},
         "sources": ["r1"], "sinks": ["r2"]},
    ],
    "demand": {"reservoir": "r2", "rate": 0.0},
}


# -- construction -------------------------------------------------------------

def test_inventories():
    bglp, _ = build_plant("bglp")
    assert (bglp.n_players, bglp.n_reservoirs) == (5, 6)
    for name in ("lsbglp_sequential", "lsbglp_serial_parallel"):
        topo, state = build_plant(name)
        assert (topo.n_players, topo.n_reservoirs) == (14, 15)
        ids = [r["id"] for r in topo.reservoirs]
        assert topo.capacities[ids.index("big_silo_h")] == 30.0
        assert np.allclose(state.fills, topo.capacities / 2)


def test_lsbglp_vacuum_pump_b():
    topo, _ = build_plant("lsbglp_sequential")
    act = topo.actuators[1]
    assert act.name == "Vacuum Pump B" and act.mode == "duration"
    assert act.params["d_max"] == 9.5


def test_serial_parallel_buffer_fed_by_three():
    topo, _ = build_plant("lsbglp_serial_parallel")
    inflow = {}
    for sinks in topo.next:
        for r in sinks:
            inflow[r] = inflow.get(r, 0) + 1
    assert max(inflow.values()) == 3
    assert sorted(topo.view_dims(i) for i in range(14)).count(3) >= 1


def test_unknown_plant():
    with pytest.raises(UnknownPlantName):
        build_plant("nope")


@pytest.mark.parametrize("edges", [[["r0", "r1"]], [["a0", "a1"]], [["a0", "zz"]]])
def test_malformed_edges(edges):
    cfg = dict(CUSTOM, edges=edges)
    with pytest.raises(MalformedTopology):
        build_plant(cfg)


def test_actuator_without_sink():
    cfg = load_plant_config(CUSTOM)
    cfg = dict(cfg, actuators=[dict(cfg["actuators"][0], sinks=[]), cfg["actuators"][1]])
    with pytest.raises(MalformedTopology):
        build_plant(cfg)


def test_edges_list_wiring():
    cfg = dict(CUSTOM, actuators=[
        {"id": "a0", "mode": "binary", "params": {"q_on": 0.05, "p_on": 0.1}},
        {"id": "a1", "mode": "binary", "params": {"q_on": 0.01, "p_on": 0.1}}],
        edges=[["r0", "a0"], ["a0", "r1"], ["r1", "a1"], ["a1", "r2"]])
    topo, _ = build_plant(cfg)
    assert topo.prior == [(0,), (1,)] and topo.next == [(1,), (2,)]


# -- actuation ----------------------------------------------------------------

def _acts():
    return [a for name in PLANT_NAMES for a in build_plant(name)[0].actuators]


def test_off_means_nothing():
    for act in _acts():
        assert actuate(act, 0.0, 1.0) == (0.0, 0.0)


def test_binary_arithmetic():
    act = ActuatorModel("b", "binary", {"q_on": 0.1, "p_on": 0.25}, ("r0",), ("r1",))
    assert actuate(act, 0.7, 10.0) == pytest.approx((1.0, 0.25))
    assert actuate(act, 0.4, 10.0) == (0.0, 0.0)


def test_continuous_full_speed():
    act = build_plant("bglp")[0].actuators[0]
    p = act.params
    vol, pw = actuate(act, 1.0, 1.0)
    assert vol == pytest.approx(p["q_max"])
    assert pw == pytest.approx(p["p0"] + p["p1"] + p["p2"])
    dead = p["control_range"]["min_on"] / p["control_range"]["max"]
    assert actuate(act, dead * 0.99, 1.0) == (0.0, 0.0)


def test_duration_pump():
    act = build_plant("bglp")[0].actuators[1]
    vol, pw = actuate(act, 1.0, 10.0)
    assert vol == pytest.approx(0.4 * 9.5)
    assert pw == pytest.approx(0.55 * 9.5 / 10.0)
    # a sub-step sees only its overlap with the on-window [0, a * d_max)
    assert actuate(act, 0.5, 1.0, t0=4.0, cycle_dt=10.0)[0] == pytest.approx(0.4 * 0.75)
    assert actuate(act, 0.5, 1.0, t0=6.0, cycle_dt=10.0)[0] == 0.0
    assert eval_power(pw) == pytest.approx(1.0 / (1.0 + 0.5225))


@given(st.floats(0, 1), st.floats(0, 1))
def test_monotone_in_action(a, b):
    lo, hi = min(a, b), max(a, b)
    for act in build_plant("bglp")[0].actuators:
        v0, p0 = actuate(act, lo, 10.0)
        v1, p1 = actuate(act, hi, 10.0)
        assert v0 <= v1 + 1e-15 and p0 <= p1 + 1e-15 and v0 >= 0 and p0 >= 0


# -- stepping -----------------------------------------------------------------

def test_idle_plant():
    topo, state = build_plant("bglp")
    before = state.fills.copy()
    rep = step_plant(topo, state, np.zeros(5))
    assert rep.power_total == 0.0 and rep.overflow == 0.0
    changed = np.flatnonzero(state.fills != before)
    assert set(changed) <= {topo.demand_reservoir}
    assert state.fills[topo.demand_reservoir] == pytest.approx(before[-1] - 1.5)


def test_sink_headroom_spill():
    cfg = dict(CUSTOM, reservoirs=[dict(r) for r in CUSTOM["reservoirs"]])
    topo, state = build_plant(cfg)
    state.fills[:] = [5.0, 0.8, 1.0]
    # a0 attempts 0.05 L/s * 10 s = 0.5 L into r1 with 0.2 L headroom
    rep = step_plant(topo, state, np.array([1.0, 0.0]))
    assert state.fills[1] == pytest.approx(1.0)
    assert rep.overflow == pytest.approx(0.3)
    assert state.overflow_accum[1] == pytest.approx(0.3)


def test_action_count_mismatch():
    topo, state = build_plant("bglp")
    with pytest.raises(ActionCountMismatch):
        step_plant(topo, state, np.zeros(4))


@pytest.mark.parametrize("name", PLANT_NAMES)
def test_mass_balance_and_bounds(name):
    topo, state = build_plant(name)
    r = np.random.default_rng(7)
    total0 = state.fills.sum()
    inj = dlv = spill = 0.0
    prev_over = state.overflow_accum.copy()
    prev_def = state.deficit_accum
    for _ in range(2000):
        rep = step_plant(topo, state, r.random(topo.n_players))
        inj += rep.injected
        dlv += rep.delivered
        spill += rep.overflow
        assert np.all(state.fills >= 0) and np.all(state.fills <= topo.capacities)
        assert np.all(state.overflow_accum >= prev_over) and state.deficit_accum >= prev_def
        prev_over = state.overflow_accum.copy()
        prev_def = state.deficit_accum
    assert abs(state.fills.sum() - total0 - (inj - dlv - spill)) <= 1e-9


def test_power_is_sum_of_actuators():
    topo, state = build_plant("lsbglp_sequential")
    a = np.random.default_rng(1).random(topo.n_players)
    rep = step_plant(topo, state, a)
    assert rep.power_total == pytest.approx(actuator_powers(topo, a).sum(), abs=1e-12)


# -- views and evaluation -------------------------------------------------------

def test_views():
    topo, state = build_plant("bglp")
    state.fills[0] = 8.71
    v = player_state_view(topo, state, 0)
    assert v.fills[0] == pytest.approx(0.5) and len(v.fills) == 2
    enc = LeaderActionEncoder(2, 5)
    assert player_state_view(topo, state, 1, [0.1, 0.9], enc, follower=True).layer == 20
    with pytest.raises(MissingCoalition):
        player_state_view(topo, state, 1, follower=True)
    sp, sp_state = build_plant("lsbglp_serial_parallel")
    dims = [len(player_state_view(sp, sp_state, i).fills) for i in range(14)]
    assert 3 in dims


def test_eval_volume_cases():
    p = EvalParams()
    assert eval_volume(0.5, 0.5, p) == 0.6
    far = EvalParams(theta_f=10.0)
    assert eval_volume(0.5 + 5 / 3, 0.5 - 5 / 3, far) < 1e-4
    with pytest.raises(DegenerateSpread):
        EvalParams(sigma_p=0.0)
    with pytest.raises(DegenerateSpread):
        EvalParams(rho=1.0)


@given(st.floats(-1, 2), st.floats(-1, 2))
def test_eval_volume_factorizes(vp, vs):
    p = EvalParams(theta_f=1e9, sigma_p=0.3, sigma_s=0.4, mu_p=0.45, mu_s=0.6)
    uni = lambda x, m, s: math.exp(-0.5 * ((x - m) / s) ** 2) / (math.sqrt(2 * math.pi) * s)
    assert eval_volume(vp, vs, p) == pytest.approx(uni(vp, 0.45, 0.3) * uni(vs, 0.6, 0.4), rel=1e-12)


def test_eval_power_and_player():
    assert eval_power(0.0) == 1.0 and eval_power(1.0) == 0.5
    with pytest.raises(NegativePower):
        eval_power(-0.1)
    assert eval_player(0.6, 1.0, 1.5, 0.1) == pytest.approx(1.0)
    assert eval_player(0.3, 0.4, 0.0, 0.0) == 0.0


def test_focus_weights():
    base = EvalParams()
    w = base.with_focus(90, 10)
    assert (w.w_v, w.w_p) == pytest.approx((1.5, 0.1))
    half = base.with_focus(50, 50)
    u90 = eval_player(0.4, 0.7, w.w_v, w.w_p)
    u50 = eval_player(0.4, 0.7, half.w_v, half.w_p)
    assert u90 != u50
    # stated split holds for the maximal contributions
    assert half.w_v * half.theta_f == pytest.approx(half.w_p)


@pytest.mark.parametrize("name", PLANT_NAMES)
def test_vectorized_utilities_match_reference(name):
    topo, state = build_plant(name)
    r = np.random.default_rng(4)
    ev = UtilityEvaluator(topo, [topo.eval_params] * topo.n_players)
    for _ in range(50):
        fills = r.random(topo.n_reservoirs) * topo.capacities
        power = r.random(topo.n_players)
        u = ev(fills, power)
        assert np.allclose(u, ev.reference(fills, power), atol=1e-14)
        hi = topo.eval_params.w_v * topo.eval_params.theta_f + topo.eval_params.w_p
        assert np.all((u >= 0) & (u <= hi))


@pytest.mark.parametrize("name", PLANT_NAMES)
def test_batch_evaluation_matches_single_calls(name):
    topo, _ = build_plant(name)
    r = np.random.default_rng(5)
    ev = UtilityEvaluator(topo, [topo.eval_params] * topo.n_players)
    acts = r.random((200, topo.n_players))
    acts[:5] = 0.0
    acts[5:10] = 1.0
    fills = r.random((200, topo.n_reservoirs)) * topo.capacities
    P = actuator_powers_batch(topo, acts)
    U = ev.batch(fills, P)
    for k in range(200):
        assert np.array_equal(P[k], actuator_powers(topo, acts[k]))
        assert np.allclose(U[k], ev(fills[k], P[k]), rtol=0, atol=1e-15)


action_rows = st.lists(st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=14, max_size=14),
                       min_size=1, max_size=40)


@given(st.sampled_from(PLANT_NAMES), action_rows)
def test_ledger_bounds_and_monotone_accumulators(name, rows):
    topo, state = build_plant(name)
    start = math.fsum(state.fills)
    ledger = []
    prev_over, prev_def = state.overflow_accum.copy(), state.deficit_accum
    for row in rows:
        rep = step_plant(topo, state, np.array(row[: topo.n_players]))
        ledger += [rep.injected, -rep.delivered, -rep.overflow]
        assert np.all(state.fills >= 0) and np.all(state.fills <= topo.capacities)
        assert np.all(state.overflow_accum >= prev_over) and state.deficit_accum >= prev_def
        prev_over, prev_def = state.overflow_accum.copy(), state.deficit_accum
    assert abs(math.fsum(state.fills) - start - math.fsum(ledger)) <= 1e-9


@given(st.sampled_from(PLANT_NAMES), st.integers(0, 2**32 - 1))
def test_own_action_only_moves_own_utility(name, seed):
    topo, _ = build_plant(name)
    r = np.random.default_rng(seed)
    ev = UtilityEvaluator(topo, [topo.eval_params] * topo.n_players)
    fills = r.random(topo.n_reservoirs) * topo.capacities
    a = r.random(topo.n_players)
    i = int(r.integers(topo.n_players))
    b = a.copy()
    b[i] = r.random()
    u0, u1 = ev(fills, actuator_powers(topo, a)), ev(fills, actuator_powers(topo, b))
    others = np.arange(topo.n_players) != i
    assert np.array_equal(u0[others], u1[others])
    ep = topo.eval_params
    assert np.all((u1 > 0) & (u1 <= ep.w_v * ep.theta_f + ep.w_p))
