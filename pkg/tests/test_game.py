import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from modsbsg.errors import EmptyLeaderSet, LeaderSetCoversAllPlayers, NonFiniteUtility, UnknownPlayerId
from modsbsg.game import (
    MOD_SBSG,
    VANILLA_SBPG,
    CoalitionAction,
    GameConfig,
    GameOrchestrator,
    LearningParams,
    Role,
    assign_roles,
    compute_potentials,
    run_cycle,
)
from modsbsg.maps import PerformanceMap, StackedPerformanceMap
from modsbsg.plant import PLANT_NAMES, UtilityEvaluator, actuator_powers, build_plant


def test_roles_bglp():
    roles = assign_roles(GameConfig(leader_ids=(2, 3)), 5)
    assert [roles[i] for i in range(5)] == [Role.FOLLOWER, Role.FOLLOWER, Role.LEADER,
                                           Role.LEADER, Role.FOLLOWER]


def test_roles_lsbglp():
    roles = assign_roles(GameConfig(leader_ids=(1, 2, 5, 10)), 14)
    assert sum(r is Role.LEADER for r in roles.values()) == 4
    assert sum(r is Role.FOLLOWER for r in roles.values()) == 10


def test_role_errors():
    with pytest.raises(EmptyLeaderSet):
        assign_roles(GameConfig(), 5)
    with pytest.raises(LeaderSetCoversAllPlayers):
        assign_roles(GameConfig(leader_ids=range(5)), 5)
    with pytest.raises(UnknownPlayerId):
        assign_roles(GameConfig(leader_ids=(7,)), 5)
    with pytest.raises(ValueError):
        GameConfig(learning=LearningParams(alpha=0.0))


def test_vanilla_roles_are_peers():
    roles = assign_roles(GameConfig(mode=VANILLA_SBPG), 5)
    assert set(roles.values()) == {Role.PEER}


def test_potentials():
    roles = {0: Role.LEADER, 1: Role.FOLLOWER, 2: Role.FOLLOWER}
    phi_l, phi_f = compute_potentials([0.4, 0.1, 0.2], roles)
    assert phi_l == pytest.approx(0.4) and phi_f == pytest.approx(0.3)
    assert compute_potentials([0, 0, 0], roles) == (0.0, 0.0)
    with pytest.raises(NonFiniteUtility):
        compute_potentials([0.1, math.nan, 0.0], roles)


def test_coalition_summary():
    c = CoalitionAction.of([3, 2], [0.6, 0.2])
    assert c.members == ((2, 0.2), (3, 0.6))
    assert c.summary == pytest.approx(0.4)


@given(st.lists(st.floats(0, 1), min_size=5, max_size=5), st.sets(st.integers(0, 4), min_size=1, max_size=4))
def test_role_partition(utils, leaders):
    roles = assign_roles(GameConfig(leader_ids=tuple(leaders)), 5)
    phi_l, phi_f = compute_potentials(utils, roles)
    assert phi_l + phi_f == pytest.approx(math.fsum(utils), abs=1e-12)


@pytest.mark.parametrize("name", PLANT_NAMES)
def test_exact_potential_identity(name):
    topo, _ = build_plant(name)
    n = topo.n_players
    roles = assign_roles(GameConfig(leader_ids=(1, 2)), n)
    ev = UtilityEvaluator(topo, [topo.eval_params] * n)
    r = np.random.default_rng(0)
    for _ in range(500):
        fills = r.random(topo.n_reservoirs) * topo.capacities
        a = r.random(n)
        i = int(r.integers(n))
        b = a.copy()
        b[i] = r.random()
        u0 = ev(fills, actuator_powers(topo, a))
        u1 = ev(fills, actuator_powers(topo, b))
        for phi0, phi1, role in zip(compute_potentials(u0, roles), compute_potentials(u1, roles),
                                    (Role.LEADER, Role.FOLLOWER)):
            if roles[i] is role:
                assert abs((phi1 - phi0) - (u1[i] - u0[i])) <= 1e-12
        others = [j for j in range(n) if j != i]
        assert np.array_equal(u0[others], u1[others])


def test_call_order_with_stub_policies():
    topo, state = build_plant("bglp")
    game = GameOrchestrator(topo, GameConfig(leader_ids=(2, 3)), seed=0)
    trace = []
    game.trace = trace
    for pl in game.players:
        pl.select = (lambda tag, pid: (lambda view, layer=None, training=True:
                                       trace.append(("policy", tag, pid)) or 0.5))(pl.role.value, pl.id)
    rec = run_cycle(game, state)
    kinds = [e for e in trace if e[0] == "policy"]
    leaders = [k for k, e in enumerate(kinds) if e[1] == "leader"]
    followers = [k for k, e in enumerate(kinds) if e[1] == "follower"]
    assert max(leaders) < min(followers)
    plant_at = trace.index(("plant_step",))
    last_select = max(k for k, e in enumerate(trace) if e[0] in ("policy", "select"))
    assert last_select < plant_at
    upd = [e for e in trace if e[0] == "update"]
    assert upd == [("update", "followers"), ("update", "leaders")]
    assert trace.index(("update", "followers")) > plant_at
    assert rec.leader_coalition.summary == pytest.approx(0.5)


def test_vanilla_cycle_uses_flat_maps():
    topo, state = build_plant("bglp")
    game = GameOrchestrator(topo, GameConfig(mode=VANILLA_SBPG), seed=0)
    assert all(isinstance(p.policy, PerformanceMap) for p in game.players)
    game.trace = []
    rec = game.run_cycle(state)
    assert rec.layers == {}
    assert [e for e in game.trace if e[0] == "update"] == [("update", "peers")]
    assert rec.follower_steps == 0


def test_cycle_record_invariants():
    topo, state = build_plant("bglp")
    game = GameOrchestrator(topo, GameConfig(leader_ids=(2, 3)), seed=3)
    assert isinstance(game.players[0].policy, StackedPerformanceMap)
    for _ in range(50):
        rec = game.run_cycle(state)
        assert rec.phi_leader == pytest.approx(rec.utilities[2] + rec.utilities[3], abs=1e-12)
        assert rec.phi_total == pytest.approx(rec.utilities.sum(), abs=1e-12)
        assert [a for _, a in rec.leader_coalition.members] == list(rec.actions[[2, 3]])
        assert len(set(rec.layers.values())) == 1
        assert np.all((rec.actions >= 0) & (rec.actions <= 1))


def _records(seed):
    topo, state = build_plant("bglp")
    game = GameOrchestrator(topo, GameConfig(leader_ids=(2, 3)), seed=seed)
    game.begin_episode(0)
    return [(r.actions.tobytes(), r.utilities.tobytes()) for r in (game.run_cycle(state) for _ in range(200))]


def test_determinism():
    assert _records(5) == _records(5)
    assert _records(5) != _records(6)


def test_frozen_policy_draws_no_noise():
    topo, state = build_plant("bglp")
    game = GameOrchestrator(topo, GameConfig(leader_ids=(2, 3)), seed=1)
    for _ in range(100):
        game.run_cycle(state)
    game.training = False
    draws = game.noise_draws()
    snapshot = [list(layer.rows()) for i in range(5) for layer in game.policy_layers(i)]
    for _ in range(100):
        game.run_cycle(state)
    assert game.noise_draws() == draws
    assert snapshot == [list(layer.rows()) for i in range(5) for layer in game.policy_layers(i)]


def test_mode_validation():
    with pytest.raises(ValueError):
        GameConfig(mode="other")
    assert GameConfig(leader_ids=[3, 2]).leader_ids == (2, 3)
    assert MOD_SBSG == GameConfig().mode
