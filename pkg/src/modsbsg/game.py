"""Leader/follower game structure and the per-cycle learning loop."""
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyLeaderSet,
    IllConditioned,
    InsufficientSamples,
    LeaderSetCoversAllPlayers,
    NonFiniteUtility,
    UnknownPlayerId,
)
from . import kernels
from .learning import (
    ExplorationSchedule,
    OUNoise,
    PolyPotentialModel,
    curvature_degenerate,
    follower_multi_step,
    leader_update,
    make_scheduler,
    ols,
)
from .maps import AUX, OTHER, OWN, TARGET, GridSpec, LeaderActionEncoder, PerformanceMap, StackedPerformanceMap
from .plant import UtilityEvaluator, step_plant

MOD_SBSG = "mod_sbsg"
VANILLA_SBPG = "vanilla_sbpg"
MODES = (MOD_SBSG, VANILLA_SBPG)


class Role(enum.Enum):
    LEADER = "leader"
    FOLLOWER = "follower"
    PEER = "peer"          # vanilla SbPG: no hierarchy, single gradient step


@dataclass(frozen=True)
class CoalitionAction:
    members: tuple         # ((player id, action), ...) ordered by player id

    @classmethod
    def of(cls, ids, actions):
        return cls(tuple(sorted((int(i), float(a)) for i, a in zip(ids, actions))))

    @property
    def actions(self):
        return [a for _, a in self.members]

    @property
    def summary(self):
        if not self.members:
            return 0.0
        return math.fsum(self.actions) / len(self.members)


@dataclass
class LearningParams:
    alpha: float = 0.05
    resolution: int = 40
    gamma_map: float = 1e-3
    poly_degree: int = 2
    stack_capacity: int = 100
    global_capacity: int = 1000
    sigma0: float = 0.2
    sigma_decay: float = 0.99
    sigma_min: float = 0.01
    ou_theta: float = 0.15
    ou_mu: float = 0.0
    ou_dt: float = 1.0
    encoder: str = "cartesian"
    bins_per_leader: int = 5
    eps_hess: float = 1e-6
    cond_max: float = 1e8
    curvature_guard: str = "magnitude"


@dataclass
class GameConfig:
    mode: str = MOD_SBSG
    leader_ids: tuple = ()
    scheduler: dict = field(default_factory=lambda: {"kind": "gradual_reduction",
                                                     "theta0": 100.0, "decay": 0.999975})
    role_weights: dict = None      # {"leader": {"fill": 90, "power": 10}, "follower": {...}}
    learning: LearningParams = field(default_factory=LearningParams)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.learning.alpha <= 0:
            raise ValueError("learning rate must be > 0")
        self.leader_ids = tuple(sorted(int(i) for i in self.leader_ids))


def assign_roles(config, n_players):
    """Role of every player id ``0..n_players-1``."""
    leaders = set(config.leader_ids)
    bad = [i for i in leaders if not 0 <= i < n_players]
    if bad:
        raise UnknownPlayerId(f"leader ids {sorted(bad)} not in 0..{n_players - 1}")
    if config.mode == VANILLA_SBPG:
        return {i: Role.PEER for i in range(n_players)}
    if not leaders:
        raise EmptyLeaderSet("Mod-SbSG needs at least one leader")
    if len(leaders) >= n_players:
        raise LeaderSetCoversAllPlayers("Mod-SbSG needs at least one follower")
    return {i: Role.LEADER if i in leaders else Role.FOLLOWER for i in range(n_players)}


def compute_potentials(utilities, roles):
    """``(phi_L, phi_F)``: sums of leader and of non-leader utilities."""
    u = [float(x) for x in utilities]
    if len(u) != len(roles):
        raise ValueError("one utility per player required")
    if not all(math.isfinite(x) for x in u):
        raise NonFiniteUtility(f"non-finite utility in {u}")
    phi_l = math.fsum(x for i, x in enumerate(u) if roles[i] is Role.LEADER)
    phi_f = math.fsum(x for i, x in enumerate(u) if roles[i] is not Role.LEADER)
    return phi_l, phi_f


def role_eval_params(base, role_weights, role):
    """Evaluation params for ``role`` with the configured weights or focus split."""
    if not role_weights or role.value not in role_weights:
        return base
    w = role_weights[role.value]
    if "fill" in w:
        return base.with_focus(w["fill"], w["power"])
    return base.with_weights(w["w_v"], w["w_p"])


@dataclass
class CycleRecord:
    t: int
    views: list
    actions: np.ndarray
    utilities: np.ndarray
    phi_leader: float
    phi_follower: float
    leader_coalition: CoalitionAction
    follower_coalition: CoalitionAction
    layers: dict
    power_total_kw: float
    overflow_l_per_s: float
    demand_deficit_l_per_s: float
    follower_steps: int = 0

    @property
    def phi_total(self):
        return self.phi_leader + self.phi_follower


class Player:
    def __init__(self, pid, role, policy, seed, params):
        self.id = pid
        self.role = role
        self.policy = policy
        self.noise = OUNoise(params.ou_theta, params.ou_mu, params.sigma0, params.ou_dt,
                             rng=np.random.default_rng([seed, pid, 0]))
        self.explore_rng = np.random.default_rng([seed, pid, 1])
        self.betas = {}     # (layer, cell, target) -> last good coefficients

    def layer_map(self, layer):
        if isinstance(self.policy, StackedPerformanceMap):
            return self.policy.layers[layer]
        return self.policy

    def select(self, view, layer=None, training=True):
        pmap = self.layer_map(layer)
        if pmap.n_visited == 0:
            if training:
                return float(self.explore_rng.random())
            if layer is not None:
                j = self.policy.nearest_trained_layer(layer)
                if j is not None:
                    return self.policy.layers[j].interpolate(view)
            return 0.5
        return pmap.interpolate(view)


class GameOrchestrator:
    """Runs cycles of the leader/follower game on a plant topology."""

    def __init__(self, topology, config, seed=0):
        self.topology = topology
        self.config = config
        self.seed = int(seed)
        self.params = config.learning
        n = topology.n_players
        self.roles = assign_roles(config, n)
        self.leaders = [i for i in range(n) if self.roles[i] is Role.LEADER]
        self.followers = [i for i in range(n) if self.roles[i] is Role.FOLLOWER]
        self.peers = [i for i in range(n) if self.roles[i] is Role.PEER]
        self.vanilla = config.mode == VANILLA_SBPG
        p = self.params
        self.encoder = None
        if not self.vanilla:
            self.encoder = LeaderActionEncoder(len(self.leaders), p.bins_per_leader, p.encoder)
        map_kw = dict(gamma_map=p.gamma_map, stack_capacity=p.stack_capacity,
                      global_capacity=p.global_capacity)
        self.players = []
        for i in range(n):
            grid = GridSpec(topology.view_dims(i), p.resolution)
            if self.roles[i] is Role.FOLLOWER:
                policy = StackedPerformanceMap(grid, self.encoder, **map_kw)
            else:
                policy = PerformanceMap(grid, **map_kw)
            self.players.append(Player(i, self.roles[i], policy, self.seed, p))
        base = topology.eval_params
        self.player_params = [role_eval_params(base, config.role_weights, self.roles[i])
                              for i in range(n)]
        self.evaluate = UtilityEvaluator(topology, self.player_params)
        self.view_idx = [np.array(topology.view_indices(i)) for i in range(n)]
        self.scheduler = make_scheduler(config.scheduler)
        self.exploration = ExplorationSchedule(p.sigma0, p.sigma_decay, p.sigma_min)
        self._model = PolyPotentialModel(p.poly_degree, p.cond_max)
        self.training = True
        self.t = 0
        self.trace = None
        self._phase = "idle"

    # -- bookkeeping -------------------------------------------------------

    def begin_episode(self, episode):
        sigma = self.exploration.sigma(episode)
        for pl in self.players:
            pl.noise.sigma = sigma
            pl.noise.reset()

    def _mark(self, *event):
        if self.trace is not None:
            self.trace.append(event)

    def _advance(self, expected, new):
        assert self._phase in expected, f"cycle phase {self._phase!r}, expected one of {expected}"
        self._phase = new

    def noise_draws(self):
        return sum(pl.noise.draws for pl in self.players)

    # -- one cycle ----------------------------------------------------------

    def run_cycle(self, state):
        frac = state.fills / self.topology.capacities
        n = self.topology.n_players
        actions = np.zeros(n)
        views = [frac[ix] for ix in self.view_idx]
        layer = None
        training = self.training

        self._advance(("idle",), "leaders")
        for i in self.leaders + self.peers:
            actions[i] = self.players[i].select(views[i], None, training)
            self._mark("select", "leader" if i in self.leaders else "peer", i)
        a_lead = CoalitionAction.of(self.leaders, actions[self.leaders])

        self._advance(("leaders",), "followers")
        if self.followers:
            layer = self.encoder.encode(a_lead)
        for i in self.followers:
            actions[i] = self.players[i].select(views[i], layer, training)
            self._mark("select", "follower", i)
        a_foll = CoalitionAction.of(self.followers, actions[self.followers])

        self._advance(("followers",), "plant")
        report = step_plant(self.topology, state, actions)
        self._mark("plant_step")
        util = self.evaluate(state.fills, report.power)
        phi_l, phi_f = compute_potentials(util, self.roles)

        steps = 0
        self._advance(("plant",), "update")
        if training:
            if self.vanilla:
                self._update_peers(views, actions, phi_l + phi_f)
            else:
                steps = self._update_followers(views, actions, layer, a_lead, phi_l, phi_f)
                self._update_leaders(views, actions, a_foll, phi_l, phi_f)
                self.scheduler.tick()
            self.t += 1
        self._advance(("update",), "idle")

        secs = report.seconds
        layers = {i: layer for i in self.followers}
        return CycleRecord(self.t, views, actions, util, phi_l, phi_f, a_lead, a_foll, layers,
                           report.power_total, report.overflow / secs, -report.deficit / secs,
                           steps)

    # -- updates ------------------------------------------------------------

    def _fit(self, player, pmap, layer, q, x1_col, x2_col, y_cols):
        """Fit surrogates for cell ``q`` (falling back to the layer buffer).

        Returns coefficients ``(ncoef, len(y_cols))`` or the last good fit, or None.
        """
        m = self._model
        if pmap.cell_sample_count(q) >= m.n_coef:
            s = pmap.cell_samples(q)
        else:
            s = pmap.global_samples()
        key = (layer, q)
        if len(s) >= m.n_coef:
            try:
                beta, _ = ols(s[:, x1_col], s[:, x2_col], s[:, y_cols], m.e1, m.e2, m.cond_max)
                player.betas[key] = beta
                return beta
            except (IllConditioned, InsufficientSamples):
                pass
        return player.betas.get(key)

    def _update_followers(self, views, actions, layer, a_lead, phi_l, phi_f):
        self._mark("update", "followers")
        x_lead = a_lead.summary
        total = 0
        for i in self.followers:
            pl = self.players[i]
            pmap = pl.layer_map(layer)
            q = pmap.record_sample(views[i], actions[i], x_lead, phi_f, phi_l)
            a = pmap.best_action(q)
            beta = self._fit(pl, pmap, layer, q, OTHER, OWN, [TARGET])
            if beta is not None:
                self._model.beta = beta[:, 0]
                a, steps = follower_multi_step(self._model, x_lead, a, self.params.alpha,
                                               self.scheduler, self.scheduler.t)
                total += steps
            a = min(max(a + pl.noise.step(), 0.0), 1.0)
            pmap.set_action(q, a)
        return total

    def _update_leaders(self, views, actions, a_foll, phi_l, phi_f):
        self._mark("update", "leaders")
        x_foll = a_foll.summary
        p = self.params
        m = self._model
        for i in self.leaders:
            pl = self.players[i]
            pmap = pl.policy
            q = pmap.record_sample(views[i], actions[i], x_foll, phi_l, phi_f)
            a = pmap.best_action(q)
            beta = self._fit(pl, pmap, None, q, OWN, OTHER, [TARGET, AUX])
            omega = 0.0
            if beta is not None:
                # x1 = own action, x2 = follower summary for both surrogates
                _, l1, l2, _, _, _ = kernels.poly_eval(beta[:, 0].copy(), m.e1, m.e2, a, x_foll)
                _, _, _, _, f22, f12 = kernels.poly_eval(beta[:, 1].copy(), m.e1, m.e2, a, x_foll)
                degenerate = curvature_degenerate(f22, p.eps_hess, p.curvature_guard)
                omega = l1 if degenerate else l1 - f12 * (l2 / f22)
            pmap.set_action(q, leader_update(a, omega, p.alpha, pl.noise))

    def _update_peers(self, views, actions, phi_total):
        self._mark("update", "peers")
        n = len(actions)
        total = math.fsum(actions)
        p = self.params
        m = self._model
        for i in self.peers:
            pl = self.players[i]
            pmap = pl.policy
            others = (total - actions[i]) / (n - 1) if n > 1 else 0.0
            q = pmap.record_sample(views[i], actions[i], others, phi_total, 0.0)
            a = pmap.best_action(q)
            beta = self._fit(pl, pmap, None, q, OWN, OTHER, [TARGET])
            g = 0.0
            if beta is not None:
                g = kernels.poly_eval(beta[:, 0].copy(), m.e1, m.e2, a, others)[1]
            pmap.set_action(q, leader_update(a, g, p.alpha, pl.noise))

    # -- policy access --------------------------------------------------------

    def policy_layers(self, i):
        pol = self.players[i].policy
        return pol.layers if isinstance(pol, StackedPerformanceMap) else [pol]


def run_cycle(game, plant_state):
    return game.run_cycle(plant_state)
