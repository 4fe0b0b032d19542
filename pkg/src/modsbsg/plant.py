"""Discrete-time bulk-good plant: reservoirs joined by actuators.

The plant graph alternates actuators and reservoirs. Each decision cycle
(default 10 s) is integrated in 1 s sub-steps; actuators move material in
player order, excess at a full sink is spilled into that sink's overflow
counter, and the terminal reservoir is drained at the demand rate.
Fill-level evaluation works on fill fractions (fill / capacity).
"""
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import kernels
from .errors import (
    ActionCountMismatch,
    DegenerateSpread,
    MalformedTopology,
    MissingCoalition,
    NegativePower,
    UnknownPlantName,
)

PLANT_NAMES = ("bglp", "lsbglp_sequential", "lsbglp_serial_parallel")
MODES = {"continuous": kernels.CONTINUOUS, "duration": kernels.DURATION, "binary": kernels.BINARY}


@dataclass
class Reservoir:
    id: str
    capacity: float
    fill: float = 0.0
    overflow_accum: float = 0.0


@dataclass(frozen=True)
class ActuatorModel:
    id: str
    mode: str
    params: dict
    sources: tuple
    sinks: tuple
    name: str = ""

    def param_vector(self):
        p = self.params
        if self.mode == "continuous":
            dead = p.get("dead_zone")
            if dead is None:
                rng = p.get("control_range", {})
                dead = rng.get("min_on", 0.0) / rng["max"] if rng else 0.0
            return [dead, p["q_max"], p.get("kappa", 1.2), p["p0"], p["p1"], p["p2"]]
        if self.mode == "duration":
            return [p["d_max"], p["q_pump"], p["p_on"], 0.0, 0.0, 0.0]
        return [p["q_on"], p["p_on"], 0.0, 0.0, 0.0, 0.0]


@dataclass(frozen=True)
class EvalParams:
    """Flattened bivariate-normal fill evaluation plus role weights.

    Means and spreads are fill fractions; the defaults ``mu = 1/2`` and
    ``sigma = 1/3`` of capacity put the density peak (about 1.43) above
    ``theta_f`` so the plateau is always reached.
    """

    theta_f: float = 0.6
    mu_p: float = 0.5
    mu_s: float = 0.5
    sigma_p: float = 1.0 / 3.0
    sigma_s: float = 1.0 / 3.0
    rho: float = 0.0
    w_v: float = 1.5
    w_p: float = 0.1

    def __post_init__(self):
        if self.sigma_p <= 0 or self.sigma_s <= 0:
            raise DegenerateSpread("sigma_p and sigma_s must be > 0")
        if not abs(self.rho) < 1:
            raise DegenerateSpread("|rho| must be < 1")
        if self.theta_f <= 0:
            raise ValueError("theta_f must be > 0")
        if self.w_v < 0 or self.w_p < 0:
            raise ValueError("weights must be >= 0")

    def with_weights(self, w_v, w_p):
        return EvalParams(self.theta_f, self.mu_p, self.mu_s, self.sigma_p, self.sigma_s,
                          self.rho, w_v, w_p)

    def with_focus(self, fill_pct, power_pct):
        """Weights whose maximal contributions split as ``fill_pct : power_pct``.

        The fill term peaks at ``w_v * theta_f`` and the power term at ``w_p``,
        so (90, 10) with ``theta_f = 0.6`` gives the reference pair (1.5, 0.1).
        """
        total = fill_pct + power_pct
        if total <= 0 or fill_pct < 0 or power_pct < 0:
            raise ValueError("focus percentages must be non-negative and not both zero")
        return self.with_weights(fill_pct / total / self.theta_f, power_pct / total)


@dataclass
class Demand:
    reservoir: str
    rate: float = 0.15
    deficit_accum: float = 0.0

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("demand rate must be >= 0")


@dataclass
class PlantTopology:
    name: str
    reservoirs: list
    actuators: list
    demand_reservoir: int
    demand_rate: float
    supply_reservoir: int
    supply_fraction: float
    eval_params: EvalParams
    cycle_seconds: float = 10.0
    substep_seconds: float = 1.0
    initial_fractions: np.ndarray = None
    prior: list = field(default_factory=list)
    next: list = field(default_factory=list)

    def __post_init__(self):
        rid = {r["id"]: k for k, r in enumerate(self.reservoirs)}
        self.capacities = np.array([r["capacity"] for r in self.reservoirs], dtype=float)
        n = len(self.actuators)
        self.kind = np.array([MODES[a.mode] for a in self.actuators], dtype=np.int64)
        self.params = np.array([a.param_vector() for a in self.actuators], dtype=float).reshape(n, 6)
        self.prior = [tuple(rid[s] for s in a.sources) for a in self.actuators]
        self.next = [tuple(rid[s] for s in a.sinks) for a in self.actuators]
        self.src_ptr, self.src_idx = _csr(self.prior)
        self.snk_ptr, self.snk_idx = _csr(self.next)
        if self.initial_fractions is None:
            self.initial_fractions = np.full(len(self.reservoirs), 0.5)
        self.supply_level = (self.capacities[self.supply_reservoir] * self.supply_fraction
                             if self.supply_reservoir >= 0 else 0.0)

    @property
    def n_players(self):
        return len(self.actuators)

    @property
    def n_reservoirs(self):
        return len(self.reservoirs)

    def view_indices(self, player):
        """Reservoir indices of ``S_prior`` followed by ``S_next`` (no repeats)."""
        out = list(self.prior[player])
        out += [r for r in self.next[player] if r not in out]
        return out

    def view_dims(self, player):
        return len(self.view_indices(player))

    def initial_state(self):
        return PlantState(self.capacities * self.initial_fractions,
                          np.zeros(self.n_reservoirs))


def _csr(groups):
    ptr = np.zeros(len(groups) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(g) for g in groups])
    idx = np.array([r for g in groups for r in g], dtype=np.int64)
    return ptr, idx


@dataclass
class PlantState:
    fills: np.ndarray
    overflow_accum: np.ndarray
    deficit_accum: float = 0.0
    delivered_accum: float = 0.0
    injected_accum: float = 0.0
    elapsed: float = 0.0

    def copy(self):
        return PlantState(self.fills.copy(), self.overflow_accum.copy(), self.deficit_accum,
                          self.delivered_accum, self.injected_accum, self.elapsed)


@dataclass(frozen=True)
class StepReport:
    flows: np.ndarray          # liters moved by each actuator
    power: np.ndarray          # mean kW per actuator over the cycle
    injected: float
    delivered: float
    overflow: float
    deficit: float
    seconds: float

    @property
    def power_total(self):
        return float(self.power.sum())


# --------------------------------------------------------------------------
# construction


def plant_config_path(name):
    return resources.files("modsbsg") / "data" / "plants" / f"{name}.json"


def load_plant_config(spec):
    """Resolve a plant name, a JSON path or an already-parsed dict."""
    if isinstance(spec, dict):
        return spec
    spec = str(spec)
    if spec in PLANT_NAMES:
        return json.loads(plant_config_path(spec).read_text())
    path = Path(spec)
    if path.suffix == ".json" and path.exists():
        return json.loads(path.read_text())
    raise UnknownPlantName(f"unknown plant {spec!r}; expected one of {PLANT_NAMES} or a JSON file")


def build_plant(spec):
    """Build ``(PlantTopology, PlantState)`` from a name, path or config dict."""
    cfg = load_plant_config(spec)
    try:
        reservoirs = [dict(r) for r in cfg["reservoirs"]]
        raw_acts = [dict(a) for a in cfg["actuators"]]
    except (KeyError, TypeError) as exc:
        raise MalformedTopology(f"plant config missing {exc}") from exc
    res_ids = [r["id"] for r in reservoirs]
    act_ids = [a["id"] for a in raw_acts]
    if len(set(res_ids)) != len(res_ids) or len(set(act_ids)) != len(act_ids):
        raise MalformedTopology("duplicate node ids")
    if set(res_ids) & set(act_ids):
        raise MalformedTopology("node id used for both an actuator and a reservoir")
    for r in reservoirs:
        if not r.get("capacity", 0) > 0:
            raise MalformedTopology(f"reservoir {r['id']} needs a positive capacity")

    sources = {a: list(raw["sources"]) if "sources" in raw else [] for a, raw in zip(act_ids, raw_acts)}
    sinks = {a: list(raw["sinks"]) if "sinks" in raw else [] for a, raw in zip(act_ids, raw_acts)}
    rset, aset = set(res_ids), set(act_ids)
    for edge in cfg.get("edges", []):
        u, v = edge
        if u in aset and v in rset:
            sinks[u].append(v)
        elif u in rset and v in aset:
            sources[v].append(u)
        elif u in rset and v in rset:
            raise MalformedTopology(f"edge {u}->{v} joins two reservoirs")
        elif u in aset and v in aset:
            raise MalformedTopology(f"edge {u}->{v} joins two actuators")
        else:
            raise MalformedTopology(f"edge {u}->{v} references an unknown node")

    actuators = []
    for a, raw in zip(act_ids, raw_acts):
        for r in sources[a] + sinks[a]:
            if r not in rset:
                kind = "actuator" if r in aset else "unknown node"
                raise MalformedTopology(f"actuator {a} is wired to {kind} {r!r}")
        if not sources[a] or not sinks[a]:
            raise MalformedTopology(f"actuator {a} needs at least one source and one sink")
        if len(set(sources[a])) != len(sources[a]) or len(set(sinks[a])) != len(sinks[a]):
            raise MalformedTopology(f"actuator {a} has repeated edges")
        mode = raw.get("mode")
        if mode not in MODES:
            raise MalformedTopology(f"actuator {a} has unknown mode {mode!r}")
        actuators.append(ActuatorModel(a, mode, dict(raw.get("params", {})),
                                       tuple(sources[a]), tuple(sinks[a]), raw.get("name", a)))

    demand = cfg.get("demand", {})
    d_res = demand.get("reservoir")
    supply = cfg.get("supply", {})
    s_res = supply.get("reservoir")
    for label, r in (("demand", d_res), ("supply", s_res)):
        if r is not None and r not in rset:
            raise MalformedTopology(f"{label} reservoir {r!r} does not exist")
    ev = EvalParams(**cfg.get("eval", {}))
    topo = PlantTopology(
        name=cfg.get("name", "custom"),
        reservoirs=reservoirs,
        actuators=actuators,
        demand_reservoir=res_ids.index(d_res) if d_res is not None else -1,
        demand_rate=float(demand.get("rate", 0.15)),
        supply_reservoir=res_ids.index(s_res) if s_res is not None else -1,
        supply_fraction=float(supply.get("level_fraction", 0.5)),
        eval_params=ev,
        cycle_seconds=float(cfg.get("cycle_seconds", 10.0)),
        substep_seconds=float(cfg.get("substep_seconds", 1.0)),
        initial_fractions=np.array([r.get("initial_fraction", 0.5) for r in reservoirs], dtype=float),
    )
    return topo, topo.initial_state()


# --------------------------------------------------------------------------
# dynamics


def actuate(actuator, a, dt, t0=0.0, cycle_dt=None):
    """``(volume L, power kW)`` of one actuator over ``[t0, t0 + dt)``.

    Duration pumps run for ``a * d_max`` seconds from the start of the cycle,
    so sub-steps see the part of that on-window they overlap; their power is the
    cycle mean ``P_on * d / cycle_dt`` (``cycle_dt`` defaults to ``dt``).
    """
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"action {a} outside [0, 1]")
    kind = MODES[actuator.mode]
    par = np.asarray(actuator.param_vector(), dtype=float)
    cycle_dt = dt if cycle_dt is None else cycle_dt
    vol = kernels._actuator_volume(kind, par, float(a), float(t0), float(dt))
    pw = kernels._actuator_power(kind, par, float(a), float(cycle_dt))
    return float(vol), float(pw)


def step_plant(topology, state, actions, dt_cycle=None):
    """Advance ``state`` in place by one decision cycle."""
    actions = np.asarray(actions, dtype=float)
    if actions.shape != (topology.n_players,):
        raise ActionCountMismatch(f"expected {topology.n_players} actions, got {actions.shape}")
    if np.any(actions < 0.0) or np.any(actions > 1.0) or not np.all(np.isfinite(actions)):
        raise ValueError("actions must lie in [0, 1]")
    dt_cycle = topology.cycle_seconds if dt_cycle is None else float(dt_cycle)
    flows = np.zeros(topology.n_players)
    power = np.zeros(topology.n_players)
    injected, delivered, spilled, deficit = kernels.plant_cycle(
        state.fills, topology.capacities, state.overflow_accum, topology.kind, topology.params,
        topology.src_ptr, topology.src_idx, topology.snk_ptr, topology.snk_idx, actions,
        topology.supply_reservoir, topology.supply_level, topology.demand_reservoir,
        topology.demand_rate, dt_cycle, topology.substep_seconds, flows, power)
    state.deficit_accum += deficit
    state.delivered_accum += delivered
    state.injected_accum += injected
    state.elapsed += dt_cycle
    return StepReport(flows, power, injected, delivered, spilled, deficit, dt_cycle)


def actuator_powers(topology, actions):
    """Mean cycle power of every actuator; depends on the actions only."""
    return np.array([kernels._actuator_power(int(k), p, float(a), topology.cycle_seconds)
                     for k, p, a in zip(topology.kind, topology.params, actions)])


def actuator_powers_batch(topology, actions):
    """``actuator_powers`` for a batch of joint actions ``(N, n_players)``."""
    return kernels.actuator_power_batch(topology.kind, topology.params, actions,
                                        topology.cycle_seconds)


# --------------------------------------------------------------------------
# observation and evaluation


@dataclass(frozen=True)
class StateView:
    fills: np.ndarray          # normalized fills of S_prior then S_next
    layer: int = None          # encoded leader coalition (followers only)


def player_state_view(topology, state, player, coalition=None, encoder=None, follower=False):
    """Normalized fill view of ``player``; followers also get the layer selector."""
    if not 0 <= player < topology.n_players:
        raise IndexError(f"player {player} does not exist")
    idx = topology.view_indices(player)
    fills = state.fills[idx] / topology.capacities[idx]
    if not follower:
        return StateView(fills)
    if coalition is None:
        raise MissingCoalition(f"follower {player} view needs the leader coalition action")
    layer = encoder.encode(coalition) if encoder is not None else None
    return StateView(fills, layer)


def eval_volume(v_prior, v_next, params):
    """Flattened bivariate normal density, capped at ``theta_f``."""
    sp, ss, rho = params.sigma_p, params.sigma_s, params.rho
    if sp <= 0 or ss <= 0:
        raise DegenerateSpread("spreads must be > 0")
    zp = (v_prior - params.mu_p) / sp
    zs = (v_next - params.mu_s) / ss
    q = (zp * zp - 2 * rho * zp * zs + zs * zs) / (2 * (1 - rho * rho))
    dens = math.exp(-q) / (2 * math.pi * sp * ss * math.sqrt(1 - rho * rho))
    return dens if dens <= params.theta_f else params.theta_f


def eval_power(p):
    if p < 0:
        raise NegativePower(f"power {p} < 0")
    return 1.0 / (1.0 + p)


def eval_player(e_v, e_p, w_v, w_p):
    if w_v < 0 or w_p < 0:
        raise ValueError("weights must be >= 0")
    return w_v * e_v + w_p * e_p


class UtilityEvaluator:
    """Vectorized per-player utilities from fills and actuator powers."""

    def __init__(self, topology, player_params):
        self.topology = topology
        self.params = list(player_params)
        self.prior_ptr, self.prior_idx = _csr(topology.prior)
        self.next_ptr, self.next_idx = _csr(topology.next)
        cols = zip(*[(p.mu_p, p.mu_s, p.sigma_p, p.sigma_s, p.rho, p.theta_f, p.w_v, p.w_p)
                     for p in self.params])
        (self.mu_p, self.mu_s, self.sig_p, self.sig_s, self.rho, self.theta_f,
         self.w_v, self.w_p) = (np.array(c, dtype=float) for c in cols)

    def __call__(self, fills, power):
        frac = fills / self.topology.capacities
        out = np.empty(self.topology.n_players)
        return kernels.player_utilities(frac, self.prior_ptr, self.prior_idx, self.next_ptr,
                                        self.next_idx, self.mu_p, self.mu_s, self.sig_p,
                                        self.sig_s, self.rho, self.theta_f, self.w_v, self.w_p,
                                        np.asarray(power, dtype=float), out)

    def batch(self, fills, power):
        """Utilities for a batch: ``fills (N, n_reservoirs)``, ``power (N, n_players)``."""
        frac = np.asarray(fills, dtype=float) / self.topology.capacities
        power = np.asarray(power, dtype=float)
        out = np.empty(power.shape)
        return kernels._utilities_vec(frac, self.prior_ptr, self.prior_idx, self.next_ptr,
                                      self.next_idx, self.mu_p, self.mu_s, self.sig_p,
                                      self.sig_s, self.rho, self.theta_f, self.w_v, self.w_p,
                                      power, out)

    def reference(self, fills, power):
        """Scalar re-evaluation through ``eval_volume``/``eval_player``."""
        frac = fills / self.topology.capacities
        out = []
        for i, p in enumerate(self.params):
            vp = float(np.mean(frac[list(self.topology.prior[i])]))
            vs = float(np.mean(frac[list(self.topology.next[i])]))
            out.append(eval_player(eval_volume(vp, vs, p), eval_power(power[i]), p.w_v, p.w_p))
        return np.array(out)
