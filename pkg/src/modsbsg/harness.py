"""Experiment orchestration: configs, seeded train/test runs, reports, sweeps.

Run directory layout::

    config.json          fully populated config (re-loadable)
    cycles.csv           per-cycle log (see ``cycle_columns``)
    episodes.csv         per-episode means
    report.json          phase-level means and protocol fingerprint
    checkpoint/          train only: one map CSV per player plus manifest.json

The test phase writes the same files with a ``test_`` prefix.
"""
import copy
import csv
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MissingCheckpoint, MissingPlant, ParseError, ProtocolMismatch, SchemaViolation
from .game import MODES, GameConfig, GameOrchestrator, LearningParams
from .learning import SCHEDULERS
from .maps import read_map_csv, write_map_csv
from .plant import build_plant

TRAIN, TEST = "train", "test"
CYCLE_LOG_CHOICES = ("all", "test", "none")
METRICS = ("demand_deficit_l_per_s", "power_total_kw", "overflow_l_per_s", "phi_total")
EPISODE_COLUMNS = ("episode", "phase", "cycles", "demand_deficit_l_per_s", "power_total_kw",
                   "overflow_l_per_s", "phi_L", "phi_F", "phi_total", "follower_steps")
SWEEP_AXES = ("leader_set", "scheduler", "focus_weights")

_TOP_KEYS = {"plant", "mode", "leaders", "scheduler", "role_weights", "learning",
             "train_episodes", "cycles_per_episode", "test_episodes", "seed", "output_dir",
             "cycle_log", "sweep"}


@dataclass
class ExperimentConfig:
    plant: object                       # shipped plant name, JSON path or inline dict
    game: GameConfig
    train_episodes: int = 200
    cycles_per_episode: int = 1000
    test_episodes: int = 50
    seed: int = 0
    output_dir: str = "runs/default"
    cycle_log: str = "all"
    sweep: dict = field(default_factory=dict)

    def to_dict(self):
        g = self.game
        return {
            "plant": self.plant,
            "mode": g.mode,
            "leaders": list(g.leader_ids),
            "scheduler": dict(g.scheduler),
            "role_weights": copy.deepcopy(g.role_weights),
            "learning": dataclasses.asdict(g.learning),
            "train_episodes": self.train_episodes,
            "cycles_per_episode": self.cycles_per_episode,
            "test_episodes": self.test_episodes,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "cycle_log": self.cycle_log,
            "sweep": copy.deepcopy(self.sweep),
        }

    def topology(self):
        return build_plant(self.plant)[0]


@dataclass
class RunArtifacts:
    out_dir: Path
    phase: str
    report: dict
    cycles_csv: Path = None
    episodes_csv: Path = None
    checkpoint: Path = None


# --------------------------------------------------------------------------
# config ingestion


def _expect(cond, path, message):
    if not cond:
        raise SchemaViolation(path, message)


def _int_field(raw, key, default, minimum=1):
    v = raw.get(key, default)
    _expect(isinstance(v, int) and not isinstance(v, bool), key, "must be an integer")
    _expect(v >= minimum, key, f"must be >= {minimum}")
    return v


def _check_scheduler(spec, path="scheduler"):
    _expect(isinstance(spec, dict), path, "must be an object")
    kind = spec.get("kind")
    _expect(kind in SCHEDULERS, f"{path}.kind", f"must be one of {sorted(SCHEDULERS)}")
    allowed = {f.name for f in dataclasses.fields(SCHEDULERS[kind])} - {"t"}
    for k, v in spec.items():
        if k == "kind":
            continue
        _expect(k in allowed, f"{path}.{k}", f"unknown parameter for {kind}")
        _expect(isinstance(v, (int, float)) and not isinstance(v, bool), f"{path}.{k}",
                "must be a number")
    try:
        SCHEDULERS[kind](**{k: v for k, v in spec.items() if k != "kind"})
    except ValueError as exc:
        raise SchemaViolation(path, str(exc)) from exc
    return dict(spec)


def _check_role_weights(rw, path="role_weights"):
    if rw is None:
        return None
    _expect(isinstance(rw, dict), path, "must be an object")
    for role, w in rw.items():
        p = f"{path}.{role}"
        _expect(role in ("leader", "follower", "peer"), p, "role must be leader, follower or peer")
        _expect(isinstance(w, dict), p, "must be an object")
        keys = set(w)
        _expect(keys in ({"fill", "power"}, {"w_v", "w_p"}), p,
                "give either {fill, power} percentages or {w_v, w_p} weights")
        for k, v in w.items():
            _expect(isinstance(v, (int, float)) and v >= 0, f"{p}.{k}", "must be a number >= 0")
        if "fill" in keys:
            _expect(w["fill"] + w["power"] > 0, p, "focus percentages cannot both be zero")
    return copy.deepcopy(rw)


def _check_learning(raw, path="learning"):
    _expect(isinstance(raw, dict), path, "must be an object")
    known = {f.name: f for f in dataclasses.fields(LearningParams)}
    for k in raw:
        _expect(k in known, f"{path}.{k}", "unknown learning parameter")
    params = LearningParams(**raw)
    for k, default in dataclasses.asdict(LearningParams()).items():
        v = getattr(params, k)
        if isinstance(default, str):
            _expect(isinstance(v, str), f"{path}.{k}", "must be a string")
        else:
            _expect(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v),
                    f"{path}.{k}", "must be a finite number")
    _expect(params.alpha > 0, f"{path}.alpha", "must be > 0")
    _expect(isinstance(params.resolution, int) and params.resolution >= 2, f"{path}.resolution",
            "must be an integer >= 2")
    _expect(params.encoder in ("cartesian", "summary"), f"{path}.encoder",
            "must be cartesian or summary")
    _expect(params.curvature_guard in ("magnitude", "concave"), f"{path}.curvature_guard",
            "must be magnitude or concave")
    return params


def config_from_dict(raw):
    """Validate a parsed config document and fill defaults."""
    _expect(isinstance(raw, dict), "$", "config must be a JSON object")
    for k in raw:
        _expect(k in _TOP_KEYS, k, "unknown field")
    if "plant" not in raw:
        raise MissingPlant("config names no plant")
    topo = build_plant(raw["plant"])[0]
    mode = raw.get("mode", "mod_sbsg")
    _expect(mode in MODES, "mode", f"must be one of {MODES}")
    leaders = raw.get("leaders", [])
    _expect(isinstance(leaders, list), "leaders", "must be a list of player ids")
    n = topo.n_players
    for k, lid in enumerate(leaders):
        _expect(isinstance(lid, int) and not isinstance(lid, bool), f"leaders[{k}]",
                "must be an integer")
        _expect(0 <= lid < n, f"leaders[{k}]", f"player id {lid} not in 0..{n - 1}")
    _expect(len(set(leaders)) == len(leaders), "leaders", "duplicate player ids")
    if mode == "mod_sbsg":
        _expect(len(leaders) >= 1, "leaders", "Mod-SbSG needs at least one leader")
        _expect(len(leaders) < n, "leaders", "Mod-SbSG needs at least one follower")
    default_sched = GameConfig().scheduler
    game = GameConfig(mode=mode, leader_ids=tuple(leaders),
                      scheduler=_check_scheduler(raw.get("scheduler", default_sched)),
                      role_weights=_check_role_weights(raw.get("role_weights")),
                      learning=_check_learning(raw.get("learning", {})))
    cycle_log = raw.get("cycle_log", "all")
    _expect(cycle_log in CYCLE_LOG_CHOICES, "cycle_log", f"must be one of {CYCLE_LOG_CHOICES}")
    seed = raw.get("seed", 0)
    _expect(isinstance(seed, int) and not isinstance(seed, bool) and seed >= 0, "seed",
            "must be a non-negative integer")
    out = raw.get("output_dir", "runs/default")
    _expect(isinstance(out, str), "output_dir", "must be a string")
    sweep = raw.get("sweep", {})
    _expect(isinstance(sweep, dict), "sweep", "must be an object")
    for axis, values in sweep.items():
        _expect(axis in SWEEP_AXES, f"sweep.{axis}", f"axis must be one of {SWEEP_AXES}")
        _expect(isinstance(values, list), f"sweep.{axis}", "must be a list of values")
    return ExperimentConfig(
        plant=raw["plant"],
        game=game,
        train_episodes=_int_field(raw, "train_episodes", 200),
        cycles_per_episode=_int_field(raw, "cycles_per_episode", 1000),
        test_episodes=_int_field(raw, "test_episodes", 50),
        seed=seed,
        output_dir=out,
        cycle_log=cycle_log,
        sweep=copy.deepcopy(sweep),
    )


def load_config(path):
    """Read and validate a JSON experiment config."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"config file {str(path)!r} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return config_from_dict(raw)


def write_config(config, path):
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")


def with_overrides(config, **changes):
    """Copy of ``config`` with top-level fields or game fields replaced."""
    d = config.to_dict()
    d.update(changes)
    return config_from_dict(d)


# --------------------------------------------------------------------------
# runs


def cycle_columns(topology):
    cols = ["episode", "cycle", "phase"]
    for i in range(topology.n_players):
        cols += [f"p{i}_s{k}" for k in range(topology.view_dims(i))]
        cols += [f"p{i}_action", f"p{i}_utility"]
    cols += ["phi_L", "phi_F", "phi_total", "power_total_kw", "overflow_l_per_s",
             "demand_deficit_l_per_s"]
    return cols


def _fmt(x):
    return repr(float(x))


def _cycle_row(episode, cycle, phase, rec):
    row = [episode, cycle, phase]
    for i, view in enumerate(rec.views):
        row += [_fmt(v) for v in view]
        row += [_fmt(rec.actions[i]), _fmt(rec.utilities[i])]
    row += [_fmt(rec.phi_leader), _fmt(rec.phi_follower), _fmt(rec.phi_total),
            _fmt(rec.power_total_kw), _fmt(rec.overflow_l_per_s), _fmt(rec.demand_deficit_l_per_s)]
    return row


def policy_digest(game):
    """SHA-256 over every player's serialized map layers."""
    h = hashlib.sha256()
    for i in range(game.topology.n_players):
        for li, layer in enumerate(game.policy_layers(i)):
            for q, a, u in layer.rows():
                h.update(f"{i},{li},{q},{a!r},{u!r}\n".encode())
    return h.hexdigest()


def save_checkpoint(game, directory, config):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for i in range(game.topology.n_players):
        name = f"player_{i}.csv"
        write_map_csv(directory / name, game.policy_layers(i))
        files.append(name)
    manifest = {
        "plant": game.topology.name,
        "mode": game.config.mode,
        "leaders": list(game.config.leader_ids),
        "n_players": game.topology.n_players,
        "layers": [len(game.policy_layers(i)) for i in range(game.topology.n_players)],
        "files": files,
        "policy_sha256": policy_digest(game),
        "trained_cycles": game.t,
        "seed": config.seed,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_checkpoint(game, directory):
    directory = Path(directory) if directory is not None else None
    if directory is None or not (directory / "manifest.json").exists():
        raise MissingCheckpoint(f"no checkpoint manifest under {directory}")
    manifest = json.loads((directory / "manifest.json").read_text())
    expect = {"mode": game.config.mode, "leaders": list(game.config.leader_ids),
              "n_players": game.topology.n_players}
    for k, v in expect.items():
        if manifest.get(k) != v:
            raise MissingCheckpoint(f"checkpoint {k}={manifest.get(k)!r} does not match config {v!r}")
    for i, name in enumerate(manifest["files"]):
        read_map_csv(directory / name, game.policy_layers(i))
    return manifest


class _EpisodeStats:
    def __init__(self):
        self.sums = dict.fromkeys(("demand_deficit_l_per_s", "power_total_kw", "overflow_l_per_s",
                                   "phi_L", "phi_F", "phi_total"), 0.0)
        self.cycles = 0
        self.steps = 0

    def add(self, rec):
        s = self.sums
        s["demand_deficit_l_per_s"] += rec.demand_deficit_l_per_s
        s["power_total_kw"] += rec.power_total_kw
        s["overflow_l_per_s"] += rec.overflow_l_per_s
        s["phi_L"] += rec.phi_leader
        s["phi_F"] += rec.phi_follower
        s["phi_total"] += rec.phi_total
        self.cycles += 1
        self.steps += rec.follower_steps

    def means(self):
        return {k: v / self.cycles for k, v in self.sums.items()}


def _protocol(config, topology, phase, episodes):
    return {
        "plant": topology.name,
        "phase": phase,
        "episodes": episodes,
        "cycles_per_episode": config.cycles_per_episode,
        "cycle_seconds": topology.cycle_seconds,
        "n_players": topology.n_players,
    }


def run_experiment(config, phase, checkpoint=None, out_dir=None):
    """Run the train or test phase of ``config``; writes artifacts under ``out_dir``.

    Train runs ``train_episodes`` episodes with policy updates and exploration,
    then saves a checkpoint. Test loads ``checkpoint`` (default: the train
    checkpoint in the same output directory), freezes every map and draws no
    exploration noise.
    """
    if phase not in (TRAIN, TEST):
        raise ValueError(f"phase must be {TRAIN!r} or {TEST!r}")
    out = Path(out_dir if out_dir is not None else config.output_dir)
    topo = config.topology()
    game = GameOrchestrator(topo, config.game, seed=config.seed)
    if phase == TEST:
        ckpt = Path(checkpoint) if checkpoint is not None else out / "checkpoint"
        load_checkpoint(game, ckpt)
        game.training = False
        episodes = config.test_episodes
    else:
        episodes = config.train_episodes
    out.mkdir(parents=True, exist_ok=True)
    prefix = "" if phase == TRAIN else "test_"
    write_config(config, out / f"{prefix}config.json")
    log_cycles = config.cycle_log == "all" or (config.cycle_log == "test" and phase == TEST)
    cycles_path = out / f"{prefix}cycles.csv" if log_cycles else None
    episodes_path = out / f"{prefix}episodes.csv"
    digest_before = policy_digest(game) if phase == TEST else None
    draws_before = game.noise_draws()

    total = _EpisodeStats()
    cyc_fh = open(cycles_path, "w", newline="") if cycles_path else None
    try:
        cyc = csv.writer(cyc_fh, lineterminator="\n") if cyc_fh else None
        if cyc:
            cyc.writerow(cycle_columns(topo))
        with open(episodes_path, "w", newline="") as ep_fh:
            eps = csv.writer(ep_fh, lineterminator="\n")
            eps.writerow(EPISODE_COLUMNS)
            for ep in range(episodes):
                state = topo.initial_state()
                if phase == TRAIN:
                    game.begin_episode(ep)
                stats = _EpisodeStats()
                for c in range(config.cycles_per_episode):
                    rec = game.run_cycle(state)
                    stats.add(rec)
                    total.add(rec)
                    if cyc:
                        cyc.writerow(_cycle_row(ep, c, phase, rec))
                m = stats.means()
                eps.writerow([ep, phase, stats.cycles] + [_fmt(m[k]) for k in EPISODE_COLUMNS[3:9]]
                             + [stats.steps])
    finally:
        if cyc_fh:
            cyc_fh.close()

    report = {
        "protocol": _protocol(config, topo, phase, episodes),
        "mode": config.game.mode,
        "leaders": list(config.game.leader_ids),
        "seed": config.seed,
        "metrics": total.means(),
        "follower_steps": total.steps,
        "noise_draws": game.noise_draws() - draws_before,
    }
    ckpt_dir = None
    if phase == TRAIN:
        ckpt_dir = save_checkpoint(game, out / "checkpoint", config)
    else:
        report["policy_sha256_before"] = digest_before
        report["policy_sha256_after"] = policy_digest(game)
    (out / f"{prefix}report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return RunArtifacts(out, phase, report, cycles_path, episodes_path, ckpt_dir)


def run_protocol(config, out_dir=None):
    """Train then test in one output directory; returns ``(train, test)`` artifacts."""
    train = run_experiment(config, TRAIN, out_dir=out_dir)
    test = run_experiment(config, TEST, out_dir=train.out_dir)
    return train, test


# --------------------------------------------------------------------------
# reports


def load_report(run):
    """Report dict from ``RunArtifacts``, a run directory or a report file."""
    if isinstance(run, RunArtifacts):
        return run.report
    if isinstance(run, dict):
        return run
    p = Path(run)
    if p.is_dir():
        for name in ("test_report.json", "report.json"):
            if (p / name).exists():
                return json.loads((p / name).read_text())
        raise MissingCheckpoint(f"no report under {p}")
    return json.loads(p.read_text())


def percent_delta(base, cand):
    """``100 (cand - base) / |base|``; 0 when both are 0, signed inf when only base is."""
    if base == 0:
        return 0.0 if cand == 0 else math.copysign(math.inf, cand)
    return 100.0 * (cand - base) / abs(base)


def compare_report(baseline, candidate):
    """Absolute values and percentage deltas of the headline metrics."""
    a, b = load_report(baseline), load_report(candidate)
    pa, pb = a["protocol"], b["protocol"]
    diff = sorted(k for k in set(pa) | set(pb) if pa.get(k) != pb.get(k))
    if diff:
        raise ProtocolMismatch(f"runs differ in {', '.join(diff)}")
    rows = []
    for m in METRICS:
        x, y = a["metrics"][m], b["metrics"][m]
        rows.append({"metric": m, "baseline": x, "candidate": y, "delta_pct": percent_delta(x, y)})
    return rows


def write_comparison_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "baseline", "candidate", "delta_pct"])
        for r in rows:
            w.writerow([r["metric"], _fmt(r["baseline"]), _fmt(r["candidate"]), _fmt(r["delta_pct"])])


# --------------------------------------------------------------------------
# sweeps


def _axis_override(config, axis, value):
    if axis == "leader_set":
        return with_overrides(config, leaders=list(value))
    if axis == "scheduler":
        return with_overrides(config, scheduler=dict(value))
    if axis == "focus_weights":
        return with_overrides(config, role_weights=copy.deepcopy(value))
    raise SchemaViolation("axis", f"must be one of {SWEEP_AXES}")


def _label(axis, value):
    if axis == "leader_set":
        return "leaders_" + "_".join(str(v) for v in value)
    if axis == "scheduler":
        return value["kind"]
    return "_".join(f"{r}{w.get('fill', w.get('w_v'))}-{w.get('power', w.get('w_p'))}"
                    for r, w in sorted(value.items()))


def sweep(config, axis, values=None, out_dir=None):
    """One train+test run per axis value with the shared seed.

    Returns ``(runs, summary)``; ``summary`` rows are sorted by test potential,
    highest first.
    """
    if axis not in SWEEP_AXES:
        raise SchemaViolation("axis", f"must be one of {SWEEP_AXES}")
    if values is None:
        values = config.sweep.get(axis, [])
    base = Path(out_dir if out_dir is not None else config.output_dir)
    runs, summary = [], []
    for k, value in enumerate(values):
        cfg = _axis_override(config, axis, value)
        run_dir = base / f"{k:02d}_{_label(axis, value)}"
        cfg = with_overrides(cfg, output_dir=str(run_dir))
        _, test = run_protocol(cfg)
        runs.append(test)
        summary.append({"axis": axis, "value": value, "run_dir": str(run_dir), **test.report["metrics"]})
    summary.sort(key=lambda r: -r["phi_total"])
    if values:
        base.mkdir(parents=True, exist_ok=True)
        (base / "sweep_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return runs, summary


def seed_mean(reports):
    """Per-metric mean over a list of report dicts."""
    return {m: float(np.mean([r["metrics"][m] for r in reports])) for m in reports[0]["metrics"]}
