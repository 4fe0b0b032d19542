"""Time the hot kernels and a short game run with numba on and off.

Each backend runs in its own interpreter because the backend is chosen at
import time from ``MODSBSG_DISABLE_NUMBA``.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from modsbsg import kernels
from modsbsg._accel import HAS_NUMBA
from modsbsg.game import GameConfig, GameOrchestrator
from modsbsg.learning import poly_exponents
from modsbsg.plant import build_plant

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
e1, e2 = poly_exponents(2)
beta = rng.normal(size=6)
coords = rng.random((300, 2))
vals = rng.random(300)
q = rng.random(2)
x1, x2 = rng.random(100), rng.random(100)
Y = rng.random((100, 2))
topo, state = build_plant("bglp")
flows, power = np.zeros(topo.n_players), np.zeros(topo.n_players)
acts = rng.random(topo.n_players)


def plant():
    kernels.plant_cycle(state.fills, topo.capacities, state.overflow_accum, topo.kind, topo.params,
                        topo.src_ptr, topo.src_idx, topo.snk_ptr, topo.snk_idx, acts,
                        topo.supply_reservoir, topo.supply_level, topo.demand_reservoir,
                        topo.demand_rate, topo.cycle_seconds, topo.substep_seconds, flows, power)


cases = {
    "idw_interpolate_300": lambda: kernels.idw_interpolate(coords, vals, q, 1e-3),
    "poly_eval": lambda: kernels.poly_eval(beta, e1, e2, 0.3, 0.7),
    "ols_fit_100x6x2": lambda: kernels.ols_fit(x1, x2, Y, e1, e2),
    "poly_ascent_100": lambda: kernels.poly_ascent(beta, e1, e2, 0.4, 0.5, 2, 0.05, 100, -1.0, 100),
    "plant_cycle_bglp": plant,
}


def best_of(fn, n):
    fn()
    times = []
    for _ in range(5):
        t = time.perf_counter()
        for _ in range(n):
            fn()
        times.append((time.perf_counter() - t) / n)
    return min(times)


out = {"numba": HAS_NUMBA, "us_per_call": {k: 1e6 * best_of(f, repeat) for k, f in cases.items()}}
for label, cfg in (("vanilla", GameConfig(mode="vanilla_sbpg")),
                   ("mod_sbsg_2_3", GameConfig(leader_ids=(2, 3)))):
    g = GameOrchestrator(topo, cfg, seed=0)
    st = topo.initial_state()
    for _ in range(300):
        g.run_cycle(st)
    t = time.perf_counter()
    for _ in range(2000):
        g.run_cycle(st)
    out["us_per_call"][f"game_cycle_{label}"] = 1e6 * (time.perf_counter() - t) / 2000
print(json.dumps(out))
"""


def run(disable, repeat):
    env = dict(os.environ)
    env.pop("MODSBSG_DISABLE_NUMBA", None)
    if disable:
        env["MODSBSG_DISABLE_NUMBA"] = "1"
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env, capture_output=True,
                         text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=2000, help="calls per timing round")
    ap.add_argument("--json", default=None, help="also write results to this file")
    args = ap.parse_args(argv)
    jit, ref = run(False, args.repeat), run(True, args.repeat)
    print(f"{'case':<24}{'numba us':>12}{'numpy us':>12}{'speedup':>10}")
    for k, t_jit in jit["us_per_call"].items():
        t_np = ref["us_per_call"][k]
        print(f"{k:<24}{t_jit:>12.2f}{t_np:>12.2f}{t_np / t_jit:>9.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"numba": jit, "numpy": ref}, fh, indent=2)


if __name__ == "__main__":
    main()
