"""Per-cell (60-D) and one-threshold (2-D) BO on the aerial portfolio, against the benchmarks."""

import time

import numpy as np

from _common import STREETS, W91, dump, parser
from homove.objective import ONE_THRESHOLD, PER_CELL, BoObjective, Evaluator, Portfolio, benchmark_params, \
    params_from_unit
from homove.scenario import build_uav_scenario
from homove.turbo import BoRunConfig, run_bo

p = parser(__doc__)
p.add_argument("--budget", type=int, default=150)
args = p.parse_args()
sc = build_uav_scenario(7)
rows = []
for seed in range(args.seeds):
    ev = Evaluator(sc, Portfolio.uniform(STREETS, [3.0, 30.0, 60.0], altitude_m=150.0, episodes_per_entry=2),
                   W91, 200 + seed)
    row = {b: ev(benchmark_params(b, ev.n_cells)).report(benchmark_params(b, ev.n_cells), W91)
           for b in ("set1", "set5")}
    for mode in (PER_CELL, ONE_THRESHOLD):
        t0 = time.perf_counter()
        obj = BoObjective(ev, mode)
        res = run_bo(obj, BoRunConfig(d=obj.d, budget=args.budget, seed=seed))
        params = params_from_unit(res.best_x, ev.n_cells, mode)
        row[mode] = ev(params).report(params, W91, {"best_curve": list(map(float, res.best_curve)),
                                                    "wall_s": time.perf_counter() - t0})
    rows.append(row)
    print(f"seed {seed}: " + "  ".join(f"{k} obj {v['objective']:.3f} PP {v['pp_rate']:.3f}" for k, v in row.items()),
          flush=True)
for k in rows[0]:
    print(f"median {k}: obj {np.median([r[k]['objective'] for r in rows]):.3f} "
          f"PP {np.median([r[k]['pp_rate'] for r in rows]):.3f} RLF {np.median([r[k]['rlf_rate'] for r in rows]):.3f}")
dump({"runs": rows}, args.out)
