"""Optimise per-cell parameters at 3 km/h and at 30 km/h, then test both at 30 km/h."""

import numpy as np

from _common import STREETS, W91, dump, parser
from homove.objective import PER_CELL, BoObjective, Evaluator, Portfolio, params_from_unit
from homove.scenario import build_reference_scenario
from homove.turbo import BoRunConfig, run_bo

args = parser(__doc__).parse_args()
sc = build_reference_scenario(7)
rows = []
for seed in range(args.seeds):
    best = {}
    for speed, eps, off in ((3.0, 1, 2000), (30.0, 4, 3000)):
        ev = Evaluator(sc, Portfolio.uniform(STREETS, [speed], episodes_per_entry=eps), W91, off + seed)
        res = run_bo(BoObjective(ev, PER_CELL), BoRunConfig(d=60, budget=150, seed=seed))
        best[speed] = params_from_unit(res.best_x, ev.n_cells)
    test = Evaluator(sc, Portfolio.uniform(STREETS, [30.0], episodes_per_entry=4), W91, 4000 + seed)
    r = {f"opt{k:g}": test(v) for k, v in best.items()}
    rows.append({k: {"pp": v.pp_rate, "rlf": v.rlf_rate, "objective": v.objective} for k, v in r.items()})
    print(f"seed {seed}: " + "  ".join(f"{k} PP {v['pp']:.3f} RLF {v['rlf']:.3f}" for k, v in rows[-1].items()),
          flush=True)
a, b = (np.median([r[k]["pp"] for r in rows]) for k in ("opt3", "opt30"))
print(f"median PP at 30 km/h: tuned at 3 km/h {a:.3f}, tuned at 30 km/h {b:.3f}")
dump({"runs": rows}, args.out)
