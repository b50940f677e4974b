"""BO transfer from 60 km/h to 30 km/h: 50/50 source/target initial design vs all-target."""

import numpy as np

from _common import STREETS, W91, dump, parser
from homove.cli import transfer_init
from homove.objective import PER_CELL, BoObjective, Evaluator, Portfolio, benchmark_params
from homove.scenario import build_reference_scenario
from homove.turbo import BoRunConfig, run_bo

p = parser(__doc__)
p.add_argument("--budget", type=int, default=90, help="BO iterations after the initial design")
args = p.parse_args()
sc = build_reference_scenario(7)
rows = []
for seed in range(args.seeds):
    src_ev = Evaluator(sc, Portfolio.uniform(STREETS, [60.0], episodes_per_entry=1), W91, 6000 + seed)
    src = run_bo(BoObjective(src_ev, PER_CELL), BoRunConfig(d=60, budget=150, seed=seed))
    ev = Evaluator(sc, Portfolio.uniform(STREETS, [30.0], episodes_per_entry=2), W91, 7000 + seed)
    obj = BoObjective(ev, PER_CELL)
    bench = {b: ev(benchmark_params(b, ev.n_cells)).objective for b in ("set1", "set5")}
    worst = max(bench.values())
    curves = {}
    for frac in (1.0, 0.5):
        res = run_bo(obj, BoRunConfig(d=60, budget=args.budget, seed=seed),
                     init=transfer_init(obj, src.dataset, frac, 60, seed))
        curves[frac] = res
    # min-max normalisation: 0 = worse benchmark, 1 = all-target final best
    top = curves[1.0].best_y
    norm = {f"target{int(k * 100)}": (worst - r.best_y) / (worst - top) for k, r in curves.items()}
    rows.append({"benchmarks": bench, "final": {str(k): r.best_y for k, r in curves.items()}, **norm,
                 "curves": {str(k): list(map(float, r.best_curve)) for k, r in curves.items()}})
    print(f"seed {seed}: set-1 {bench['set1']:.3f} set-5 {bench['set5']:.3f} "
          f"final all-target {top:.3f} 50/50 {curves[0.5].best_y:.3f} normalised {norm['target50']:.3f}", flush=True)
print(f"median normalised KPI of the 50/50 run: {np.median([r['target50'] for r in rows]):.3f}")
dump({"runs": rows}, args.out)
