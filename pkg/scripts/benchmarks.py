"""PP/HOF/RLF of the two uniform benchmark settings on the reference scenario, per speed."""

import numpy as np

from _common import STREETS, W91, dump, parser
from homove.objective import Evaluator, Portfolio, benchmark_params
from homove.scenario import build_reference_scenario, build_uav_scenario

p = parser(__doc__, seeds=10)
p.add_argument("--uav", action="store_true", help="aerial corridors at 150 m over the uptilted deployment")
args = p.parse_args()
sc = build_uav_scenario(7) if args.uav else build_reference_scenario(7)
alt = 150.0 if args.uav else 1.5
summary = {}
for speed in (3.0, 30.0, 60.0):
    acc = {b: [] for b in ("set1", "set5")}
    for seed in range(args.seeds):
        ev = Evaluator(sc, Portfolio.uniform(STREETS, [speed], altitude_m=alt, episodes_per_entry=1), W91,
                       100 + seed)
        for b in acc:
            r = ev(benchmark_params(b, ev.n_cells))
            acc[b].append((r.pp_rate, r.hof_rate, r.rlf_rate, r.objective))
    for b, rows in acc.items():
        med = np.median(np.array(rows), axis=0)
        summary[f"{b}@{speed:g}"] = dict(zip(("pp", "hof", "rlf", "objective"), map(float, med)))
        print(f"{speed:>4g} km/h {b}: PP {med[0]:.3f}  HOF {med[1]:.3f}  RLF {med[2]:.4f}  obj {med[3]:.3f}")
dump(summary, args.out)
