"""Trust-region BO vs random search on 10-D Ackley and Levy (budget 300)."""

import numpy as np

from _common import dump, parser
from homove.benchfns import ackley, levy
from homove.turbo import BoRunConfig, random_search, run_bo

args = parser(__doc__, seeds=20).parse_args()
summary = {}
for f in (ackley, levy):
    rows = []
    for seed in range(args.seeds):
        bo = run_bo(f, BoRunConfig(d=10, budget=300, n_init=20, seed=seed, refit_every=25, hyper_every=5))
        rs = random_search(f, 10, 300, seed)
        rows.append((bo.best_y, rs.best_y))
        print(f"{f.__name__} seed {seed}: bo {bo.best_y:.3f}  random {rs.best_y:.3f}", flush=True)
    bo_b, rs_b = np.array(rows).T
    summary[f.__name__] = {"bo_median": float(np.median(bo_b)), "random_median": float(np.median(rs_b)),
                           "wins": int((bo_b < rs_b).sum()), "seeds": args.seeds}
    print(summary[f.__name__])
dump(summary, args.out)
