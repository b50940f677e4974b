"""PPO on the two-cell sanity corridor; stochastic and greedy evaluation after 50k steps."""

import numpy as np

from _common import dump, parser
from homove.ppo import CORRIDOR_RADIO, HANDOVER, STAY, MobilityEnv, PpoConfig, convergence_step, greedy, \
    run_policy, sampled, sanity_corridor, train

p = parser(__doc__, seeds=10)
p.add_argument("--steps", type=int, default=50_000)
args = p.parse_args()
cfg = PpoConfig(rollout_steps=1024, minibatch=64, epochs=10)
sc, eps = sanity_corridor(60)
factory = lambda s: MobilityEnv(sc, eps, cfg, seed=s, radio_params=CORRIDOR_RADIO)
summary = {"always_handover": float(np.mean(run_policy(factory(999), lambda s: HANDOVER, 20))),
           "always_stay": float(np.mean(run_policy(factory(999), lambda s: STAY, 20))), "runs": []}
print(f"baselines: always-HO {summary['always_handover']:.2f}, stay {summary['always_stay']:.2f}")
for seed in range(args.seeds):
    nets, curve = train(factory, None, cfg, seed, args.steps)
    s = float(np.mean(run_policy(factory(999), sampled(nets, np.random.default_rng(5)), 20)))
    g = float(np.mean(run_policy(factory(999), greedy(nets), 20)))
    summary["runs"].append({"seed": seed, "sampled": s, "greedy": g, "convergence_steps": convergence_step(curve)})
    print(f"seed {seed}: sampled {s:.2f} greedy {g:.2f} converged at {convergence_step(curve)} steps", flush=True)
dump(summary, args.out)
