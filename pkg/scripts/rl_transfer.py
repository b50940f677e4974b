"""Warm-started (ground -> aerial) vs cold PPO training at 30 km/h."""

import numpy as np

from _common import dump, parser
from homove.ppo import EpisodeSpec, MobilityEnv, PpoConfig, convergence_step, train, warm_start
from homove.scenario import build_reference_scenario, build_uav_scenario

p = parser(__doc__)
p.add_argument("--steps", type=int, default=30_000)
args = p.parse_args()
cfg = PpoConfig(rollout_steps=512, minibatch=64, epochs=10)
gue, uav = build_reference_scenario(7), build_uav_scenario(7)
g_eps = [EpisodeSpec(s.street_id, 30.0, 1.5) for s in gue.streets]
u_eps = [EpisodeSpec(s.street_id, 30.0, 150.0) for s in uav.streets]
target = lambda s: MobilityEnv(uav, u_eps, cfg, s)
rows = []
for seed in range(args.seeds):
    src, _ = train(lambda s: MobilityEnv(gue, g_eps, cfg, s), None, cfg, seed, args.steps)
    _, cold = train(target, None, cfg, 100 + seed, args.steps)
    _, warm = train(target, warm_start(src, src.dim, cfg), cfg, 100 + seed, args.steps)
    c, w = convergence_step(cold), convergence_step(warm)
    rows.append({"seed": seed, "cold": c, "warm": w, "ratio": w / c,
                 "cold_curve": [x.mean_episode_reward for x in cold],
                 "warm_curve": [x.mean_episode_reward for x in warm]})
    print(f"seed {seed}: cold {c} warm {w} steps (ratio {w / c:.2f})", flush=True)
print(f"median ratio {np.median([r['ratio'] for r in rows]):.2f}")
dump({"runs": rows}, args.out)
