"""Stay-or-handover agent trained with PPO.

The environment is the handover stack with event A3 switched off: at every
L3 update the agent sees the serving cell, its recent filtered RSRP, the
strongest neighbour and that neighbour's RSRP, and either stays or hands over
to the neighbour.  Reward is ``-(w_pp * #PP + w_rlf * #RLF)`` over the window
until the next decision.
"""

from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import seeding
from .hostack import StackConfig, UeStack
from .nets import Adam, Mlp, log_softmax
from .radio import DEFAULT_PARAMS, RadioParams, radio_trace
from .scenario import CellConfig, Deployment, Scenario, Street, sample_trajectory

N_STREET_SLOTS = 5
STAY, HANDOVER = 0, 1
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.95
    clip: float = 0.2
    ent_coef: float = 0.002
    lr: float = 1e-4
    rollout_steps: int = 2048
    minibatch: int = 256
    epochs: int = 4
    w_pp: float = 9.0
    w_rlf: float = 1.0
    policy_hidden: tuple[int, ...] = (256, 128, 256)
    value_hidden: tuple[int, ...] = (64, 64, 64)
    history: int = 3
    ratio_guard: float = 10.0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.clip <= 0:
            raise ValueError("clip must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def state_dim(n_cells: int, history: int = 3) -> int:
    return N_STREET_SLOTS + n_cells + 1 + n_cells + 1 + history * (n_cells + 1)


def norm_rsrp(dbm: float) -> float:
    return min(max((dbm + 140.0) / 100.0, 0.0), 1.0)


def encode_state(street_slot: int, serving: int, tos_s: float, candidate: int, cand_rsrp_dbm: float,
                 history, n_cells: int, n_history: int = 3) -> np.ndarray:
    """Flat observation; ``history`` holds (serving, rsrp_dbm) pairs, newest first."""
    if not 0 <= street_slot < N_STREET_SLOTS:
        raise ValueError(f"street slot must be in [0, {N_STREET_SLOTS})")
    s = np.zeros(state_dim(n_cells, n_history))
    s[street_slot] = 1.0
    o = N_STREET_SLOTS
    s[o + serving] = 1.0
    o += n_cells
    s[o] = min(max(tos_s / 10.0, 0.0), 1.0)
    o += 1
    if candidate >= 0:
        s[o + candidate] = 1.0
        s[o + n_cells] = norm_rsrp(cand_rsrp_dbm)
    o += n_cells + 1
    for k, (cell, rsrp) in enumerate(list(history)[:n_history]):
        base = o + k * (n_cells + 1)
        s[base + cell] = 1.0
        s[base + n_cells] = norm_rsrp(rsrp)
    return s


# --- environment ----------------------------------------------------------

@dataclass(frozen=True)
class EpisodeSpec:
    street_id: int
    speed_kmh: float
    altitude_m: float


class MobilityEnv:
    """Decision-level wrapper around :class:`UeStack` (one UE, one street per episode)."""

    def __init__(self, scenario: Scenario, episodes, cfg: PpoConfig = PpoConfig(), seed: int = 0,
                 radio_params: RadioParams = DEFAULT_PARAMS, stack_cfg: StackConfig = StackConfig()):
        self.scenario = scenario
        self.episodes = [e if isinstance(e, EpisodeSpec) else EpisodeSpec(*e) for e in episodes]
        if not self.episodes:
            raise ValueError("no episodes to sample from")
        self.cfg = cfg
        self.radio_params = radio_params
        self.stack_cfg = stack_cfg
        self.n_cells = scenario.deployment.n_cells
        self.dim = state_dim(self.n_cells, cfg.history)
        self._rng = seeding.rng(seed, "env")
        self._slots = {s.street_id: i % N_STREET_SLOTS for i, s in enumerate(scenario.streets)}
        self.stack: UeStack | None = None
        self.n_episodes = 0

    def reset(self, episode: int | None = None) -> np.ndarray:
        i = int(self._rng.integers(len(self.episodes))) if episode is None else episode
        spec = self.episodes[i]
        street = self.scenario.street(spec.street_id).at_altitude(spec.altitude_m)
        direction = "forward" if self._rng.random() < 0.5 else "reverse"
        tseed = int(self._rng.integers(2 ** 62))
        traj = sample_trajectory(street, spec.speed_kmh, direction=direction, seed=tseed,
                                 bounds=self.scenario.deployment.area_bounds)
        trace = radio_trace(self.scenario.deployment, traj, params=self.radio_params)
        self.stack = UeStack(trace, None, self.stack_cfg)
        self.slot = self._slots[spec.street_id]
        self.history: deque = deque(maxlen=self.cfg.history)
        self.episode_reward = 0.0
        self.n_episodes += 1
        self._advance()
        return self.state()

    def _advance(self) -> tuple[int, int]:
        """Run ticks until the next decision point; returns (PP, RLF) counted on the way."""
        st = self.stack
        pp0, rlf0 = st.counters.n_pp, st.counters.n_rlf
        while not st.done:
            st.step()
            if st.pending_decision:
                self.history.appendleft((st.serving, float(st.l3[st.serving])))
                break
        return st.counters.n_pp - pp0, st.counters.n_rlf - rlf0

    @property
    def done(self) -> bool:
        return self.stack.done

    def state(self) -> np.ndarray:
        st = self.stack
        if st.done or not st.attached or st.l3 is None:
            return np.zeros(self.dim)
        cand = st.candidate()
        tos = (st.tick - st.last_attach_tick) * self.stack_cfg.tick_ms / 1000.0
        return encode_state(self.slot, st.serving, tos, cand, float(st.l3[cand]) if cand >= 0 else -140.0,
                            self.history, self.n_cells, self.cfg.history)

    def step(self, action: int) -> tuple[np.ndarray, float, bool, dict]:
        if self.stack is None or self.stack.done:
            raise RuntimeError("episode finished; call reset()")
        if action == HANDOVER:
            self.stack.command_handover()  # no-op while a handover is in flight
        n_pp, n_rlf = self._advance()
        r = -(self.cfg.w_pp * n_pp + self.cfg.w_rlf * n_rlf)
        self.episode_reward += r
        return self.state(), r, self.stack.done, {"pp": n_pp, "rlf": n_rlf}


def env_step(env: MobilityEnv, action: int) -> tuple[np.ndarray, float, bool]:
    s, r, d, _ = env.step(action)
    return s, r, d


CORRIDOR_TX_DBM = 10.0
# obstructed street canyon: steep, always-the-same path loss so the serving/candidate gap moves fast
CORRIDOR_RADIO = RadioParams(n_los=3.5, always_los_altitude_m=0.0, shadow_std_db=3.0)


def sanity_corridor(speed_kmh: float = 60.0) -> tuple[Scenario, list[EpisodeSpec]]:
    """Two facing cells 500 m apart and one straight street between them.

    Staying on the first cell ends in a radio link failure; one handover near
    the midpoint avoids every event; handing over at every decision ping-pongs.
    Run it with :data:`CORRIDOR_RADIO` so the geometry is the same in every
    episode.
    """
    # low transmit power keeps RSRP inside the encoder's [-140, -40] dBm window
    cells = (CellConfig(0, (0.0, 200.0, 25.0), 0.0, 12.0, CORRIDOR_TX_DBM),
             CellConfig(1, (500.0, 200.0, 25.0), 180.0, 12.0, CORRIDOR_TX_DBM))
    dep = Deployment(cells, area_bounds=(0.0, 0.0, 500.0, 400.0))
    street = Street(0, ((150.0, 200.0), (350.0, 200.0)))
    return Scenario(dep, (street,)), [EpisodeSpec(0, speed_kmh, street.altitude_m)]


# --- losses ------------------------------------------------------------------

def value_loss(values, returns) -> float:
    v = np.asarray(values, dtype=float)
    g = np.asarray(returns, dtype=float)
    if v.shape != g.shape:
        raise ValueError("values and returns differ in length")
    return float(np.mean((v - g) ** 2))


def policy_objective(logp_new, logp_old, advantages, entropy, cfg: PpoConfig = PpoConfig()) -> float:
    """Clipped surrogate plus entropy bonus (to be maximised)."""
    ratio = np.exp(np.asarray(logp_new, dtype=float) - np.asarray(logp_old, dtype=float))
    adv = np.asarray(advantages, dtype=float)
    surr = np.minimum(ratio * adv, np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv)
    return float(np.mean(surr) + cfg.ent_coef * np.mean(entropy))


def _policy_loss_grad(logits: np.ndarray, actions: np.ndarray, logp_old: np.ndarray, adv: np.ndarray,
                      cfg: PpoConfig) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss = -objective, its gradient wrt logits, and the ratios."""
    n = len(actions)
    lp = log_softmax(logits)
    p = np.exp(lp)
    idx = np.arange(n)
    logp = lp[idx, actions]
    ratio = np.exp(logp - logp_old)
    clipped = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)
    unclipped_active = ratio * adv <= clipped * adv
    surr = np.where(unclipped_active, ratio * adv, clipped * adv)
    ent = -(p * lp).sum(axis=1)
    obj = surr.mean() + cfg.ent_coef * ent.mean()
    # d surr / d logp = ratio * A on the unclipped branch, 0 where the clipped term is the min
    ds = np.where(unclipped_active, ratio * adv, 0.0)
    onehot = np.zeros_like(logits)
    onehot[idx, actions] = 1.0
    d_surr = ds[:, None] * (onehot - p)
    d_ent = -p * (lp + ent[:, None])
    grad = -(d_surr + cfg.ent_coef * d_ent) / n
    return -float(obj), grad, ratio


def compute_advantages(rewards, values, dones, gamma: float, last_value: float = 0.0,
                       normalize: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Discounted returns (cut at episode ends) and baseline-subtracted advantages.

    ``last_value`` bootstraps a rollout that stops mid-episode.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    d = np.asarray(dones, dtype=bool)
    G = np.empty_like(r)
    running = float(last_value)
    for t in range(len(r) - 1, -1, -1):
        running = r[t] + gamma * running * (0.0 if d[t] else 1.0)
        G[t] = running
    A = G - v
    if normalize and len(A) > 0:
        A = (A - A.mean()) / max(float(A.std()), 1e-8)
    return G, A


# --- networks -------------------------------------------------------------------

@dataclass
class PpoNets:
    policy: Mlp
    value: Mlp
    opt_pi: Adam = field(default_factory=Adam)
    opt_v: Adam = field(default_factory=Adam)

    @classmethod
    def init(cls, dim: int, cfg: PpoConfig, rng: np.random.Generator) -> PpoNets:
        pi = Mlp.init([dim, *cfg.policy_hidden, 2], rng, out_scale=0.01)
        v = Mlp.init([dim, *cfg.value_hidden, 1], rng)
        return cls(pi, v, Adam(cfg.lr), Adam(cfg.lr))

    @property
    def dim(self) -> int:
        return self.policy.sizes[0]

    def probs(self, states: np.ndarray) -> np.ndarray:
        return np.exp(log_softmax(self.policy.forward(np.atleast_2d(states))))

    def values(self, states: np.ndarray) -> np.ndarray:
        return self.value.forward(np.atleast_2d(states))[:, 0]

    def to_dict(self) -> dict:
        return {"version": CHECKPOINT_VERSION, "policy": self.policy.to_dict(), "value": self.value.to_dict()}

    @classmethod
    def from_dict(cls, doc: dict, cfg: PpoConfig = PpoConfig()) -> PpoNets:
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
        return cls(Mlp.from_dict(doc["policy"]), Mlp.from_dict(doc["value"]), Adam(cfg.lr), Adam(cfg.lr))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path, cfg: PpoConfig = PpoConfig()) -> PpoNets:
        return cls.from_dict(json.loads(Path(path).read_text()), cfg)


def warm_start(source: PpoNets, dim: int, cfg: PpoConfig = PpoConfig()) -> PpoNets:
    """Copy of the source networks with fresh optimiser moments."""
    if source.dim != dim or source.value.sizes[0] != dim:
        raise ValueError(f"state encoding mismatch: source {source.dim}, target {dim}")
    return PpoNets(source.policy.copy(), source.value.copy(), Adam(cfg.lr), Adam(cfg.lr))


# --- training -------------------------------------------------------------------

@dataclass
class CurvePoint:
    env_steps: int
    mean_episode_reward: float
    pp_rate: float
    rlf_rate: float


class PpoDiverged(RuntimeError):
    pass


def ppo_update(nets: PpoNets, batch: dict, cfg: PpoConfig, rng: np.random.Generator) -> dict:
    """``cfg.epochs`` passes of shuffled minibatch steps on both networks."""
    S, A, LP, ADV, G = batch["states"], batch["actions"], batch["logp_old"], batch["adv"], batch["returns"]
    n = len(A)
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            mb = perm[start:start + cfg.minibatch]
            logits, acts = nets.policy.forward_cache(S[mb])
            _, dlogits, _ = _policy_loss_grad(logits, A[mb], LP[mb], ADV[mb], cfg)
            nets.opt_pi.step(nets.policy.params, nets.policy.backward(acts, dlogits))
            v, vacts = nets.value.forward_cache(S[mb])
            dv = (2.0 / len(mb)) * (v[:, 0] - G[mb])
            nets.opt_v.step(nets.value.params, nets.value.backward(vacts, dv[:, None]))
    lp_new = log_softmax(nets.policy.forward(S))[np.arange(n), A]
    drift = float(np.mean(np.abs(np.exp(lp_new - LP) - 1.0)))
    if not math.isfinite(drift) or drift > cfg.ratio_guard:
        raise PpoDiverged(f"mean |ratio - 1| = {drift:.3g} after update exceeds {cfg.ratio_guard}")
    return {"ratio_drift": drift}


def train(env_factory: Callable[[int], MobilityEnv], nets: PpoNets | None, cfg: PpoConfig, seed: int,
          total_steps: int = 50_000, log: Callable[[str], None] | None = None) -> tuple[PpoNets, list[CurvePoint]]:
    """Collect ``rollout_steps`` decisions, update, repeat until ``total_steps`` decisions."""
    env = env_factory(seeding.child_seed(seed, "env"))
    gen = seeding.rng(seed, "ppo")
    if nets is None:
        nets = PpoNets.init(env.dim, cfg, seeding.rng(seed, "init"))
    elif nets.dim != env.dim:
        raise ValueError(f"network input {nets.dim} does not match state size {env.dim}")
    curve: list[CurvePoint] = []
    s = env.reset()
    steps = 0
    while steps < total_steps:
        n = min(cfg.rollout_steps, total_steps - steps)
        S = np.empty((n, env.dim))
        A = np.empty(n, dtype=int)
        LP = np.empty(n)
        R = np.empty(n)
        V = np.empty(n)
        D = np.zeros(n, dtype=bool)
        finished, ep_pp, ep_ok, ep_rlf, ep_ho = [], 0, 0, 0, 0
        for t in range(n):
            S[t] = s
            lp = log_softmax(nets.policy.forward(s[None, :]))[0]
            a = HANDOVER if gen.random() < math.exp(lp[HANDOVER]) else STAY
            A[t], LP[t] = a, lp[a]
            V[t] = nets.value.forward(s[None, :])[0, 0]
            s, r, done, _ = env.step(a)
            R[t], D[t] = r, done
            if done:
                c = env.stack.counters
                finished.append(env.episode_reward)
                ep_pp += c.n_pp
                ep_ok += c.n_ho - c.n_hof
                ep_rlf += c.n_rlf
                ep_ho += c.n_ho
                s = env.reset()
        steps += n
        last_v = 0.0 if D[-1] else float(nets.value.forward(s[None, :])[0, 0])
        G, ADV = compute_advantages(R, V, D, cfg.gamma, last_v)
        ppo_update(nets, {"states": S, "actions": A, "logp_old": LP, "adv": ADV, "returns": G}, cfg, gen)
        mean_r = float(np.mean(finished)) if finished else math.nan
        curve.append(CurvePoint(steps, mean_r, ep_pp / ep_ok if ep_ok else 0.0, ep_rlf / ep_ho if ep_ho else 0.0))
        if log:
            log(f"steps {steps:7d}  mean episode reward {mean_r:8.3f}  episodes {len(finished)}")
    return nets, curve


def run_policy(env: MobilityEnv, policy: Callable[[np.ndarray], int], n_episodes: int) -> list[float]:
    """Episode rewards of a fixed policy."""
    out = []
    for _ in range(n_episodes):
        s = env.reset()
        while not env.done:
            s, _, _, _ = env.step(policy(s))
        out.append(env.episode_reward)
    return out


def sampled(nets: PpoNets, rng: np.random.Generator) -> Callable[[np.ndarray], int]:
    return lambda s: int(rng.random() < nets.probs(s)[0, HANDOVER])


def greedy(nets: PpoNets) -> Callable[[np.ndarray], int]:
    return lambda s: int(np.argmax(nets.policy.forward(s[None, :])[0]))


def convergence_step(curve: list[CurvePoint], window: int = 5, rel_tol: float = 0.05,
                     range_tol: float = 0.05) -> int:
    """Env steps at the first update whose trailing mean is within tolerance of the final plateau.

    Plateau = trailing mean over the last ``window`` updates.  Tolerance is
    ``rel_tol * |plateau|``, floored at ``range_tol`` times the spread of the
    smoothed curve (a plateau at 0 would otherwise demand exact equality).
    """
    r = np.array([c.mean_episode_reward for c in curve], dtype=float)
    r = _ffill(r)
    if len(r) == 0:
        return 0
    k = min(window, len(r))
    sm = np.array([r[max(0, i - k + 1):i + 1].mean() for i in range(len(r))])
    plateau = sm[-1]
    tol = max(rel_tol * abs(plateau), range_tol * float(sm.max() - sm.min()))
    for i, v in enumerate(sm):
        if abs(v - plateau) <= tol:
            return curve[i].env_steps
    return curve[-1].env_steps


def _ffill(r: np.ndarray) -> np.ndarray:
    out = r.copy()
    last = math.nan
    for i, v in enumerate(out):
        if math.isnan(v):
            out[i] = last
        else:
            last = v
    first = next((v for v in out if not math.isnan(v)), 0.0)
    return np.where(np.isnan(out), first, out)


def write_curve(curve: list[CurvePoint], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["env_steps", "mean_episode_reward", "pp_rate", "rlf_rate"])
        for c in curve:
            w.writerow([c.env_steps, "" if math.isnan(c.mean_episode_reward) else f"{c.mean_episode_reward:.6f}",
                        f"{c.pp_rate:.6f}", f"{c.rlf_rate:.6f}"])


# --- finite-difference harness ----------------------------------------------------

def _losses(nets: PpoNets, batch: dict, cfg: PpoConfig) -> tuple[float, float]:
    logits = nets.policy.forward(batch["states"])
    lp, _, _ = _policy_loss_grad(logits, batch["actions"], batch["logp_old"], batch["adv"], cfg)
    v = nets.value.forward(batch["states"])[:, 0]
    return lp, value_loss(v, batch["returns"])


def analytic_grads(nets: PpoNets, batch: dict, cfg: PpoConfig) -> tuple[list, list]:
    logits, acts = nets.policy.forward_cache(batch["states"])
    _, dlogits, _ = _policy_loss_grad(logits, batch["actions"], batch["logp_old"], batch["adv"], cfg)
    g_pi = nets.policy.backward(acts, dlogits)
    v, vacts = nets.value.forward_cache(batch["states"])
    dv = (2.0 / len(v)) * (v[:, 0] - batch["returns"])
    g_v = nets.value.backward(vacts, dv[:, None])
    return g_pi, g_v


def gradient_check(nets: PpoNets, batch: dict, cfg: PpoConfig = PpoConfig(), h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients of both losses."""
    g_pi, g_v = analytic_grads(nets, batch, cfg)
    worst = 0.0
    for which, params, grads in ((0, nets.policy.params, g_pi), (1, nets.value.params, g_v)):
        for p, g in zip(params, grads):
            flat = p.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + h
                up = _losses(nets, batch, cfg)[which]
                flat[i] = old - h
                down = _losses(nets, batch, cfg)[which]
                flat[i] = old
                num = (up - down) / (2.0 * h)
                denom = max(abs(num), abs(gflat[i]), 1e-6)
                worst = max(worst, abs(num - gflat[i]) / denom)
    return worst
