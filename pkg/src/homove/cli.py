"""``homove simulate|optimize|report|scenario`` command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

MODES = ("benchmark", "bo_per_cell", "bo_one_threshold", "rl", "transfer_bo", "transfer_rl")
BO_MODES = ("bo_per_cell", "bo_one_threshold", "transfer_bo")
RL_MODES = ("rl", "transfer_rl")


class ConfigError(Exception):
    """Bad or incomplete experiment configuration (exit code 2)."""


@dataclass
class ExperimentConfig:
    scenario: str | dict
    mode: str = "benchmark"
    weights: dict = field(default_factory=lambda: {"w_pp": 9.0, "w_rlf": 1.0, "mode": "PP_RLF"})
    portfolio: dict = field(default_factory=dict)
    budget: int = 150
    seeds: list = field(default_factory=lambda: [0])
    out_dir: str = "runs/out"
    params: str | dict | None = None  # simulate: "set1", "set5" or explicit per-cell vectors
    radio: dict = field(default_factory=dict)
    bo: dict = field(default_factory=dict)
    ppo: dict = field(default_factory=dict)
    transfer: dict = field(default_factory=dict)
    base_dir: str = "."

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}; got {self.mode!r}")
        if not self.seeds:
            raise ConfigError("seeds must be a non-empty list")
        if self.mode == "transfer_bo" and "source" not in self.transfer:
            raise ConfigError("transfer_bo needs transfer.source (a BO run dir or dataset.json)")
        if self.mode == "transfer_rl" and "checkpoint" not in self.transfer:
            raise ConfigError("transfer_rl needs transfer.checkpoint")
        if self.budget < 1:
            raise ConfigError("budget must be positive")

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str = ".") -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        if "scenario" not in doc:
            raise ConfigError("config needs a 'scenario' entry")
        return cls(**{**doc, "base_dir": base_dir})

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc, str(p.parent))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "base_dir"}

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# --- config -> library objects ------------------------------------------------

def load_scenario_spec(cfg: ExperimentConfig):
    from .scenario import build_reference_scenario, build_uav_scenario, load_scenario

    spec = cfg.scenario
    if isinstance(spec, dict):
        kind, seed = spec.get("builtin"), int(spec.get("seed", 7))
        if kind == "reference":
            return build_reference_scenario(seed)
        if kind == "uav":
            return build_uav_scenario(seed)
        if kind == "corridor":
            from .ppo import sanity_corridor
            return sanity_corridor()[0]
        raise ConfigError(f"unknown builtin scenario {kind!r}")
    path = cfg.resolve(spec)
    if not path.is_file():
        raise ConfigError(f"scenario file not found: {path}")
    try:
        return load_scenario(path)
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def build_portfolio(cfg: ExperimentConfig, scenario):
    from .objective import Portfolio

    doc = cfg.portfolio
    if "entries" in doc:
        return Portfolio.from_dict(doc)
    streets = doc.get("streets", [s.street_id for s in scenario.streets])
    return Portfolio.uniform(streets, doc.get("speeds", [3.0]), doc.get("altitude_m", 1.5),
                             int(doc.get("episodes", 4)), doc.get("seeds"))


def build_weights(cfg: ExperimentConfig):
    from .objective import Weights

    try:
        return Weights(**cfg.weights)
    except TypeError as exc:
        raise ConfigError(f"weights: {exc}") from exc


def build_radio(cfg: ExperimentConfig):
    from .radio import RadioParams

    try:
        return RadioParams(**cfg.radio)
    except TypeError as exc:
        raise ConfigError(f"radio: {exc}") from exc


def build_params(cfg: ExperimentConfig, n_cells: int):
    from .hostack import HoParams
    from .objective import benchmark_params

    p = cfg.params
    if p is None:
        raise ConfigError("simulate needs 'params' (set1, set5 or explicit vectors)")
    if isinstance(p, str):
        return benchmark_params(p, n_cells)
    try:
        return HoParams(tuple(float(v) for v in p["a3_offset_db"]), tuple(float(v) for v in p["ttt_ms"]))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"params: {exc}") from exc


def _setup(cfg: ExperimentConfig, seed: int):
    from .objective import Evaluator

    scenario = load_scenario_spec(cfg)
    portfolio = build_portfolio(cfg, scenario)
    weights = build_weights(cfg)
    radio = build_radio(cfg)
    return scenario, Evaluator(scenario, portfolio, weights, seed, radio)


def _rates(ev) -> str:
    return f"PP {100 * ev.pp_rate:.2f}%  HOF {100 * ev.hof_rate:.2f}%  RLF {100 * ev.rlf_rate:.2f}%"


# --- commands -------------------------------------------------------------------

def cmd_simulate(cfg: ExperimentConfig, out: Path) -> dict:
    from .hostack import simulate, write_event_log, write_sinr_trace
    from .objective import dump_report

    h = config_hash(cfg)
    rows = []
    for seed in cfg.seeds:
        scenario, ev = _setup(cfg, seed)
        params = build_params(cfg, scenario.deployment.n_cells)
        res = ev(params)
        run = out / f"seed_{seed}"
        run.mkdir(parents=True, exist_ok=True)
        for i, traces in enumerate(ev.traces):
            episode = simulate(traces[0], params, ev.cfg)
            write_event_log(episode, run / f"events_e{i}.csv")
            write_sinr_trace(episode, run / f"sinr_e{i}.csv")
        doc = res.report(params, ev.weights, {"mode": "simulate", "seed": seed, "config_hash": h,
                                              "n_ho": res.counters.n_ho, "n_hof": res.counters.n_hof,
                                              "n_pp": res.counters.n_pp, "n_rlf": res.counters.n_rlf})
        if res.counters.n_ho == 0:
            doc["note"] = "no handovers occurred; all rates are 0"
        dump_report(doc, run / "report.json")
        rows.append(doc)
        print(f"seed {seed}: {_rates(res)}  objective {res.objective:.4f}  (n_ho {res.counters.n_ho})")
    return {"runs": rows}


def _benchmarks(ev) -> dict:
    from .objective import benchmark_params

    out = {}
    for name in ("set1", "set5"):
        r = ev(benchmark_params(name, ev.n_cells))
        out[name] = {"objective": r.objective, "pp_rate": r.pp_rate, "hof_rate": r.hof_rate, "rlf_rate": r.rlf_rate}
    return out


def _bo_config(cfg: ExperimentConfig, d: int, seed: int):
    from .turbo import BoRunConfig

    try:
        return BoRunConfig(d=d, budget=cfg.budget, seed=seed, **cfg.bo)
    except TypeError as exc:
        raise ConfigError(f"bo: {exc}") from exc


def transfer_init(objective, source, fraction_target: float, n_o: int, seed: int):
    """Initial transfer dataset: a fresh Sobol design on the target mixed with source rows."""
    from . import seeding
    from .gp import Dataset
    from .turbo import mix_init, sobol_points

    n_t = int(round(fraction_target * n_o))
    target = Dataset.empty(objective.d)
    gen = seeding.rng(seed, "transfer-design")
    for x in sobol_points(n_t, objective.d, gen):
        y = objective(x)
        target.append(x, y[0] if isinstance(y, tuple) else y)
    return mix_init(source, target, fraction_target, n_o)


def load_source_dataset(cfg: ExperimentConfig):
    from .gp import Dataset

    p = cfg.resolve(cfg.transfer["source"])
    if p.is_dir():
        p = p / "dataset.json"
    if not p.is_file():
        raise ConfigError(f"transfer source dataset not found: {p}")
    return Dataset.load(p)


def _optimize_bo(cfg: ExperimentConfig, seed: int, run: Path, h: str) -> dict:
    from .objective import ONE_THRESHOLD, PER_CELL, BoObjective, dump_report, params_from_unit
    from .turbo import run_bo, write_run

    _, ev = _setup(cfg, seed)
    mode = ONE_THRESHOLD if cfg.mode == "bo_one_threshold" else PER_CELL
    obj = BoObjective(ev, mode)
    bo_cfg = _bo_config(cfg, obj.d, seed)
    init, provenance = None, None
    if cfg.mode == "transfer_bo":
        frac = float(cfg.transfer.get("fraction_target", 0.5))
        n_o = int(cfg.transfer.get("n_init", bo_cfg.n_init or min(2 * obj.d, 60)))
        init = transfer_init(obj, load_source_dataset(cfg), frac, n_o, seed)
        tags = init.tags()
        provenance = {"target": tags.count("target"), "source": tags.count("source")}
        print(f"seed {seed}: initial design {provenance['target']} target + {provenance['source']} source rows")
    t0 = time.perf_counter()
    res = run_bo(obj, bo_cfg, init=init)
    wall = time.perf_counter() - t0
    write_run(run, bo_cfg, res, {"experiment": cfg.to_dict(), "config_hash": h})
    params = params_from_unit(res.best_x, ev.n_cells, mode)
    best = ev(params)
    bench = _benchmarks(ev)
    extra = {"mode": cfg.mode, "seed": seed, "config_hash": h, "search_dim": obj.d, "n_evals": len(res.trace),
             "benchmarks": bench, "n_restarts": res.n_restarts}
    if provenance:
        extra["init_provenance"] = provenance
    doc = best.report(params, ev.weights, extra)
    dump_report(doc, run / "report.json")
    print(f"seed {seed}: best objective {best.objective:.4f} ({_rates(best)}) in {wall:.0f}s | "
          f"set-1 {bench['set1']['objective']:.4f}  set-5 {bench['set5']['objective']:.4f}")
    return doc


def rl_episodes(cfg: ExperimentConfig, scenario):
    from .ppo import EpisodeSpec

    pf = build_portfolio(cfg, scenario)
    return [EpisodeSpec(e.street_id, e.speed_kmh, e.altitude_m) for e in pf.entries]


def _ppo_config(cfg: ExperimentConfig):
    from .ppo import PpoConfig

    opts = {k: v for k, v in cfg.ppo.items() if k not in ("total_steps", "eval_episodes")}
    for k in ("policy_hidden", "value_hidden"):
        if k in opts:
            opts[k] = tuple(opts[k])
    w = cfg.weights
    try:
        return PpoConfig(w_pp=float(w.get("w_pp", 9.0)), w_rlf=float(w.get("w_rlf", 1.0)), **opts)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"ppo: {exc}") from exc


def _optimize_rl(cfg: ExperimentConfig, seed: int, run: Path, h: str) -> dict:
    import numpy as np

    from . import seeding
    from .objective import dump_report
    from .ppo import MobilityEnv, PpoNets, convergence_step, run_policy, sampled, train, warm_start, write_curve

    scenario = load_scenario_spec(cfg)
    episodes = rl_episodes(cfg, scenario)
    pcfg = _ppo_config(cfg)
    radio = build_radio(cfg)
    steps = int(cfg.ppo.get("total_steps", 50_000))

    def factory(s):
        return MobilityEnv(scenario, episodes, pcfg, seed=s, radio_params=radio)

    nets = None
    if cfg.mode == "transfer_rl":
        ck = cfg.resolve(cfg.transfer["checkpoint"])
        if ck.is_dir():
            ck = ck / "checkpoint.json"
        if not ck.is_file():
            raise ConfigError(f"checkpoint not found: {ck}")
        nets = warm_start(PpoNets.load(ck, pcfg), factory(0).dim, pcfg)
    nets, curve = train(factory, nets, pcfg, seed, steps)
    run.mkdir(parents=True, exist_ok=True)
    nets.save(run / "checkpoint.json")
    write_curve(curve, run / "curve.csv")
    n_eval = int(cfg.ppo.get("eval_episodes", 20))
    rewards = run_policy(factory(seeding.child_seed(seed, "eval")),
                         sampled(nets, seeding.rng(seed, "eval-policy")), n_eval)
    doc = {"mode": cfg.mode, "seed": seed, "config_hash": h, "env_steps": steps,
           "convergence_steps": convergence_step(curve), "eval_mean_episode_reward": float(np.mean(rewards)),
           "eval_episodes": n_eval, "ppo": pcfg.to_dict()}
    dump_report(doc, run / "report.json")
    print(f"seed {seed}: mean episode reward {doc['eval_mean_episode_reward']:.3f}, "
          f"converged after {doc['convergence_steps']} decision steps")
    return doc


def _optimize_one(args) -> dict:
    cfg, seed, out, h = args
    run = out / f"seed_{seed}"
    if cfg.mode in RL_MODES:
        return _optimize_rl(cfg, seed, run, h)
    return _optimize_bo(cfg, seed, run, h)


def cmd_optimize(cfg: ExperimentConfig, out: Path) -> dict:
    if cfg.mode == "benchmark":
        raise ConfigError("mode 'benchmark' runs with 'simulate'")
    h = config_hash(cfg)
    jobs = [(cfg, int(s), out, h) for s in cfg.seeds]
    workers = max(1, min(threads(), len(jobs)))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            docs = list(pool.map(_optimize_one, jobs))
    else:
        docs = [_optimize_one(j) for j in jobs]
    return {"runs": docs}


# --- report ------------------------------------------------------------------------

def sinr_cdf(values, step_db: float = 0.1):
    """(bin upper edges, empirical CDF) on a fixed ``step_db`` grid."""
    import numpy as np

    v = np.sort(np.asarray(values, dtype=float))
    v = v[np.isfinite(v)]
    if v.size == 0:
        return np.zeros(0), np.zeros(0)
    lo = math.floor(v[0] / step_db)
    hi = math.ceil(v[-1] / step_db)
    edges = np.arange(lo, hi + 1) * step_db
    cdf = np.searchsorted(v, edges + 1e-9, side="right") / v.size
    return np.round(edges, 6), cdf


def normalized_convergence(curve, baseline: float, best: float):
    """0 at the baseline objective, 1 at the best value reached by any compared run."""
    import numpy as np

    c = np.asarray(curve, dtype=float)
    span = baseline - best
    if not math.isfinite(span) or span <= 0:
        return np.zeros_like(c)
    return (baseline - c) / span


REQUIRED = ("report.json",)


def _check_run(path: Path) -> list[str]:
    if not path.is_dir():
        return [f"{path}: not a directory"]
    return [f"{path}: missing {name}" for name in REQUIRED if not (path / name).is_file()]


def _run_dirs(paths) -> list[Path]:
    """Expand a multi-seed output dir into its ``seed_*`` runs."""
    out = []
    for p in map(Path, paths):
        seeds = sorted(p.glob("seed_*")) if p.is_dir() else []
        out.extend(seeds if seeds and not (p / "report.json").exists() else [p])
    return out


def cmd_report(run_paths, out: Path) -> dict:
    import numpy as np

    runs = _run_dirs(run_paths)
    if not runs:
        raise ConfigError("report needs at least one run directory")
    problems = [m for r in runs for m in _check_run(r)]
    if problems:
        raise ConfigError("missing artifacts:\n  " + "\n  ".join(problems))
    out.mkdir(parents=True, exist_ok=True)
    reports = [json.loads((r / "report.json").read_text()) for r in runs]

    cols = ["run", "mode", "seed", "config_hash", "objective", "pp_rate", "hof_rate", "rlf_rate",
            "eval_mean_episode_reward", "convergence_steps"]
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r, doc in zip(runs, reports):
            w.writerow([str(r), *(_cell(doc.get(c)) for c in cols[1:])])

    with open(out / "sinr_cdf.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "sinr_db", "cdf"])
        for r in runs:
            files = sorted(r.glob("sinr_e*.csv"))
            if not files:
                continue
            vals = np.concatenate([np.loadtxt(f, delimiter=",", skiprows=1, usecols=2, ndmin=1) for f in files])
            for e, c in zip(*sinr_cdf(vals)):
                w.writerow([str(r), f"{e:.1f}", f"{c:.6f}"])

    bo = [(r, doc) for r, doc in zip(runs, reports) if (r / "trace.csv").is_file()]
    if bo:
        from .turbo import read_trace

        curves = {r: [float(row["best"]) if row["best"] else math.nan for row in read_trace(r)] for r, _ in bo}
        # 0 = the worse of the two uniform benchmarks
        baseline = max(max(doc["benchmarks"][k]["objective"] for k in ("set1", "set5")) for _, doc in bo
                       if "benchmarks" in doc) if any("benchmarks" in d for _, d in bo) else math.nan
        best = min(np.nanmin(c) for c in curves.values() if c)
        with open(out / "convergence.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["run", "n_evals", "best", "normalized"])
            for r, c in curves.items():
                for i, (b, nb) in enumerate(zip(c, normalized_convergence(c, baseline, best)), start=1):
                    w.writerow([str(r), i, _cell(b), _cell(float(nb))])

    rl = [r for r in runs if (r / "curve.csv").is_file()]
    if rl:
        with open(out / "learning_curves.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["run", "env_steps", "mean_episode_reward", "pp_rate", "rlf_rate"])
            for r in rl:
                with open(r / "curve.csv") as src:
                    for row in csv.DictReader(src):
                        w.writerow([str(r), row["env_steps"], row["mean_episode_reward"], row["pp_rate"],
                                    row["rlf_rate"]])

    for r, doc in zip(runs, reports):
        if "objective" in doc:
            print(f"{r}: objective {doc['objective']:.4f}  PP {100 * doc['pp_rate']:.2f}%  "
                  f"HOF {100 * doc['hof_rate']:.2f}%  RLF {100 * doc['rlf_rate']:.2f}%")
        elif "eval_mean_episode_reward" in doc:
            print(f"{r}: mean episode reward {doc['eval_mean_episode_reward']:.3f}")
    return {"runs": [str(r) for r in runs]}


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(round(v, 10))
    return str(v)


def cmd_scenario(kind: str, seed: int, out: Path) -> None:
    from .scenario import build_reference_scenario, build_uav_scenario, save_scenario

    if kind == "reference":
        sc = build_reference_scenario(seed)
    elif kind == "uav":
        sc = build_uav_scenario(seed)
    else:
        from .ppo import sanity_corridor
        sc = sanity_corridor()[0]
    out.parent.mkdir(parents=True, exist_ok=True)
    save_scenario(sc, out)
    print(f"wrote {out} ({sc.deployment.n_cells} cells, {len(sc.streets)} streets)")


# --- entry point -------------------------------------------------------------------

def threads() -> int:
    try:
        return max(1, int(os.environ.get("HOMOVE_THREADS", "1")))
    except ValueError:
        return 1


def _cap_blas(n: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="homove", description="Handover parameter optimisation experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("simulate", "evaluate fixed handover parameters"),
                           ("optimize", "run BO or PPO per the config mode")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", required=True)
        s.add_argument("--seed", type=int, help="override the config seeds with this single seed")
        s.add_argument("--out", help="output directory (default: config out_dir)")
    r = sub.add_parser("report", help="merge run directories into comparison tables")
    r.add_argument("runs", nargs="*")
    r.add_argument("--config", help="JSON with a 'runs' list (and optional 'out_dir')")
    r.add_argument("--out", default=None)
    sc = sub.add_parser("scenario", help="write a built-in scenario to JSON")
    sc.add_argument("kind", choices=("reference", "uav", "corridor"))
    sc.add_argument("--seed", type=int, default=7)
    sc.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _cap_blas(threads())
    try:
        if args.command == "scenario":
            cmd_scenario(args.kind, args.seed, Path(args.out))
            return 0
        if args.command == "report":
            runs = list(args.runs)
            out = args.out
            if args.config:
                p = Path(args.config)
                if not p.is_file():
                    raise ConfigError(f"config file not found: {p}")
                doc = json.loads(p.read_text())
                runs += [str(p.parent / r) for r in doc.get("runs", [])]
                out = out or doc.get("out_dir")
            cmd_report(runs, Path(out or "report"))
            return 0
        cfg = ExperimentConfig.load(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seeds=[args.seed])
        out = Path(args.out) if args.out else cfg.resolve(cfg.out_dir)
        if args.command == "simulate":
            cmd_simulate(cfg, out)
        else:
            cmd_optimize(cfg, out)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
