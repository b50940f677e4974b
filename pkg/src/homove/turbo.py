"""Trust-region Bayesian optimisation (one TR, Thompson sampling) on [0, 1]^d.

Minimisation throughout.  The TR is a box around the incumbent whose side
lengths follow the GP lengthscales with the volume of an L-cube; it doubles
after a run of successes, halves after a run of failures, and restarts from a
fresh space-filling design once it collapses below ``L_min``.
"""

from __future__ import annotations

import csv
import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.stats import qmc

from . import seeding
from .gp import Dataset, GpHyper, GpModel, fit_hyper, sample_joint

TAU_SUCC = 3
TAU_FAIL = 15
L_INIT = 0.8
L_MIN = 2.0 ** -7
L_MAX = 1.6


def side_lengths(L: float, lengthscales) -> np.ndarray:
    """``L_i = lambda_i L / (prod lambda)^(1/d)``, so that ``prod L_i = L^d``."""
    ls = np.asarray(lengthscales, dtype=float)
    if np.any(ls <= 0):
        raise ValueError("lengthscales must be positive")
    logs = np.log(ls)
    return np.exp(math.log(L) + logs - logs.mean())


@dataclass
class TrustRegion:
    center: np.ndarray
    length: float = L_INIT
    lengths: np.ndarray | None = None
    succ_count: int = 0
    fail_count: int = 0
    tau_succ: int = TAU_SUCC
    tau_fail: int = TAU_FAIL
    l_init: float = L_INIT
    l_min: float = L_MIN
    l_max: float = L_MAX
    restart_pending: bool = False

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if self.lengths is None:
            self.lengths = np.full(len(self.center), self.length)

    @property
    def d(self) -> int:
        return len(self.center)

    def set_lengthscales(self, lengthscales) -> None:
        self.lengths = side_lengths(self.length, lengthscales)

    def box(self) -> tuple[np.ndarray, np.ndarray]:
        half = 0.5 * self.lengths
        return np.clip(self.center - half, 0.0, 1.0), np.clip(self.center + half, 0.0, 1.0)

    def contains(self, X) -> np.ndarray:
        lo, hi = self.box()
        X = np.atleast_2d(X)
        return np.all((X >= lo - 1e-12) & (X <= hi + 1e-12), axis=1)


def resize(tr: TrustRegion, improved: bool) -> TrustRegion:
    """Count a success or failure and apply the doubling/halving schedule."""
    succ, fail = (tr.succ_count + 1, 0) if improved else (0, tr.fail_count + 1)
    L = tr.length
    if succ >= tr.tau_succ:
        L, succ, fail = min(tr.l_max, 2.0 * L), 0, 0
    elif fail >= tr.tau_fail:
        L, succ, fail = L / 2.0, 0, 0
    scale = L / tr.length
    return replace(tr, length=L, lengths=tr.lengths * scale, succ_count=succ, fail_count=fail,
                   restart_pending=L < tr.l_min)


def sobol_points(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    sob = qmc.Sobol(d, scramble=True, seed=rng)
    m = max(0, math.ceil(math.log2(max(n, 1))))
    return sob.random_base2(m)[:n]


def gen_candidates(tr: TrustRegion, model: GpModel | None, rng: np.random.Generator,
                   n_candidates: int = 500) -> np.ndarray:
    """Sobol points in the TR box, each coordinate kept at the centre unless perturbed.

    Every coordinate is perturbed with probability ``min(20/d, 1)``; a candidate
    with no perturbed coordinate gets one at random.
    """
    if model is not None:
        tr.set_lengthscales(model.hyper.lengthscales)
    d = tr.d
    lo, hi = tr.box()
    pert = lo + (hi - lo) * sobol_points(n_candidates, d, rng)
    prob = min(20.0 / d, 1.0)
    mask = rng.random((n_candidates, d)) <= prob
    empty = ~mask.any(axis=1)
    if empty.any():
        mask[np.flatnonzero(empty), rng.integers(0, d, size=int(empty.sum()))] = True
    return np.where(mask, pert, tr.center[None, :])


def select_next(model: GpModel, candidates: np.ndarray, rng: np.random.Generator,
                n_batches: int = 10) -> int:
    """Index of the Thompson-sampling winner (largest negated draw; first index on ties)."""
    candidates = np.atleast_2d(candidates)
    best_i, best_v = 0, -math.inf
    for idx in np.array_split(np.arange(len(candidates)), min(n_batches, len(candidates))):
        acq = -sample_joint(model, candidates[idx], rng)
        j = int(np.argmax(acq))
        if acq[j] > best_v:
            best_i, best_v = int(idx[j]), float(acq[j])
    return best_i


# --- BO loop ----------------------------------------------------------------

@dataclass
class BoRunConfig:
    d: int
    budget: int
    n_init: int | None = None  # default min(2d, 60)
    n_candidates: int = 500
    n_batches: int = 10
    q: int = 1
    m: int = 1
    seed: int = 0
    tau_succ: int = TAU_SUCC
    tau_fail: int = TAU_FAIL
    l_init: float = L_INIT
    l_min: float = L_MIN
    l_max: float = L_MAX
    use_trust_region: bool = True
    gp_restarts: int = 8
    refit_every: int = 10  # full multi-start hyperparameter fit every this many GP updates
    hyper_every: int = 1  # warm-started re-fit cadence; in between, condition on cached hyperparameters
    success_rel_tol: float = 1e-3
    success_abs_tol: float = 1e-6

    def __post_init__(self):
        if self.n_init is None:
            self.n_init = min(2 * self.d, 60)
        if self.n_candidates % self.n_batches:
            raise ValueError("n_candidates must split evenly into n_batches")
        if self.q < 1 or self.m < 1 or self.budget < 0:
            raise ValueError("q, m must be >= 1 and budget >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BoResult:
    trace: list
    dataset: Dataset
    best_x: np.ndarray | None
    best_y: float
    n_restarts: int = 0
    wall_s: float = 0.0

    @property
    def best_curve(self) -> np.ndarray:
        return np.array([row["best"] for row in self.trace], dtype=float)


Objective = Callable[[np.ndarray], "float | tuple[float, dict]"]


def _call(fn: Objective, x: np.ndarray) -> tuple[float, dict]:
    out = fn(x)
    if isinstance(out, tuple):
        return float(out[0]), dict(out[1])
    return float(out), {}


class _Region:
    """Bookkeeping for one trust region and the rows it owns."""

    def __init__(self, tr: TrustRegion, rows: list[int]):
        self.tr = tr
        self.rows = rows
        self.hyper: GpHyper | None = None
        self.fits = 0


def run_bo(objective: Objective, config: BoRunConfig, init: Dataset | None = None,
           out_dir=None, log: Callable[[str], None] | None = None) -> BoResult:
    """Minimise ``objective`` on [0, 1]^d within ``config.budget`` evaluations.

    ``init`` (e.g. a transfer-learning mix) replaces the first design and is
    not charged to the budget.  Rows tagged ``"source"`` steer the trust
    region but never count as the reported best.
    """
    cfg = config
    t0 = time.perf_counter()
    gen = seeding.rng(cfg.seed, "bo")
    data = Dataset.empty(cfg.d) if init is None else Dataset(init.X.copy(), init.y.copy(), dict(init.bounds),
                                                          list(init.origin))
    if data.d != cfg.d:
        raise ValueError(f"init dataset has d={data.d}, expected {cfg.d}")
    trace: list[dict] = []
    n_evals = 0
    best = {"y": math.inf, "x": None}
    for x, y, tag in zip(data.X, data.y, data.tags()):
        if tag != "source" and y < best["y"]:
            best.update(y=float(y), x=x.copy())

    def evaluate(x: np.ndarray, phase: str) -> float:
        nonlocal n_evals
        n_evals += 1
        try:
            y, info = _call(objective, x)
            if not math.isfinite(y):
                raise FloatingPointError("non-finite objective")
        except Exception as exc:  # evaluator failures are recorded and skipped
            y, info = math.nan, {"error": repr(exc)}
        if math.isfinite(y):
            data.append(x, y)
            if y < best["y"]:
                best.update(y=y, x=x.copy())
        trace.append({"iter": len(trace), "n_evals": n_evals, "phase": phase, "y": y,
                      "best": best["y"], "x": [float(v) for v in x], **{f"kpi_{k}": v for k, v in info.items()}})
        return y

    def fresh_design(n: int) -> list[int]:
        start = data.n
        for x in sobol_points(n, cfg.d, gen):
            if n_evals >= cfg.budget:
                break
            evaluate(x, "init")
        return list(range(start, data.n))

    def new_region(rows: list[int]) -> _Region:
        ys = data.y[rows]
        center = data.X[rows[int(np.argmin(ys))]] if rows else np.full(cfg.d, 0.5)
        L = cfg.l_init if cfg.use_trust_region else 1e6
        tr = TrustRegion(center, L, tau_succ=cfg.tau_succ, tau_fail=cfg.tau_fail, l_init=cfg.l_init,
                         l_min=cfg.l_min, l_max=cfg.l_max)
        return _Region(tr, rows)

    regions: list[_Region] = []
    if data.n:
        rows = list(range(data.n))
        regions.append(new_region(rows))
        for _ in range(1, cfg.m):
            regions.append(new_region(fresh_design(cfg.n_init)))
    else:
        for _ in range(cfg.m):
            regions.append(new_region(fresh_design(cfg.n_init)))

    n_restarts = 0
    turn = 0
    while n_evals < cfg.budget:
        k = turn % len(regions)  # round-robin over TRs when m > 1
        turn += 1
        reg = regions[k]
        if reg.tr.restart_pending or len(reg.rows) < 2:
            n_restarts += reg.tr.restart_pending
            if log and reg.tr.restart_pending:
                log(f"restart after {n_evals} evaluations (best {best['y']:.6g})")
            regions[k] = new_region(fresh_design(cfg.n_init))
            continue

        local = data.subset(reg.rows)
        inside = reg.tr.contains(local.X)
        fit_data = local.subset(np.flatnonzero(inside)) if inside.sum() >= max(2, cfg.d / 2) else local
        full = reg.hyper is None or reg.fits % max(cfg.refit_every, 1) == 0
        if full:
            hyper = fit_hyper(fit_data, gen, n_restarts=cfg.gp_restarts)
            if reg.hyper is not None:
                # keep the warm start in the running as one of the restarts
                hyper = _better(fit_data, hyper, fit_hyper(fit_data, gen, n_restarts=1, warm_start=reg.hyper))
        elif reg.fits % max(cfg.hyper_every, 1) == 0:
            hyper = fit_hyper(fit_data, gen, n_restarts=1, warm_start=reg.hyper)
        else:
            hyper = _rebase(reg.hyper, fit_data)
        reg.hyper = hyper
        reg.fits += 1
        model = GpModel.from_dataset(fit_data, hyper)
        y_inc = float(np.min(local.y))
        reg.tr.center = local.X[int(np.argmin(local.y))]

        improved = False
        for _ in range(cfg.q):
            if n_evals >= cfg.budget:
                break
            cand = gen_candidates(reg.tr, model if cfg.use_trust_region else None, gen, cfg.n_candidates)
            x = cand[select_next(model, cand, gen, cfg.n_batches)]
            n_before = data.n
            y = evaluate(x, "bo")
            if data.n > n_before:
                reg.rows.append(data.n - 1)
            if math.isfinite(y) and y < y_inc - (cfg.success_rel_tol * abs(y_inc) + cfg.success_abs_tol):
                improved = True
        if cfg.use_trust_region:
            reg.tr = resize(reg.tr, improved)

    result = BoResult(trace, data, best["x"], best["y"], n_restarts, time.perf_counter() - t0)
    if out_dir is not None:
        write_run(out_dir, cfg, result)
    return result


def _rebase(h: GpHyper, data: Dataset) -> GpHyper:
    """Cached kernel shape on new data: refresh the constant mean only."""
    return GpHyper(h.lengthscales, h.signal_variance, h.noise_variance, float(np.mean(data.y)))


def _better(data: Dataset, a: GpHyper, b: GpHyper) -> GpHyper:
    from .gp import neg_log_marginal_likelihood, _standardise

    mu, sd = _standardise(data.y)
    z = (data.y - mu) / sd

    def nll(h: GpHyper) -> float:
        th = np.concatenate([np.log(h.lengthscales), [math.log(h.signal_variance / sd ** 2),
                                                        math.log(h.noise_variance / sd ** 2)]])
        return neg_log_marginal_likelihood(th, data.X, z)[0]

    return a if nll(a) <= nll(b) else b


def random_search(objective: Objective, d: int, budget: int, seed: int) -> BoResult:
    """Uniform random baseline with the same bookkeeping as :func:`run_bo`."""
    gen = seeding.rng(seed, "random_search")
    data = Dataset.empty(d)
    trace, best_y, best_x = [], math.inf, None
    for i in range(budget):
        x = gen.uniform(size=d)
        y, _ = _call(objective, x)
        data.append(x, y)
        if y < best_y:
            best_y, best_x = y, x
        trace.append({"iter": i, "n_evals": i + 1, "phase": "random", "y": y, "best": best_y,
                      "x": [float(v) for v in x]})
    return BoResult(trace, data, best_x, best_y)


# --- transfer learning ----------------------------------------------------------

def mix_init(d_source: Dataset, d_target: Dataset, fraction_target: float, n_o: int) -> Dataset:
    """Initial design with ``round(fraction * n_o)`` target rows (first ones) and the
    rest from the source (most recent first), tagged by origin."""
    if not 0.0 <= fraction_target <= 1.0:
        raise ValueError("fraction_target must lie in [0, 1]")
    if d_source.n and d_target.n and d_source.d != d_target.d:
        raise ValueError("source and target dimensions differ")
    if d_source.bounds and d_target.bounds and d_source.bounds != d_target.bounds:
        raise ValueError("source and target bounds differ")
    n_t = int(round(fraction_target * n_o))
    n_s = n_o - n_t
    if n_t > d_target.n or n_s > d_source.n:
        raise ValueError(f"need {n_t} target and {n_s} source rows, have {d_target.n} and {d_source.n}")
    d = d_target.d if d_target.n else d_source.d
    X = np.zeros((0, d))
    parts_X, parts_y, origin = [X], [np.zeros(0)], []
    if n_t:
        parts_X.append(d_target.X[:n_t])
        parts_y.append(d_target.y[:n_t])
        origin += ["target"] * n_t
    if n_s:
        idx = np.arange(d_source.n - 1, d_source.n - 1 - n_s, -1)
        parts_X.append(d_source.X[idx])
        parts_y.append(d_source.y[idx])
        origin += ["source"] * n_s
    return Dataset(np.vstack(parts_X), np.concatenate(parts_y), dict(d_target.bounds or d_source.bounds), origin)


# --- artifacts ------------------------------------------------------------------

def write_run(out_dir, cfg: BoRunConfig, result: BoResult, extra_config: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    conf = {"bo": cfg.to_dict()}
    if extra_config:
        conf.update(extra_config)
    (out / "config.json").write_text(json.dumps(conf, indent=2, sort_keys=True) + "\n")
    kpi_cols = sorted({k for row in result.trace for k in row if k.startswith("kpi_")})
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "n_evals", "phase", "y", "best", "x", *kpi_cols])
        for row in result.trace:
            w.writerow([row["iter"], row["n_evals"], row["phase"], _fmt(row["y"]), _fmt(row["best"]),
                        " ".join(f"{v:.6f}" for v in row["x"]), *(_fmt(row.get(k, "")) for k in kpi_cols)])
    result.dataset.save(out / "dataset.json")
    return out


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(round(v, 10))
    return str(v)


def read_trace(path) -> list[dict]:
    with open(Path(path) / "trace.csv" if Path(path).is_dir() else path) as fh:
        return list(csv.DictReader(fh))


warnings.filterwarnings("ignore", message=".*balance properties of Sobol.*")
