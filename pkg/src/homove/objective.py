"""Portfolio KPIs and the two weighted mobility objectives.

``PP_HOF``:  w_pp * PP / (HO - HOF) + w_hof * HOF / HO
``PP_RLF``:  w_pp * PP / (HO - HOF) + w_rlf * RLF / HO

Ratios are formed per portfolio entry (street, speed, altitude) and then
averaged with the entry weights, so long streets do not dominate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .hostack import HoParams, KpiCounters, StackConfig, simulate
from .radio import DEFAULT_PARAMS, RadioParams, RadioTrace, radio_trace
from .scenario import DEFAULT_TICK_S, Scenario, sample_trajectory

PP_HOF = "PP_HOF"
PP_RLF = "PP_RLF"


@dataclass(frozen=True)
class Weights:
    w_pp: float
    w_hof: float = 0.0
    w_rlf: float = 0.0
    mode: str = PP_HOF

    def __post_init__(self):
        if self.mode not in (PP_HOF, PP_RLF):
            raise ValueError(f"unknown objective mode {self.mode!r}")
        if min(self.w_pp, self.w_hof, self.w_rlf) < 0:
            raise ValueError("weights must be non-negative")

    @classmethod
    def pp_hof(cls, w_pp: float, w_hof: float) -> Weights:
        return cls(w_pp=w_pp, w_hof=w_hof, mode=PP_HOF)

    @classmethod
    def pp_rlf(cls, w_pp: float, w_rlf: float) -> Weights:
        return cls(w_pp=w_pp, w_rlf=w_rlf, mode=PP_RLF)

    def __call__(self, counters: KpiCounters) -> float:
        if self.mode == PP_HOF:
            return objective_pp_hof(counters, self)
        return objective_pp_rlf(counters, self)

    def to_dict(self) -> dict:
        return {"w_pp": self.w_pp, "w_hof": self.w_hof, "w_rlf": self.w_rlf, "mode": self.mode}


def kpi_rates(c: KpiCounters) -> tuple[float, float, float]:
    """(PP / successful HO, HOF / HO, RLF / HO), each 0 when its denominator is 0."""
    ok = c.n_ho - c.n_hof
    pp = c.n_pp / ok if ok > 0 else 0.0
    hof = c.n_hof / c.n_ho if c.n_ho > 0 else 0.0
    rlf = c.n_rlf / c.n_ho if c.n_ho > 0 else 0.0
    return pp, hof, rlf


def objective_pp_hof(counters: KpiCounters, w: Weights) -> float:
    pp, hof, _ = kpi_rates(counters)
    return w.w_pp * pp + w.w_hof * hof


def objective_pp_rlf(counters: KpiCounters, w: Weights) -> float:
    pp, _, rlf = kpi_rates(counters)
    return w.w_pp * pp + w.w_rlf * rlf


def benchmark_params(which: str, n_cells: int) -> HoParams:
    """3GPP set-1 (3 dB / 480 ms) or set-5 (-1 dB / 40 ms), uniform over cells."""
    if n_cells < 1:
        raise ValueError("need at least one cell")
    table = {"set1": (3.0, 480.0), "set5": (-1.0, 40.0)}
    key = which.lower().replace("-", "").replace("_", "")
    if key not in table:
        raise ValueError(f"unknown benchmark {which!r}; expected set1 or set5")
    return HoParams.uniform(*table[key], n_cells)


# --- portfolio ------------------------------------------------------------

@dataclass(frozen=True)
class PortfolioEntry:
    street_id: int
    speed_kmh: float
    altitude_m: float
    weight: float


@dataclass(frozen=True)
class Portfolio:
    entries: tuple[PortfolioEntry, ...]
    episodes_per_entry: int = 4
    seeds: tuple[int, ...] | None = None  # explicit episode seeds, overriding the derived ones

    def __post_init__(self):
        if not self.entries:
            raise ValueError("empty portfolio")
        if self.episodes_per_entry < 1:
            raise ValueError("episodes_per_entry must be >= 1")
        total = sum(e.weight for e in self.entries)
        if abs(total - 1.0) > 1e-9 or any(e.weight < 0 for e in self.entries):
            raise ValueError(f"portfolio weights must be non-negative and sum to 1 (got {total})")
        if self.seeds is not None and len(self.seeds) != self.episodes_per_entry:
            raise ValueError("need one explicit seed per episode")

    @classmethod
    def uniform(cls, street_ids, speeds_kmh, altitude_m: float = 1.5, episodes_per_entry: int = 4,
                seeds=None) -> Portfolio:
        """Equal weights over the street x speed grid."""
        combos = [(s, v) for v in speeds_kmh for s in street_ids]
        w = 1.0 / len(combos)
        entries = tuple(PortfolioEntry(int(s), float(v), float(altitude_m), w) for s, v in combos)
        return cls(entries, episodes_per_entry, None if seeds is None else tuple(int(x) for x in seeds))

    def to_dict(self) -> dict:
        return {"entries": [vars(e) for e in self.entries], "episodes_per_entry": self.episodes_per_entry,
                "seeds": None if self.seeds is None else list(self.seeds)}

    @classmethod
    def from_dict(cls, doc: dict) -> Portfolio:
        entries = tuple(PortfolioEntry(int(e["street_id"]), float(e["speed_kmh"]),
                                       float(e.get("altitude_m", 1.5)), float(e["weight"]))
                        for e in doc["entries"])
        seeds = doc.get("seeds")
        return cls(entries, int(doc.get("episodes_per_entry", 4)),
                   None if seeds is None else tuple(int(s) for s in seeds))


def episode_seed(seed: int, portfolio: Portfolio, entry_index: int, episode: int) -> int:
    if portfolio.seeds is not None:
        return seeding.child_seed(portfolio.seeds[episode], "episode", entry_index)
    return seeding.child_seed(seed, "episode", entry_index, episode)


@dataclass
class Evaluation:
    objective: float
    pp_rate: float
    hof_rate: float
    rlf_rate: float
    per_entry: list = field(default_factory=list)
    counters: KpiCounters = field(default_factory=KpiCounters)

    def report(self, params: HoParams, weights: Weights | None = None, extra: dict | None = None) -> dict:
        doc = {"params": params.to_dict(), "pp_rate": self.pp_rate, "hof_rate": self.hof_rate,
               "rlf_rate": self.rlf_rate, "objective": self.objective, "per_entry": self.per_entry}
        if weights is not None:
            doc["weights"] = weights.to_dict()
        if extra:
            doc.update(extra)
        return doc


class Evaluator:
    """Pure ``params -> Evaluation`` map over a fixed set of episodes.

    Radio traces do not depend on the handover parameters, so all of them are
    built once here and reused for every call.
    """

    def __init__(self, scenario: Scenario, portfolio: Portfolio, weights: Weights, seed: int,
                 radio_params: RadioParams = DEFAULT_PARAMS, cfg: StackConfig = StackConfig(),
                 tick_s: float = DEFAULT_TICK_S):
        self.scenario = scenario
        self.portfolio = portfolio
        self.weights = weights
        self.seed = int(seed)
        self.cfg = cfg
        self.n_cells = scenario.deployment.n_cells
        self.traces: list[list[RadioTrace]] = []
        dep = scenario.deployment
        for i, e in enumerate(portfolio.entries):
            street = scenario.street(e.street_id).at_altitude(e.altitude_m)
            row = []
            for k in range(portfolio.episodes_per_entry):
                s = episode_seed(self.seed, portfolio, i, k)
                traj = sample_trajectory(street, e.speed_kmh, tick_s, "forward" if k % 2 == 0 else "reverse",
                                         s, bounds=dep.area_bounds)
                row.append(radio_trace(dep, traj, params=radio_params))
            self.traces.append(row)

    def __call__(self, params: HoParams) -> Evaluation:
        if params.n_cells != self.n_cells:
            raise ValueError(f"expected {self.n_cells} cells, got {params.n_cells}")
        total = KpiCounters()
        per_entry = []
        agg = np.zeros(4)
        for e, row in zip(self.portfolio.entries, self.traces):
            c = KpiCounters()
            for tr in row:
                c += simulate(tr, params, self.cfg).counters
            pp, hof, rlf = kpi_rates(c)
            obj = self.weights(c)
            agg += e.weight * np.array([obj, pp, hof, rlf])
            per_entry.append({"street_id": e.street_id, "speed_kmh": e.speed_kmh, "altitude_m": e.altitude_m,
                              "weight": e.weight, "n_ho": c.n_ho, "n_hof": c.n_hof, "n_pp": c.n_pp,
                              "n_rlf": c.n_rlf, "pp_rate": pp, "hof_rate": hof, "rlf_rate": rlf,
                              "objective": obj})
            total += c
        total.time_of_stay_s = []  # not needed downstream; keeps reports small
        return Evaluation(*(float(v) for v in agg), per_entry=per_entry, counters=total)


PER_CELL = "per_cell"
ONE_THRESHOLD = "one_threshold"


def params_from_unit(x, n_cells: int, mode: str = PER_CELL) -> HoParams:
    """Decode a unit-cube point: ``2 n_cells`` per-cell values, or one shared (A3, TTT) pair."""
    x = np.asarray(x, dtype=float)
    if mode == ONE_THRESHOLD:
        if len(x) != 2:
            raise ValueError("one-threshold points have two coordinates")
        return HoParams.from_unit(np.concatenate([np.full(n_cells, x[0]), np.full(n_cells, x[1])]))
    if mode != PER_CELL:
        raise ValueError(f"unknown search mode {mode!r}")
    if len(x) != 2 * n_cells:
        raise ValueError(f"per-cell points have {2 * n_cells} coordinates, got {len(x)}")
    return HoParams.from_unit(x)


def search_dim(n_cells: int, mode: str = PER_CELL) -> int:
    return 2 if mode == ONE_THRESHOLD else 2 * n_cells


def unit_bounds(n_cells: int, mode: str = PER_CELL) -> dict:
    """Physical box behind the unit cube, stored with BO datasets."""
    from .hostack import A3_BOUNDS, TTT_BOUNDS

    k = 1 if mode == ONE_THRESHOLD else n_cells
    return {"lower": [A3_BOUNDS[0]] * k + [TTT_BOUNDS[0]] * k, "upper": [A3_BOUNDS[1]] * k + [TTT_BOUNDS[1]] * k,
            "mode": mode}


class BoObjective:
    """``x in [0,1]^d -> (objective, KPI dict)`` for the BO loop."""

    def __init__(self, evaluator: Evaluator, mode: str = PER_CELL):
        self.evaluator = evaluator
        self.mode = mode
        self.d = search_dim(evaluator.n_cells, mode)

    def __call__(self, x) -> tuple[float, dict]:
        ev = self.evaluator(params_from_unit(x, self.evaluator.n_cells, self.mode))
        return ev.objective, {"pp_rate": ev.pp_rate, "hof_rate": ev.hof_rate, "rlf_rate": ev.rlf_rate}


def evaluate(params: HoParams, scenario: Scenario, portfolio: Portfolio, weights: Weights, seed: int,
             radio_params: RadioParams = DEFAULT_PARAMS, cfg: StackConfig = StackConfig()) -> Evaluation:
    """One noisy observation of the portfolio objective; identical seeds give identical values."""
    return Evaluator(scenario, portfolio, weights, seed, radio_params, cfg)(params)


def dump_report(doc: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(_finite(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _finite(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj
