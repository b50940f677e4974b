"""Per-UE handover state machine.

Timing follows the measurement cadence: RSRP samples every 40 ms tick, an
L1 output (linear mean of 5 samples) every 200 ms, L3 IIR filtering and
event-A3 evaluation on each L1 output, and radio-link monitoring on the
wideband SINR every tick.  All timers are kept in integer milliseconds.

Serving-cell parameters govern a handover: the A3 offset and TTT of the cell
the UE is currently attached to decide when it leaves.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

A3_BOUNDS = (-1.0, 3.0)
TTT_BOUNDS = (40.0, 480.0)
TICK_MS = 40

IDLE = "idle"
TTT_RUNNING = "ttt_running"
PREPARING = "preparing"
EXECUTING = "executing"

EVENT_KINDS = ("A3_START", "A3_ABORT", "A3_TRIGGER", "HO", "HOF", "PP", "RLF")


@dataclass
class HoParams:
    """Per-cell A3 offsets (dB) and time-to-trigger values (ms)."""
    a3_offset_db: np.ndarray
    ttt_ms: np.ndarray

    def __post_init__(self):
        a3 = np.asarray(self.a3_offset_db, dtype=float).copy()
        ttt = np.asarray(self.ttt_ms, dtype=float)
        if a3.ndim != 1 or a3.shape != ttt.shape or len(a3) == 0:
            raise ValueError("a3_offset_db and ttt_ms must be equal-length vectors")
        tol = 1e-9
        if np.any(a3 < A3_BOUNDS[0] - tol) or np.any(a3 > A3_BOUNDS[1] + tol):
            raise ValueError(f"A3 offset outside {A3_BOUNDS} dB")
        if np.any(ttt < TTT_BOUNDS[0] - tol) or np.any(ttt > TTT_BOUNDS[1] + tol):
            raise ValueError(f"TTT outside {TTT_BOUNDS} ms")
        self.a3_offset_db = np.clip(a3, *A3_BOUNDS)
        # quantise to the 40 ms measurement tick
        self.ttt_ms = np.clip(np.round(ttt / TICK_MS) * TICK_MS, *TTT_BOUNDS).astype(int)

    @property
    def n_cells(self) -> int:
        return len(self.a3_offset_db)

    @classmethod
    def uniform(cls, a3_offset_db: float, ttt_ms: float, n_cells: int) -> HoParams:
        return cls(np.full(n_cells, float(a3_offset_db)), np.full(n_cells, float(ttt_ms)))

    @classmethod
    def from_unit(cls, x) -> HoParams:
        """Inverse of :meth:`to_unit`: ``x = [a3 (n), ttt (n)]`` in [0, 1]."""
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        n = len(x) // 2
        a3 = A3_BOUNDS[0] + x[:n] * (A3_BOUNDS[1] - A3_BOUNDS[0])
        ttt = TTT_BOUNDS[0] + x[n:] * (TTT_BOUNDS[1] - TTT_BOUNDS[0])
        return cls(a3, ttt)

    def to_unit(self) -> np.ndarray:
        a3 = (self.a3_offset_db - A3_BOUNDS[0]) / (A3_BOUNDS[1] - A3_BOUNDS[0])
        ttt = (self.ttt_ms - TTT_BOUNDS[0]) / (TTT_BOUNDS[1] - TTT_BOUNDS[0])
        return np.concatenate([a3, ttt])

    def to_dict(self) -> dict:
        return {"a3_offset_db": [float(v) for v in self.a3_offset_db],
                "ttt_ms": [int(v) for v in self.ttt_ms]}


@dataclass(frozen=True)
class StackConfig:
    tick_ms: int = TICK_MS
    l1_samples: int = 5
    l3_coeff: float = 0.5
    prep_delay_ms: int = 50
    exec_delay_ms: int = 40
    q_out_db: float = -8.0
    q_in_db: float = -6.0
    t310_ms: int = 1000
    tp_ms: int = 1000
    reestablish_ms: int = 200

    @property
    def l3_period_ms(self) -> int:
        return self.tick_ms * self.l1_samples


@dataclass
class L3State:
    """Incremental L1/L3 filter for per-tick use (the episode engine uses precomputed windows)."""
    n_cells: int
    iir_coeff: float = 0.5
    l1_samples: int = 5
    l3_rsrp_dbm: np.ndarray | None = None
    l1_buffer: list = field(default_factory=list)

    def push(self, rsrp_dbm) -> np.ndarray | None:
        """Add one tick of samples; returns the new L3 vector on L1 boundaries."""
        self.l1_buffer.append(np.asarray(rsrp_dbm, dtype=float))
        if len(self.l1_buffer) < self.l1_samples:
            return None
        l1 = l1_filter(np.stack(self.l1_buffer))
        self.l1_buffer.clear()
        self.l3_rsrp_dbm = l3_filter(self.l3_rsrp_dbm, l1, self.iir_coeff)
        return self.l3_rsrp_dbm

    def reset(self) -> None:
        self.l3_rsrp_dbm = None
        self.l1_buffer.clear()


@dataclass
class HoTimeline:
    phase: str = IDLE
    ttt_elapsed_ms: int = 0
    target_cell: int = -1
    elapsed_ms: int = 0
    prep_delay_ms: int = 50
    exec_delay_ms: int = 40

    @property
    def in_flight(self) -> bool:
        return self.phase in (PREPARING, EXECUTING)

    def reset(self) -> None:
        self.phase = IDLE
        self.ttt_elapsed_ms = 0
        self.target_cell = -1
        self.elapsed_ms = 0

    def start_handover(self, target: int) -> None:
        self.phase = PREPARING
        self.target_cell = int(target)
        self.elapsed_ms = 0


@dataclass
class RlfState:
    t310_running: bool = False
    t310_elapsed_ms: int = 0
    q_out_db: float = -8.0
    q_in_db: float = -6.0
    t310_ms: int = 1000

    def reset(self) -> None:
        self.t310_running = False
        self.t310_elapsed_ms = 0


@dataclass
class KpiCounters:
    n_ho: int = 0
    n_hof: int = 0
    n_pp: int = 0
    n_rlf: int = 0
    n_a3: int = 0  # A3 triggers (TTT expiries)
    time_of_stay_s: list = field(default_factory=list)

    def __iadd__(self, other: KpiCounters) -> KpiCounters:
        self.n_ho += other.n_ho
        self.n_hof += other.n_hof
        self.n_pp += other.n_pp
        self.n_rlf += other.n_rlf
        self.n_a3 += other.n_a3
        self.time_of_stay_s.extend(other.time_of_stay_s)
        return self

    def as_tuple(self) -> tuple[int, int, int, int, int]:
        return (self.n_ho, self.n_hof, self.n_pp, self.n_rlf, self.n_a3)


class Event(NamedTuple):
    tick: int
    kind: str
    serving: int
    target: int
    sinr_db: float


# --- filters --------------------------------------------------------------

def l1_filter(samples_dbm) -> np.ndarray | float:
    """Linear-power mean of the samples along axis 0, back in dBm."""
    s = np.asarray(samples_dbm, dtype=float)
    out = 10.0 * np.log10(np.mean(np.power(10.0, s / 10.0), axis=0))
    return float(out) if out.ndim == 0 else out


def l3_filter(prev_l3, l1, coeff: float):
    """First-order IIR in the dB domain; ``prev_l3=None`` initialises to ``l1``."""
    if not 0.0 < coeff <= 1.0:
        raise ValueError("L3 coefficient must lie in (0, 1]")
    if prev_l3 is None:
        return np.array(l1, dtype=float, copy=True) if np.ndim(l1) else float(l1)
    return (1.0 - coeff) * prev_l3 + coeff * l1


# --- state transitions ----------------------------------------------------

def strongest_neighbor(l3: np.ndarray, serving: int) -> int:
    """Index of the strongest L3 cell other than ``serving`` (ties: lowest id), -1 if none."""
    if len(l3) < 2:
        return -1
    tmp = l3.copy()
    tmp[serving] = -np.inf
    return int(np.argmax(tmp))


def step_a3(l3: np.ndarray, serving: int, params: HoParams, timeline: HoTimeline,
            dt_ms: int = 200) -> list[str]:
    """One event-A3 evaluation on an L3 update; mutates ``timeline``.

    Entering the TTT window counts the current L3 period, so a TTT of 480 ms
    needs three consecutive satisfied checks.
    """
    if timeline.in_flight:
        raise ValueError("A3 is not evaluated while a handover is in flight")
    cand = strongest_neighbor(l3, serving)
    if cand < 0:
        return []
    events = []
    if l3[cand] > l3[serving] + params.a3_offset_db[serving]:
        if timeline.phase == IDLE:
            events.append("A3_START")
        elif cand != timeline.target_cell:
            events += ["A3_ABORT", "A3_START"]
        else:
            timeline.ttt_elapsed_ms += dt_ms
        if events:
            timeline.phase = TTT_RUNNING
            timeline.target_cell = cand
            timeline.ttt_elapsed_ms = dt_ms
        if timeline.ttt_elapsed_ms >= params.ttt_ms[serving]:
            timeline.start_handover(cand)
            timeline.ttt_elapsed_ms = 0
            events.append("A3_TRIGGER")
    elif timeline.phase == TTT_RUNNING:
        timeline.reset()
        events.append("A3_ABORT")
    return events


def step_timeline(timeline: HoTimeline, rlf: RlfState, sinr_db_now: float, dt_ms: int,
                  counters: KpiCounters) -> list[str]:
    """Advance preparation/execution by one tick.

    On completion counts the handover and a failure if the UE's SINR is
    below Q_out at that instant.  The caller switches the serving cell on
    success (phase back to idle, ``target_cell`` kept) and re-establishes on
    failure.
    """
    if not timeline.in_flight:
        return []
    timeline.elapsed_ms += dt_ms
    if timeline.elapsed_ms < timeline.prep_delay_ms:
        return []
    if timeline.elapsed_ms < timeline.prep_delay_ms + timeline.exec_delay_ms:
        timeline.phase = EXECUTING
        return []
    counters.n_ho += 1
    timeline.phase = IDLE
    timeline.ttt_elapsed_ms = 0
    if sinr_db_now < rlf.q_out_db:
        counters.n_hof += 1
        return ["HO", "HOF"]
    return ["HO"]


def step_rlf(rlf: RlfState, sinr_db_now: float, dt_ms: int, counters: KpiCounters) -> bool:
    """T310 radio-link monitoring; returns True when an RLF is declared.

    A tick below Q_out starts the timer with that tick's duration already
    counted; only SINR above Q_in stops it.
    """
    if rlf.t310_running:
        if sinr_db_now > rlf.q_in_db:
            rlf.reset()
            return False
        rlf.t310_elapsed_ms += dt_ms
    elif sinr_db_now < rlf.q_out_db:
        rlf.t310_running = True
        rlf.t310_elapsed_ms = dt_ms
    else:
        return False
    if rlf.t310_elapsed_ms >= rlf.t310_ms:
        counters.n_rlf += 1
        rlf.reset()
        return True
    return False


def detect_pingpong(prev_source: int | None, new_target: int, time_of_stay_s: float, tp_s: float) -> bool:
    return prev_source is not None and new_target == prev_source and time_of_stay_s < tp_s


# --- episode engine -------------------------------------------------------

@dataclass
class EpisodeResult:
    counters: KpiCounters
    sinr_db: np.ndarray  # per tick, NaN while detached
    events: list

    def event_set(self, kinds=("A3_TRIGGER", "HO", "HOF", "PP", "RLF")) -> list[tuple]:
        return [(e.tick, e.kind, e.serving, e.target) for e in self.events if e.kind in kinds]


class UeStack:
    """Single-UE handover stack driven by a precomputed radio trace.

    With ``params`` given, event A3 decides handovers.  With ``params=None``
    the stack stops at every L3 update while attached and waits for an
    external decision via :meth:`command_handover` (the RL environment).
    """

    def __init__(self, trace, params: HoParams | None = None, cfg: StackConfig = StackConfig()):
        if params is not None and params.n_cells != trace.n_cells:
            raise ValueError("HoParams size does not match the number of cells")
        self.trace = trace
        self.params = params
        self.cfg = cfg
        self.l1 = trace.l1_dbm()
        self.counters = KpiCounters()
        self.timeline = HoTimeline(prep_delay_ms=cfg.prep_delay_ms, exec_delay_ms=cfg.exec_delay_ms)
        self.rlf = RlfState(q_out_db=cfg.q_out_db, q_in_db=cfg.q_in_db, t310_ms=cfg.t310_ms)
        self.events: list[Event] = []
        self.sinr = [math.nan] * trace.n_ticks
        self.tick = -1
        self.serving = -1
        self.l3: np.ndarray | None = None
        self.samples_since_reset = 0
        self.detach_ticks = max(cfg.l1_samples, -(-cfg.reestablish_ms // cfg.tick_ms))
        self.prev_source: int | None = None
        self.last_attach_tick = 0
        self._sinr_col: list | None = None
        self.pending_decision = False

    @property
    def attached(self) -> bool:
        return self.serving >= 0

    @property
    def done(self) -> bool:
        return self.tick >= self.trace.n_ticks - 1

    def _log(self, kind: str, target: int = -1, sinr: float = math.nan) -> None:
        self.events.append(Event(self.tick, kind, self.serving, target, sinr))

    def _set_serving(self, cell: int) -> None:
        self.serving = cell
        self._sinr_col = self.trace.sinr_column(cell)

    def _detach(self) -> None:
        self.serving = -1
        self._sinr_col = None
        self.l3 = None
        self.samples_since_reset = 0
        self.timeline.reset()
        self.rlf.reset()
        self.prev_source = None

    def command_handover(self) -> bool:
        """Start a handover to the strongest neighbour; no-op when one is in flight."""
        if not self.attached or self.timeline.in_flight or self.l3 is None:
            return False
        cand = strongest_neighbor(self.l3, self.serving)
        if cand < 0:
            return False
        self.timeline.start_handover(cand)
        self.counters.n_a3 += 1
        self._log("A3_TRIGGER", cand)
        return True

    def candidate(self) -> int:
        return strongest_neighbor(self.l3, self.serving) if self.l3 is not None else -1

    def step(self) -> None:
        """Process one 40 ms tick."""
        self.tick += 1
        t = self.tick
        cfg = self.cfg
        self.pending_decision = False
        if not self.attached:
            self.samples_since_reset += 1
            if self.samples_since_reset >= self.detach_ticks:
                l1 = self.l1[t]
                self.l3 = l3_filter(None, l1, cfg.l3_coeff)
                self.samples_since_reset = 0
                self._set_serving(int(np.argmax(self.l3)))
                self.last_attach_tick = t
            return

        sinr = self._sinr_col[t]
        self.sinr[t] = sinr
        if step_rlf(self.rlf, sinr, cfg.tick_ms, self.counters):
            self._log("RLF", -1, sinr)
            if self.timeline.in_flight:
                self.counters.n_ho += 1
                self.counters.n_hof += 1
                self._log("HO", self.timeline.target_cell, sinr)
                self._log("HOF", self.timeline.target_cell, sinr)
            self._detach()
            return

        if self.timeline.in_flight:
            kinds = step_timeline(self.timeline, self.rlf, sinr, cfg.tick_ms, self.counters)
            if kinds:
                target = self.timeline.target_cell
                self._log("HO", target, sinr)
                if "HOF" in kinds:
                    self._log("HOF", target, sinr)
                    self._detach()
                    return
                tos_ms = (t - self.last_attach_tick) * cfg.tick_ms
                self.counters.time_of_stay_s.append(tos_ms / 1000.0)
                if detect_pingpong(self.prev_source, target, tos_ms / 1000.0, cfg.tp_ms / 1000.0):
                    self.counters.n_pp += 1
                    self._log("PP", target, sinr)
                self.prev_source = self.serving
                self._set_serving(target)
                self.last_attach_tick = t
                self.rlf.reset()
                self.timeline.reset()

        self.samples_since_reset += 1
        if self.samples_since_reset < cfg.l1_samples:
            return
        self.samples_since_reset = 0
        self.l3 = l3_filter(self.l3, self.l1[t], cfg.l3_coeff)
        if self.timeline.in_flight:
            return
        if self.params is None:
            self.pending_decision = True
            return
        for kind in step_a3(self.l3, self.serving, self.params, self.timeline, cfg.l3_period_ms):
            if kind == "A3_TRIGGER":
                self.counters.n_a3 += 1
            self._log(kind, self.timeline.target_cell)

    def run(self) -> EpisodeResult:
        n = self.trace.n_ticks
        step = self.step
        while self.tick < n - 1:
            step()
        return self.result()

    def result(self) -> EpisodeResult:
        return EpisodeResult(self.counters, np.array(self.sinr), self.events)


def simulate(trace, params: HoParams, cfg: StackConfig = StackConfig()) -> EpisodeResult:
    """Run the A3-driven stack over a precomputed radio trace."""
    return UeStack(trace, params, cfg).run()


def run_episode(deployment, trajectory, params: HoParams, seed: int | None = None,
                cfg: StackConfig = StackConfig(), radio_params=None) -> EpisodeResult:
    """One UE along one trajectory; deterministic in (deployment, trajectory, seed)."""
    from .radio import DEFAULT_PARAMS, radio_trace

    if trajectory.n_ticks == 0:
        raise ValueError("empty trajectory")
    trace = radio_trace(deployment, trajectory, seed, radio_params or DEFAULT_PARAMS)
    return simulate(trace, params, cfg)


def write_event_log(result: EpisodeResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tick", "event", "serving", "target", "sinr_db"])
        for e in result.events:
            w.writerow([e.tick, e.kind, e.serving, e.target, "" if math.isnan(e.sinr_db) else f"{e.sinr_db:.4f}"])


def write_sinr_trace(result: EpisodeResult, path, tick_s: float = TICK_MS / 1000.0) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tick", "time_s", "sinr_db"])
        for t, v in enumerate(result.sinr_db):
            if not math.isnan(v):
                w.writerow([t, f"{t * tick_s:.3f}", f"{v:.4f}"])
