"""Deployments, street portfolios and UE trajectories.

The reference world is synthetic: ten three-sector sites dropped by dart
throwing on a 1400 x 1275 m area, plus five seeded street polylines that are
forced to cross several serving-area boundaries.  Everything here is a pure
function of its seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import seeding

SCHEMA_VERSION = 1

AREA_W = 1400.0
AREA_H = 1275.0
N_SITES = 10
SECTOR_AZIMUTHS = (0.0, 120.0, 240.0)
MIN_ISD_M = 200.0
SITE_MARGIN_M = 100.0
HEIGHT_RANGE_M = (22.0, 56.0)
TILT_RANGE_DEG = (6.0, 10.0)

GUE_ALTITUDE_M = 1.5
UAV_ALTITUDE_M = 150.0
DEFAULT_TICK_S = 0.040


@dataclass(frozen=True)
class CellConfig:
    cell_id: int
    site_position: tuple[float, float, float]
    azimuth: float
    mech_plus_elec_tilt: float
    tx_power_dbm: float = 46.0


@dataclass(frozen=True)
class Deployment:
    cells: tuple[CellConfig, ...]
    area_bounds: tuple[float, float, float, float] = (0.0, 0.0, AREA_W, AREA_H)
    carrier_hz: float = 2e9
    bandwidth_hz: float = 1e7
    noise_psd_dbm_hz: float = -174.0

    def __post_init__(self):
        ids = [c.cell_id for c in self.cells]
        if len(set(ids)) != len(ids):
            raise ValueError("cell ids must be unique within a deployment")
        if ids != list(range(len(ids))):
            # the HO stack indexes cells by position; keep ids == positions
            raise ValueError("cell ids must be 0..n-1 in order")

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def noise_dbm(self) -> float:
        return self.noise_psd_dbm_hz + 10.0 * math.log10(self.bandwidth_hz)

    def site_xyz(self) -> np.ndarray:
        return np.array([c.site_position for c in self.cells], dtype=float)

    def tx_power_dbm(self) -> np.ndarray:
        return np.array([c.tx_power_dbm for c in self.cells], dtype=float)


@dataclass(frozen=True)
class Street:
    street_id: int
    waypoints: tuple[tuple[float, float], ...]
    altitude_m: float = GUE_ALTITUDE_M

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise ValueError("a street needs at least two waypoints")
        for a, b in zip(self.waypoints[:-1], self.waypoints[1:]):
            if a == b:
                raise ValueError("consecutive street waypoints must differ")

    @property
    def length_m(self) -> float:
        w = np.asarray(self.waypoints, dtype=float)
        return float(np.hypot(*np.diff(w, axis=0).T).sum())

    def at_altitude(self, altitude_m: float) -> Street:
        return Street(self.street_id, self.waypoints, altitude_m)


@dataclass(frozen=True, eq=False)
class Trajectory:
    street_id: int
    speed_kmh: float
    tick_s: float
    positions: np.ndarray  # (T, 3)
    seed: int
    direction: str = "forward"

    @property
    def n_ticks(self) -> int:
        return len(self.positions)

    def key(self) -> tuple:
        return (self.street_id, float(self.speed_kmh), float(self.tick_s),
                float(self.positions[0, 2]), int(self.seed), self.direction, self.n_ticks)


@dataclass(frozen=True)
class Scenario:
    """A deployment together with its street portfolio."""
    deployment: Deployment
    streets: tuple[Street, ...] = field(default_factory=tuple)

    def street(self, street_id: int) -> Street:
        for s in self.streets:
            if s.street_id == street_id:
                return s
        raise KeyError(f"no street with id {street_id}")


def build_reference_deployment(seed: int) -> Deployment:
    """30-cell reference deployment (10 sites x 3 sectors) on 1400 x 1275 m."""
    gen = seeding.rng(seed, "deployment")
    sites: list[tuple[float, float]] = []
    while len(sites) < N_SITES:
        # plain dart throwing; 10 darts with a 200 m exclusion never stalls here
        p = (float(gen.uniform(SITE_MARGIN_M, AREA_W - SITE_MARGIN_M)),
             float(gen.uniform(SITE_MARGIN_M, AREA_H - SITE_MARGIN_M)))
        if all(math.dist(p, q) >= MIN_ISD_M for q in sites):
            sites.append(p)
    heights = gen.uniform(*HEIGHT_RANGE_M, size=N_SITES)
    tilts = gen.uniform(*TILT_RANGE_DEG, size=N_SITES)
    cells = []
    for i, (x, y) in enumerate(sites):
        for j, az in enumerate(SECTOR_AZIMUTHS):
            cells.append(CellConfig(
                cell_id=3 * i + j,
                site_position=(round(x, 3), round(y, 3), round(float(heights[i]), 3)),
                azimuth=az,
                mech_plus_elec_tilt=round(float(tilts[i]), 3),
            ))
    return Deployment(cells=tuple(cells))


def _polyline(gen: np.random.Generator, length: float, n_seg: int, margin: float):
    x, y = gen.uniform(margin, AREA_W - margin), gen.uniform(margin, AREA_H - margin)
    heading = gen.uniform(0.0, 2 * math.pi)
    pts = [(x, y)]
    for _ in range(n_seg):
        seg = length / n_seg
        x += seg * math.cos(heading)
        y += seg * math.sin(heading)
        if not (margin <= x <= AREA_W - margin and margin <= y <= AREA_H - margin):
            return None
        pts.append((x, y))
        heading += gen.normal(0.0, math.radians(35.0))
    return pts


def _best_server_changes(deployment: Deployment, waypoints, altitude: float) -> int:
    from .radio import mean_gain_db

    street = Street(0, tuple(waypoints), altitude)
    pos = polyline_points(street, spacing_m=5.0)
    best = np.argmax(mean_gain_db(deployment, pos) + deployment.tx_power_dbm(), axis=1)
    return int(np.count_nonzero(np.diff(best)))


def reference_streets(deployment: Deployment, seed: int, n_streets: int = 5,
                      length_range=(400.0, 900.0), min_changes: int = 3) -> tuple[Street, ...]:
    """Seeded street portfolio; each street crosses >= ``min_changes`` best-server borders."""
    gen = seeding.rng(seed, "streets")
    streets: list[Street] = []
    attempts = 0
    while len(streets) < n_streets:
        attempts += 1
        if attempts > 10_000:
            raise RuntimeError("could not place the street portfolio")
        length = gen.uniform(*length_range)
        pts = _polyline(gen, length, n_seg=3, margin=60.0)
        if pts is None:
            continue
        if _best_server_changes(deployment, pts, GUE_ALTITUDE_M) < min_changes:
            continue
        pts = tuple((round(px, 3), round(py, 3)) for px, py in pts)
        streets.append(Street(len(streets), pts, GUE_ALTITUDE_M))
    return tuple(streets)


def build_reference_scenario(seed: int) -> Scenario:
    dep = build_reference_deployment(seed)
    return Scenario(dep, reference_streets(dep, seed))


def uptilt_sectors(deployment: Deployment, sector: int = 0, tilt_deg: float = -20.0) -> Deployment:
    """Copy of ``deployment`` with one sector per site tilted to ``tilt_deg`` (negative = up)."""
    cells = tuple(replace(c, mech_plus_elec_tilt=float(tilt_deg)) if c.cell_id % 3 == sector else c
                  for c in deployment.cells)
    return replace(deployment, cells=cells)


def build_uav_scenario(seed: int, altitude_m: float = UAV_ALTITUDE_M) -> Scenario:
    """Reference streets flown as aerial corridors over a partly uptilted deployment.

    Tilts are inputs here, not optimised: sector 0 of every site points 20 deg up,
    the rest keep their ground downtilt.
    """
    ref = build_reference_scenario(seed)
    streets = tuple(s.at_altitude(altitude_m) for s in ref.streets)
    return Scenario(uptilt_sectors(ref.deployment), streets)


def polyline_points(street: Street, spacing_m: float) -> np.ndarray:
    """Points every ``spacing_m`` metres along the street, clamped at the end."""
    w = np.asarray(street.waypoints, dtype=float)
    seg = np.diff(w, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    total = float(seg_len.sum())
    if total <= 0.0:
        raise ValueError(f"street {street.street_id} has zero length")
    # the 1e-9 guard keeps exact multiples (100 m / 0.0333 m) from gaining a step
    n_steps = max(1, math.ceil(total / spacing_m - 1e-9))
    s = np.minimum(np.arange(n_steps + 1) * spacing_m, total)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg_len) - 1)
    frac = (s - cum[idx]) / seg_len[idx]
    xy = w[idx] + seg[idx] * frac[:, None]
    out = np.empty((len(s), 3))
    out[:, :2] = xy
    out[:, 2] = street.altitude_m
    return out


def sample_trajectory(street: Street, speed_kmh: float, tick_s: float = DEFAULT_TICK_S,
                      direction: str = "forward", seed: int = 0,
                      bounds: tuple[float, float, float, float] | None = None) -> Trajectory:
    """UE positions every ``tick_s`` along ``street`` at constant speed."""
    if speed_kmh <= 0:
        raise ValueError("speed must be positive")
    if tick_s <= 0:
        raise ValueError("tick must be positive")
    if direction not in ("forward", "reverse"):
        raise ValueError(f"unknown direction {direction!r}")
    step = speed_kmh / 3.6 * tick_s
    pos = polyline_points(street, step)
    if bounds is not None:
        x0, y0, x1, y1 = bounds
        pos[:, 0] = np.clip(pos[:, 0], x0, x1)
        pos[:, 1] = np.clip(pos[:, 1], y0, y1)
    if direction == "reverse":
        pos = pos[::-1].copy()
    return Trajectory(street.street_id, float(speed_kmh), float(tick_s), pos, int(seed), direction)


# --- scenario files -------------------------------------------------------

def scenario_to_dict(sc: Scenario) -> dict:
    dep = sc.deployment
    return {
        "schema": SCHEMA_VERSION,
        "cells": [asdict(c) for c in dep.cells],
        "streets": [{"street_id": s.street_id, "waypoints": [list(p) for p in s.waypoints],
                     "altitude_m": s.altitude_m} for s in sc.streets],
        "constants": {
            "area_bounds": list(dep.area_bounds),
            "carrier_hz": dep.carrier_hz,
            "bandwidth_hz": dep.bandwidth_hz,
            "noise_psd_dbm_hz": dep.noise_psd_dbm_hz,
        },
    }


def scenario_from_dict(doc: dict) -> Scenario:
    if doc.get("schema") != SCHEMA_VERSION:
        raise ValueError(f"unsupported scenario schema {doc.get('schema')!r}")
    consts = doc.get("constants", {})
    cells = tuple(CellConfig(
        cell_id=int(c["cell_id"]),
        site_position=tuple(float(v) for v in c["site_position"]),
        azimuth=float(c["azimuth"]),
        mech_plus_elec_tilt=float(c["mech_plus_elec_tilt"]),
        tx_power_dbm=float(c.get("tx_power_dbm", 46.0)),
    ) for c in doc["cells"])
    dep = Deployment(
        cells=cells,
        area_bounds=tuple(consts.get("area_bounds", (0.0, 0.0, AREA_W, AREA_H))),
        carrier_hz=float(consts.get("carrier_hz", 2e9)),
        bandwidth_hz=float(consts.get("bandwidth_hz", 1e7)),
        noise_psd_dbm_hz=float(consts.get("noise_psd_dbm_hz", -174.0)),
    )
    streets = tuple(Street(int(s["street_id"]), tuple(tuple(map(float, p)) for p in s["waypoints"]),
                           float(s.get("altitude_m", GUE_ALTITUDE_M)))
                    for s in doc.get("streets", []))
    return Scenario(dep, streets)


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(sc), indent=2, sort_keys=True) + "\n")


def load_scenario(path) -> Scenario:
    return scenario_from_dict(json.loads(Path(path).read_text()))
