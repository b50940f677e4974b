"""Synthetic site-specific propagation.

Large-scale gain = sector antenna pattern - log-distance path loss + spatially
correlated (Gauss-Markov) shadowing.  RSRP samples add i.i.d. Gaussian jitter
per tick, standing in for residual small-scale fading; the wideband SINR uses
the jitter-free gain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.signal import lfilter

from . import seeding

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class RadioParams:
    n_los: float = 2.2
    n_nlos: float = 3.5
    d0_m: float = 1.0
    carrier_hz: float = 2e9
    always_los_altitude_m: float = 100.0
    shadow_std_db: float = 6.0
    shadow_decorrelation_m: float = 25.0
    jitter_std_db: float = 2.0
    bs_max_gain_dbi: float = 14.0
    h_beamwidth_deg: float = 65.0
    v_beamwidth_deg: float = 10.0
    side_lobe_db: float = 30.0

    @property
    def pl0_db(self) -> float:
        """Free-space loss at the reference distance."""
        return 20.0 * math.log10(4.0 * math.pi * self.d0_m * self.carrier_hz / SPEED_OF_LIGHT)


DEFAULT_PARAMS = RadioParams()


def db_to_mw(x):
    return np.power(10.0, np.asarray(x, dtype=float) / 10.0)


def mw_to_db(x):
    return 10.0 * np.log10(x)


def los_probability(d2d) -> np.ndarray:
    """Ground-UE LoS probability, ``min(18/d, 1)(1 - e^(-d/63)) + e^(-d/63)``."""
    d = np.maximum(np.asarray(d2d, dtype=float), 1e-9)
    e = np.exp(-d / 63.0)
    return np.minimum(18.0 / d, 1.0) * (1.0 - e) + e


def pathloss_db(cell, pos, los: bool = True, params: RadioParams = DEFAULT_PARAMS) -> float:
    """Log-distance path loss; ``los`` is ignored above the always-LoS altitude."""
    d = math.dist(cell.site_position, pos)
    d = max(d, params.d0_m)
    if pos[2] > params.always_los_altitude_m:
        los = True
    n = params.n_los if los else params.n_nlos
    return params.pl0_db + 10.0 * n * math.log10(d / params.d0_m)


def _wrap_deg(a):
    return (np.asarray(a) + 180.0) % 360.0 - 180.0


def _antenna_pattern(daz_deg, del_deg, tilt_deg, params: RadioParams):
    a_h = -np.minimum(12.0 * (daz_deg / params.h_beamwidth_deg) ** 2, params.side_lobe_db)
    a_v = -np.minimum(12.0 * ((del_deg - tilt_deg) / params.v_beamwidth_deg) ** 2, params.side_lobe_db)
    return params.bs_max_gain_dbi + np.maximum(a_h + a_v, -params.side_lobe_db)


def _angles(site_xyz, pos):
    """Azimuth (deg, math convention) and depression angle (deg, below horizon)."""
    dx = pos[..., 0] - site_xyz[..., 0]
    dy = pos[..., 1] - site_xyz[..., 1]
    dz = site_xyz[..., 2] - pos[..., 2]
    az = np.degrees(np.arctan2(dy, dx))
    el = np.degrees(np.arctan2(dz, np.hypot(dx, dy)))
    return az, el


def antenna_gain_db(cell, pos, params: RadioParams = DEFAULT_PARAMS) -> float:
    """Three-sector pattern gain (dBi) of ``cell`` towards ``pos``."""
    site = np.asarray(cell.site_position, dtype=float)
    az, el = _angles(site, np.asarray(pos, dtype=float))
    daz = _wrap_deg(az - cell.azimuth)
    return float(_antenna_pattern(daz, el, cell.mech_plus_elec_tilt, params))


def _geometry(deployment, pos: np.ndarray):
    """Per (position, cell) 2D/3D distance and antenna gain, shapes (T, B)."""
    sites = deployment.site_xyz()
    p = np.asarray(pos, dtype=float)[:, None, :]
    s = sites[None, :, :]
    d2d = np.hypot(p[..., 0] - s[..., 0], p[..., 1] - s[..., 1])
    d3d = np.sqrt(d2d ** 2 + (p[..., 2] - s[..., 2]) ** 2)
    az, el = _angles(s, p)
    azim = np.array([c.azimuth for c in deployment.cells])
    tilt = np.array([c.mech_plus_elec_tilt for c in deployment.cells])
    return d2d, d3d, el, _wrap_deg(az - azim[None, :]), tilt


def gain_no_shadow_db(deployment, pos: np.ndarray, los: np.ndarray,
                      params: RadioParams = DEFAULT_PARAMS) -> np.ndarray:
    """Antenna gain minus path loss, (T, B); ``los`` broadcasts against (T, B)."""
    d2d, d3d, el, daz, tilt = _geometry(deployment, pos)
    ant = _antenna_pattern(daz, el, tilt[None, :], params)
    high = np.asarray(pos)[:, 2:3] > params.always_los_altitude_m
    los = np.logical_or(np.broadcast_to(los, d3d.shape), high)
    n = np.where(los, params.n_los, params.n_nlos)
    pl = params.pl0_db + 10.0 * n * np.log10(np.maximum(d3d, params.d0_m) / params.d0_m)
    return ant - pl


def mean_gain_db(deployment, pos: np.ndarray, params: RadioParams = DEFAULT_PARAMS) -> np.ndarray:
    """Shadowing-free gain assuming NLoS on the ground (LoS when airborne)."""
    return gain_no_shadow_db(deployment, pos, np.zeros((1, deployment.n_cells), bool), params)


def sinr_db(deployment, gains_db, serving: int) -> float:
    """Wideband downlink SINR of ``serving`` given per-cell gains (dB)."""
    rx = db_to_mw(deployment.tx_power_dbm() + np.asarray(gains_db, dtype=float))
    interference = float(rx.sum() - rx[serving])
    return float(10.0 * math.log10(rx[serving] / (interference + 10.0 ** (deployment.noise_dbm / 10.0))))


class ShadowingField:
    """Per-cell Gauss-Markov shadowing along a path.

    Each cell owns a generator keyed by ``(seed, cell_id)``.  Moving ``step``
    metres multiplies the state by ``exp(-step / d_corr)`` and adds the
    innovation that keeps the marginal at ``N(0, std^2)``.
    """

    def __init__(self, n_cells: int, seed: int, std_db: float = 6.0,
                 decorrelation_distance_m: float = 25.0):
        self.std_db = std_db
        self.decorrelation_distance_m = decorrelation_distance_m
        self._gens = [seeding.rng(seed, "shadow", b) for b in range(n_cells)]
        self.current_db = np.array([std_db * g.standard_normal() for g in self._gens])

    def advance(self, step_m: float) -> np.ndarray:
        rho = math.exp(-step_m / self.decorrelation_distance_m)
        innov = math.sqrt(1.0 - rho * rho) * self.std_db
        z = np.array([g.standard_normal() for g in self._gens])
        self.current_db = rho * self.current_db + innov * z
        return self.current_db

    def trace(self, step_lengths: np.ndarray) -> np.ndarray:
        """States for the current point plus one per step, shape (len+1, B).

        Consumes the generators exactly like repeated :meth:`advance` calls.
        """
        steps = np.asarray(step_lengths, dtype=float)
        n = len(steps)
        out = np.empty((n + 1, len(self._gens)))
        out[0] = self.current_db
        if n == 0:
            return out
        z = np.stack([g.standard_normal(n) for g in self._gens], axis=1)
        # runs of identical step length share one AR(1) coefficient
        start = 0
        state = self.current_db.copy()
        while start < n:
            stop = start + 1
            while stop < n and abs(steps[stop] - steps[start]) < 1e-12:
                stop += 1
            rho = math.exp(-steps[start] / self.decorrelation_distance_m)
            innov = math.sqrt(1.0 - rho * rho) * self.std_db
            seg, _ = lfilter([1.0], [1.0, -rho], innov * z[start:stop], axis=0, zi=(rho * state)[None, :])
            out[start + 1:stop + 1] = seg
            state = seg[-1]
            start = stop
        self.current_db = state.copy()
        return out


@dataclass
class RadioSample:
    tick: int
    rsrp_dbm: np.ndarray
    gain_db: np.ndarray


def resolve_los(deployment, positions: np.ndarray, seed: int) -> np.ndarray:
    """One LoS draw per cell for a whole trajectory, at its closest approach."""
    sites = deployment.site_xyz()
    d2d = np.hypot(positions[:, None, 0] - sites[None, :, 0], positions[:, None, 1] - sites[None, :, 1])
    p = los_probability(d2d.min(axis=0))
    u = seeding.rng(seed, "los").uniform(size=deployment.n_cells)
    return u < p


def sample_radio(deployment, pos, shadow: ShadowingField, rng: np.random.Generator, tick: int = 0,
                 los=None, params: RadioParams = DEFAULT_PARAMS) -> RadioSample:
    """One tick of RSRP samples at ``pos`` given the shadowing state already there."""
    pos = np.asarray(pos, dtype=float)[None, :]
    if los is None:
        los = np.zeros(deployment.n_cells, bool)
    gain = gain_no_shadow_db(deployment, pos, np.asarray(los)[None, :], params)[0] + shadow.current_db
    jitter = rng.normal(0.0, 1.0, size=deployment.n_cells) * params.jitter_std_db
    return RadioSample(tick, deployment.tx_power_dbm() + gain + jitter, gain)


@dataclass(eq=False)
class RadioTrace:
    """Parameter-independent radio inputs of one episode.

    ``rsrp_dbm`` are the jittered L1 input samples, ``rx_mw`` the jitter-free
    received powers feeding the SINR.  Rows are ticks, columns cells.
    """
    rsrp_dbm: np.ndarray
    rx_mw: np.ndarray
    noise_mw: float
    _l1: np.ndarray | None = field(default=None, repr=False)
    _sinr: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_arrays(cls, rsrp_dbm, gain_db, tx_power_dbm, noise_dbm: float) -> RadioTrace:
        rsrp = np.ascontiguousarray(rsrp_dbm, dtype=float)
        rx = db_to_mw(np.asarray(tx_power_dbm, dtype=float)[None, :] + np.asarray(gain_db, dtype=float))
        return cls(rsrp, rx, 10.0 ** (noise_dbm / 10.0))

    @property
    def n_ticks(self) -> int:
        return self.rsrp_dbm.shape[0]

    @property
    def n_cells(self) -> int:
        return self.rsrp_dbm.shape[1]

    @property
    def gain_db(self) -> np.ndarray:
        """Received power in dBm (tx power + large-scale gain)."""
        return mw_to_db(self.rx_mw)

    def l1_dbm(self) -> np.ndarray:
        """Linear-domain mean of the 5 samples ending at each tick; rows 0..3 are NaN."""
        if self._l1 is None:
            lin = db_to_mw(self.rsrp_dbm)
            out = np.full_like(lin, np.nan)
            if len(lin) >= 5:
                win = np.lib.stride_tricks.sliding_window_view(lin, 5, axis=0)
                out[4:] = mw_to_db(win.mean(axis=-1))
            self._l1 = out
        return self._l1

    def sinr_column(self, serving: int) -> list[float]:
        """Per-tick SINR (dB) if ``serving`` were the serving cell, as a list."""
        col = self._sinr.get(serving)
        if col is None:
            rx = self.rx_mw[:, serving]
            interf = self.rx_mw.sum(axis=1) - rx
            col = (10.0 * np.log10(rx / (np.maximum(interf, 0.0) + self.noise_mw))).tolist()
            self._sinr[serving] = col
        return col


def radio_trace(deployment, trajectory, seed: int | None = None,
                params: RadioParams = DEFAULT_PARAMS) -> RadioTrace:
    """Vectorised equivalent of shadowing advances plus :func:`sample_radio` per tick."""
    seed = trajectory.seed if seed is None else seed
    pos = trajectory.positions
    los = resolve_los(deployment, pos, seed)
    shadow = ShadowingField(deployment.n_cells, seed, params.shadow_std_db, params.shadow_decorrelation_m)
    steps = np.hypot(*np.diff(pos[:, :2], axis=0).T)
    shadow_db = shadow.trace(steps)
    gain = gain_no_shadow_db(deployment, pos, los[None, :], params) + shadow_db
    jit = seeding.rng(seed, "jitter").normal(0.0, 1.0, size=gain.shape) * params.jitter_std_db
    tx = deployment.tx_power_dbm()
    rsrp = tx[None, :] + gain + jit
    return RadioTrace(rsrp, db_to_mw(tx[None, :] + gain), 10.0 ** (deployment.noise_dbm / 10.0))


@lru_cache(maxsize=48)
def _cached_trace(deployment, traj_key, street, seed, params):
    from .scenario import sample_trajectory

    street_id, speed, tick, altitude, tseed, direction, _ = traj_key
    traj = sample_trajectory(street.at_altitude(altitude), speed, tick, direction, tseed,
                             bounds=deployment.area_bounds)
    return radio_trace(deployment, traj, seed, params)


def cached_radio_trace(deployment, street, speed_kmh: float, altitude_m: float, direction: str,
                       seed: int, tick_s: float = 0.040, params: RadioParams = DEFAULT_PARAMS) -> RadioTrace:
    """Memoised trace for a (street, speed, altitude, direction, seed) episode."""
    key = (street.street_id, float(speed_kmh), float(tick_s), float(altitude_m), int(seed), direction, 0)
    return _cached_trace(deployment, key, street, int(seed), params)


def write_gain_map(deployment, positions: np.ndarray, path, params: RadioParams = DEFAULT_PARAMS) -> None:
    """CSV ``cell_id,x,y,z,gain_db`` of shadowing-free gains for inspection."""
    g = mean_gain_db(deployment, positions, params)
    with open(path, "w") as fh:
        fh.write("cell_id,x,y,z,gain_db\n")
        for b in range(deployment.n_cells):
            for p, v in zip(positions, g[:, b]):
                fh.write(f"{b},{p[0]:.3f},{p[1]:.3f},{p[2]:.3f},{v:.4f}\n")
