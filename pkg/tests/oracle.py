"""Straight-line reference scan of the handover rules, used to cross-check ``UeStack``.

Written without the library's state objects: every quantity is recomputed
from the raw per-tick samples (L1 windows from scratch, SINR from received
powers), and timers are expressed as start ticks instead of accumulators.
"""

from __future__ import annotations

import math


def _l1(rsrp, t, cell):
    """Linear-mW mean of the 5 samples ending at tick t."""
    return 10.0 * math.log10(sum(10.0 ** (rsrp[k][cell] / 10.0) for k in range(t - 4, t + 1)) / 5.0)


def _sinr(rx, noise_mw, t, cell):
    own = rx[t][cell]
    other = sum(rx[t]) - own
    return 10.0 * math.log10(own / (other + noise_mw))


def _best(values, exclude=None):
    best, idx = -math.inf, -1
    for i, v in enumerate(values):
        if i != exclude and v > best:
            best, idx = v, i
    return idx


def scan(rsrp, rx, noise_mw, a3, ttt, *, tick_ms=40, q_out=-8.0, q_in=-6.0, t310_ms=1000, tp_ms=1000,
         prep_ms=50, exec_ms=40, coeff=0.5, detach_ticks=5):
    """Event tuples ``(tick, kind, serving, target)`` for kinds A3_TRIGGER/HO/HOF/PP/RLF."""
    n = len(rsrp)
    n_cells = len(rsrp[0])
    ho_ticks = math.ceil((prep_ms + exec_ms) / tick_ms)
    events = []

    serving = -1
    l3 = None
    phase_count = 0          # ticks since last L3 update (or since detach)
    ttt_target, ttt_checks = -1, 0
    ho_start, ho_target = None, -1
    t310_start = None
    prev_source, attach_tick = None, 0

    def detach():
        nonlocal serving, l3, phase_count, ttt_target, ttt_checks, ho_start, ho_target, t310_start, prev_source
        serving, l3, phase_count = -1, None, 0
        ttt_target, ttt_checks = -1, 0
        ho_start, ho_target = None, -1
        t310_start, prev_source = None, None

    for t in range(n):
        if serving < 0:
            phase_count += 1
            if phase_count >= detach_ticks:
                l3 = [_l1(rsrp, t, c) for c in range(n_cells)]
                serving = _best(l3)
                phase_count = 0
                attach_tick = t
            continue

        s = _sinr(rx, noise_mw, t, serving)
        # radio link monitoring
        if t310_start is not None and s > q_in:
            t310_start = None
        elif t310_start is None and s < q_out:
            t310_start = t
        if t310_start is not None and (t - t310_start + 1) * tick_ms >= t310_ms:
            events.append((t, "RLF", serving, -1))
            if ho_start is not None:
                events.append((t, "HO", serving, ho_target))
                events.append((t, "HOF", serving, ho_target))
            detach()
            continue

        if ho_start is not None and t - ho_start >= ho_ticks:
            events.append((t, "HO", serving, ho_target))
            if s < q_out:
                events.append((t, "HOF", serving, ho_target))
                detach()
                continue
            if prev_source == ho_target and (t - attach_tick) * tick_ms < tp_ms:
                events.append((t, "PP", serving, ho_target))
            prev_source, serving = serving, ho_target
            attach_tick = t
            t310_start = None
            ho_start, ho_target = None, -1
            ttt_target, ttt_checks = -1, 0

        phase_count += 1
        if phase_count < 5:
            continue
        phase_count = 0
        l3 = [0.5 * p + 0.5 * _l1(rsrp, t, c) if coeff == 0.5 else (1 - coeff) * p + coeff * _l1(rsrp, t, c)
              for c, p in enumerate(l3)]
        if ho_start is not None or n_cells < 2:
            continue
        cand = _best(l3, exclude=serving)
        if l3[cand] > l3[serving] + a3[serving]:
            if cand == ttt_target:
                ttt_checks += 1
            else:
                ttt_target, ttt_checks = cand, 1
            if ttt_checks * 5 * tick_ms >= ttt[serving]:
                events.append((t, "A3_TRIGGER", serving, cand))
                ho_start, ho_target = t, cand
                ttt_target, ttt_checks = -1, 0
        else:
            ttt_target, ttt_checks = -1, 0
    return events
