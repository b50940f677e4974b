"""Synthetic minimisation benchmarks on the unit cube, for checking the optimiser."""

from __future__ import annotations

import numpy as np

ACKLEY_BOX = (-5.0, 10.0)
LEVY_BOX = (-10.0, 10.0)


def _scale(u, box):
    lo, hi = box
    return lo + (hi - lo) * np.asarray(u, dtype=float)


def ackley(u) -> float:
    """Ackley on [-5, 10]^d; minimum 0 at the origin (off-centre in the cube)."""
    x = _scale(u, ACKLEY_BOX)
    return float(-20.0 * np.exp(-0.2 * np.sqrt(np.mean(x ** 2))) - np.exp(np.mean(np.cos(2 * np.pi * x)))
                 + 20.0 + np.e)


def levy(u) -> float:
    """Levy on [-10, 10]^d; minimum 0 at x = 1."""
    w = 1.0 + (_scale(u, LEVY_BOX) - 1.0) / 4.0
    head = np.sin(np.pi * w[0]) ** 2
    mid = np.sum((w[:-1] - 1) ** 2 * (1 + 10 * np.sin(np.pi * w[:-1] + 1) ** 2))
    tail = (w[-1] - 1) ** 2 * (1 + np.sin(2 * np.pi * w[-1]) ** 2)
    return float(head + mid + tail)
