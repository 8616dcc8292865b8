"""Classical fourth-order Runge-Kutta for vectorized autonomous/non-autonomous ODEs."""

from __future__ import annotations

import math

import numpy as np


def rk4_step(rhs, t, y, h):
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = rhs(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def n_steps(duration: float, max_step: float) -> int:
    if duration == 0:
        return 0
    return max(1, math.ceil(abs(duration) / max_step - 1e-12))


def rk4(rhs, y0, t0: float, t1: float, max_step: float, times=None, callback=None):
    """Integrate ``y' = rhs(t, y)`` from ``t0`` to ``t1`` (either direction).

    With ``times`` (monotone, between t0 and t1) the state is recorded at
    each requested time, and the step is adapted so that every requested time
    is hit exactly. ``callback(t, y, h)`` runs after every step.
    """
    y = np.array(y0, dtype=float)
    marks = [t1] if times is None else list(times)
    out = []
    t = t0
    for mark in marks:
        m = n_steps(mark - t, max_step)
        if m:
            h = (mark - t) / m
            for i in range(m):
                y = rk4_step(rhs, t + i * h, y, h)
                if callback is not None:
                    callback(t + (i + 1) * h, y, h)
        t = mark
        out.append(y.copy())
    if times is None:
        return out[0]
    return np.array(out)
