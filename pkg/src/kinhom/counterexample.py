"""Transport by a slowly varying field whose two-scale limit depends on the subsequence.

The field is ``a(x) = (1, clip(x1, 0, 1))``: straight up-going
characteristics that get sheared while crossing the strip ``0 <= x1 <= 1``.
The data ``K(x) L(x2/eps)`` start left of the strip. After the crossing the
oscillation phase picks up a constant offset ``1/(2 eps)``, so along
``eps_n = 1/(2(n + alpha))`` the limit profile is shifted by alpha.

With ``F(s) = 0, s^2/2, s - 1/2`` on ``s <= 0, [0, 1], s >= 1`` the flow is

    X1 = y1 + t,   X2 = y2 + F(y1 + t) - F(y1).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from kinhom.errors import UnsupportedRegion
from kinhom.ode import rk4
from kinhom.report import ConvergenceReport, ConvergenceRow
from kinhom.torus import BoxGrid, TorusGrid
from kinhom.two_scale import TestFunction, torus_coordinate, two_scale_pairing

SUPPORT_X1 = (-1.0, -0.5)


def velocity(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.array([np.ones_like(x[0]), np.clip(x[0], 0.0, 1.0)])


def F(s):
    s = np.asarray(s, dtype=float)
    return np.where(s <= 0, 0.0, np.where(s <= 1, 0.5 * s * s, s - 0.5))


def smooth_bump(s):
    """``exp(1 - 1/(1 - s^2))`` on ``|s| < 1``, zero outside; peak value 1."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


def default_envelope(x, half_width2: float = 0.25):
    """Smooth K supported in ``[-1, -1/2] x [-w, w]``."""
    return smooth_bump((x[0] + 0.75) / 0.25) * smooth_bump(x[1] / half_width2)


def exact_characteristics(t, y) -> np.ndarray:
    """Forward trace ``X(t; y)`` from the piecewise closed form.

    Regimes: before the strip (``t < -y1``), inside it, and after it
    (``t > 1 - y1``). Only starting points in the support band
    ``-1 <= y1 <= -1/2`` are accepted.
    """
    y = np.asarray(y, dtype=float)
    lo, hi = SUPPORT_X1
    if np.any((y[0] < lo - 1e-12) | (y[0] > hi + 1e-12)):
        raise UnsupportedRegion(f"starting x1 outside the support band [{lo}, {hi}]")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise UnsupportedRegion("closed-form traces are forward in time")
    t0 = -y[0]
    t1 = 1.0 - y[0]
    x1 = y[0] + t
    x2 = np.where(t <= t0, y[1], np.where(t <= t1, y[1] + 0.5 * x1**2, y[1] + x1 - 0.5))
    return np.array([x1, x2])


def numeric_characteristics(t: float, y, step: float = 2.0**-14) -> np.ndarray:
    """RK4 trace of the same flow, for cross-checking."""
    return rk4(lambda _, z: velocity(z), np.asarray(y, dtype=float), 0.0, t, step)


def backward_foot(t, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.array([x[0] - t, x[1] - F(x[0]) + F(x[0] - t)])


def solution(t, x, eps, K: Callable = default_envelope, L: Callable | None = None):
    """``u_eps(t, x) = K(y) L(y2/eps)`` with y the backward foot of x.

    K vanishes off the band, so the value is 0 wherever the foot leaves it.
    """
    L = L or (lambda s: np.sin(2 * np.pi * s))
    y = backward_foot(t, x)
    return K(y) * L(torus_coordinate(y[1], eps))


def subsequence(alpha: float, ns: Sequence[int]) -> np.ndarray:
    """``eps_n = 1/(2(n + alpha))`` so that ``1/(2 eps_n) mod 1 = alpha``."""
    return np.array([1.0 / (2.0 * (n + alpha)) for n in ns])


def support_box(t: float, half_width2: float = 0.25, margin: float = 0.05):
    """Box containing the support of ``u(t, .)`` for the default envelope."""
    y1 = np.linspace(*SUPPORT_X1, 257)
    x1 = y1 + t
    shift = F(x1) - F(y1)
    b1 = (x1.min() - margin, x1.max() + margin)
    b2 = (shift.min() - half_width2 - margin, shift.max() + half_width2 + margin)
    return (b1, b2)


def predicted_limit(t: float, alpha: float, x, v, K: Callable = default_envelope,
                    L: Callable | None = None):
    """Two-scale limit along the alpha-subsequence.

    ``K(x1 - t, x2 - x1 + 1/2) L(v2 - v1 + alpha)`` after the crossing
    (t > 2) and 0 while the data are still being sheared (1 <= t <= 3/2).
    """
    L = L or (lambda s: np.sin(2 * np.pi * s))
    x = np.asarray(x, dtype=float)
    if t > 2:
        return K(np.array([x[0] - t, x[1] - x[0] + 0.5])) * L(v[1] - v[0] + alpha)
    if 1 <= t <= 1.5:
        return np.zeros(np.broadcast_shapes(x.shape[1:], np.shape(v)[1:]))
    raise UnsupportedRegion(f"no closed-form limit at t = {t}")


def limit_pairing(t: float, alpha: float, theta: TestFunction, box: BoxGrid,
                  vgrid: TorusGrid | None = None, K: Callable = default_envelope,
                  L: Callable | None = None) -> float:
    """``int int f(t, x, v) theta(x, v) dv dx`` by box times torus quadrature."""
    vgrid = vgrid or TorusGrid((32, 32))
    x = box.coords()
    vpts = vgrid.coords().reshape(2, -1)
    acc = np.zeros(box.shape)
    for j in range(vpts.shape[1]):
        v = np.broadcast_to(vpts[:, j].reshape(2, 1, 1), x.shape)
        acc += predicted_limit(t, alpha, x, v, K, L) * theta(x, v)
    return float(box.integrate(acc / vpts.shape[1]))


@dataclass
class SubsequenceTable:
    """Per-alpha convergence reports of ``<f_eps_n, theta>``."""

    t: float
    reports: dict

    def limits(self) -> dict:
        return {a: r.extrapolated for a, r in self.reports.items()}

    def deviations(self) -> dict:
        return {a: r.extrapolated_error for a, r in self.reports.items()}

    def spread(self) -> float:
        vals = list(self.limits().values())
        return float(max(vals) - min(vals))


def subsequence_limits(theta: TestFunction, alphas: Sequence[float], t: float,
                       ns: Sequence[int] = (4, 8, 16, 32), K: Callable = default_envelope,
                       L: Callable | None = None, points_per_period: int = 8) -> SubsequenceTable:
    """Pair the exact ``u_eps`` against theta along each alpha-subsequence."""
    bounds = support_box(t)
    reports = {}
    ref_box = BoxGrid.with_spacing(bounds, 2.0**-8)
    for alpha in alphas:
        eps_list = subsequence(alpha, ns)
        try:
            ref = limit_pairing(t, alpha, theta, ref_box, K=K, L=L)
        except UnsupportedRegion:
            ref = float("nan")
        rows = []
        for eps in eps_list:
            grid = BoxGrid.with_spacing(bounds, eps / points_per_period)
            u = solution(t, grid.coords(), eps, K, L)
            rows.append(ConvergenceRow(float(eps), two_scale_pairing(u, theta, eps, grid,
                                                                     points_per_period), ref))
        rep = ConvergenceReport(rows)
        rep.metadata.update(alpha=alpha, t=t)
        reports[alpha] = rep
    return SubsequenceTable(t, reports)
