"""Weak pairings of the kinetic decomposition ``f_eps = u_eps delta_p(v - x/eps)``.

A pairing ``<f_eps, theta>`` is the quadrature of ``u_eps(x) theta(x, x/eps)``
over a box. Everything here is a plain rectangle-rule sum on a
:class:`~kinhom.torus.BoxGrid`, guarded by a resolution check: if the grid
cannot see the oscillation scale the pairing is meaningless, so we refuse.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from kinhom.errors import UnderresolvedOscillation
from kinhom.report import ConvergenceReport, ConvergenceRow
from kinhom.torus import BoxGrid, PeriodicField, TorusGrid


@dataclass(frozen=True)
class TestFunction:
    """A test function ``theta(x, v)`` (or ``theta(x, v, w)``), 1-periodic in v, w.

    ``fn`` receives arrays of shape ``(d, ...)`` per argument and returns the
    broadcast batch shape. ``v_average``, when known in closed form, is
    ``x -> int theta(x, v) dv`` and spares a torus quadrature.
    """

    __test__ = False  # keep pytest from collecting this class

    fn: Callable
    scales: int = 2
    compact_in_x: bool = True
    smoothness: str = "C-infinity"
    v_average: Optional[Callable] = None

    def __call__(self, x, v, w=None):
        if self.scales == 3:
            return self.fn(x, v, w)
        return self.fn(x, v)

    @classmethod
    def separable(cls, phi: Callable, psi: Callable, chi: Callable | None = None,
                  psi_mean: float | None = None, **kw) -> TestFunction:
        """``phi(x) psi(v)`` or, with ``chi``, ``phi(x) psi(v) chi(w)``."""
        if chi is None:
            avg = None if psi_mean is None else (lambda x: phi(x) * psi_mean)
            return cls(lambda x, v: phi(x) * psi(v), scales=2, v_average=avg, **kw)
        return cls(lambda x, v, w: phi(x) * psi(v) * chi(w), scales=3, **kw)

    @classmethod
    def of_x(cls, phi: Callable, **kw) -> TestFunction:
        return cls(lambda x, v: phi(x), scales=2, v_average=phi, **kw)


@dataclass(frozen=True)
class OscillatoryFamily:
    """``u(x, eps)`` together with a strictly decreasing ladder of eps values."""

    u: Callable
    epsilons: tuple[float, ...]

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        if any(e <= 0 for e in eps):
            raise ValueError("epsilon values must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilon ladder must be strictly decreasing")
        object.__setattr__(self, "epsilons", eps)

    def sample(self, grid: BoxGrid, eps: float) -> np.ndarray:
        values = np.asarray(self.u(grid.coords(), eps), dtype=float)
        if not np.isfinite(grid.integrate(values**2)):
            raise ValueError("u_eps is not square integrable on the box")
        return values


def dyadic_ladder(kmin: int, kmax: int) -> tuple[float, ...]:
    """``(2^-kmin, ..., 2^-kmax)``."""
    return tuple(2.0 ** (-k) for k in range(kmin, kmax + 1))


def torus_coordinate(x, scale: float) -> np.ndarray:
    """``x / scale mod 1`` with the reduction done before the division.

    ``fmod`` is exact in floating point, so the fractional part keeps full
    relative accuracy even when ``x / scale`` is large.
    """
    r = np.mod(np.asarray(x, dtype=float), scale) / scale
    return np.where(r >= 1.0, 0.0, r)


def check_resolution(grid: BoxGrid, scale: float, points_per_period: float = 8) -> None:
    if points_per_period < 4:
        raise ValueError("points_per_period below 4 cannot resolve any oscillation")
    h = max(grid.spacing)
    if h > scale / points_per_period * (1 + 1e-9):
        raise UnderresolvedOscillation(
            f"grid spacing {h:.3e} exceeds scale/{points_per_period:g} = "
            f"{scale / points_per_period:.3e}"
        )


def _sample_u(u, grid: BoxGrid) -> np.ndarray:
    if callable(u):
        return np.asarray(u(grid.coords()), dtype=float)
    u = np.asarray(u)
    if u.shape != grid.shape:
        raise ValueError(f"u has shape {u.shape}, grid has {grid.shape}")
    return u


def two_scale_pairing(u, theta: TestFunction, eps: float, grid: BoxGrid,
                      points_per_period: float = 8) -> float:
    """``int u(x) theta(x, x/eps) dx`` by the rectangle rule on ``grid``."""
    check_resolution(grid, eps, points_per_period)
    uu = _sample_u(u, grid)
    if not np.any(uu):
        return 0.0
    x = grid.coords()
    return float(grid.integrate(uu * theta(x, torus_coordinate(x, eps))))


def triple_scale_pairing(u, theta: TestFunction, eps: float, grid: BoxGrid,
                         points_per_period: float = 8) -> float:
    """``int u(x) theta(x, x/eps, x/eps^2) dx``."""
    check_resolution(grid, eps * eps, points_per_period)
    uu = _sample_u(u, grid)
    if not np.any(uu):
        return 0.0
    x = grid.coords()
    v = torus_coordinate(x, eps)
    w = torus_coordinate(x, eps * eps)
    if theta.scales == 3:
        vals = theta(x, v, w)
    else:
        vals = theta(x, v)
    return float(grid.integrate(uu * vals))


def theta_v_average(theta: TestFunction, x: np.ndarray, vgrid: TorusGrid) -> np.ndarray:
    """``int theta(x, v) dv`` by torus quadrature (or the closed form if given)."""
    if theta.v_average is not None:
        return np.asarray(theta.v_average(x), dtype=float)
    vpts = vgrid.coords().reshape(vgrid.dim, -1)
    acc = np.zeros(x.shape[1:])
    shape = (vgrid.dim,) + (1,) * (x.ndim - 1)
    for j in range(vpts.shape[1]):
        acc += theta(x, vpts[:, j].reshape(shape))
    return acc / vpts.shape[1]


def corrector_pairing(u, theta: TestFunction, eps: float, grid: BoxGrid,
                      vgrid: TorusGrid | None = None, points_per_period: float = 8) -> float:
    """``eps^-1 [ int u theta(x, x/eps) dx - int int u theta(x, v) dv dx ]``.

    This is the pairing of ``g_eps = u_eps eps^-1 (delta_p(v - x/eps) - 1)``,
    the first-order corrector of the decomposition.
    """
    check_resolution(grid, eps, points_per_period)
    uu = _sample_u(u, grid)
    if not np.any(uu):
        return 0.0
    x = grid.coords()
    vgrid = vgrid or TorusGrid((32,) * grid.dim)
    osc = theta(x, torus_coordinate(x, eps))
    avg = theta_v_average(theta, x, vgrid)
    return float(grid.integrate(uu * (osc - avg)) / eps)


def verify_noncorrelation(
    phi: PeriodicField | Callable,
    psi: PeriodicField | Callable,
    theta: Callable,
    epsilons: Sequence[float],
    delta: Callable[[float], float],
    bounds,
    points_per_period: float = 8,
) -> ConvergenceReport:
    """Table of ``int theta(x) phi(x/eps) psi(x/(eps delta)) dx`` against
    ``int psi int phi int theta``.

    Oscillations at two separated scales decorrelate only if ``delta(eps) -> 0``.
    The report's metadata records whether the supplied ``delta`` actually
    decreases along the ladder (``hypothesis_violated`` otherwise), and the
    deviation of the extrapolated limit from the product of means.
    """
    eps_list = [float(e) for e in epsilons]
    deltas = [float(delta(e)) for e in eps_list]
    d = len(bounds)

    def mean_of(fn):
        if isinstance(fn, PeriodicField):
            return float(np.mean(fn.values))
        g = TorusGrid((64,) * d)
        return float(np.mean(fn(g.coords())))

    values, theta_ints = [], []
    for e, dl in zip(eps_list, deltas):
        inner_scale = e * dl
        h = min(e, inner_scale) / points_per_period
        grid = BoxGrid.with_spacing(bounds, h)
        x = grid.coords()
        th = np.asarray(theta(x), dtype=float)
        vals = th * phi(torus_coordinate(x, e)) * psi(torus_coordinate(x, inner_scale))
        values.append(float(grid.integrate(vals)))
        theta_ints.append(float(grid.integrate(th)))
    reference = mean_of(phi) * mean_of(psi) * theta_ints[-1]
    rows = [ConvergenceRow(e, v, reference) for e, v in zip(eps_list, values)]
    separated = all(b < a for a, b in zip(deltas, deltas[1:])) and deltas[-1] < deltas[0]
    report = ConvergenceReport(rows)
    report.metadata.update(
        hypothesis_violated=not separated,
        deltas=deltas,
        theta_integral=theta_ints[-1],
        limit_deviation=report.extrapolated - reference,
        slope=report.decay_slope(),
    )
    return report
