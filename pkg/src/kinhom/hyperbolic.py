"""Oscillatory transport ``d_t u + a(x/eps) . grad u = 0`` and its kinetic limit.

The direct solver is semi-Lagrangian: ``u_eps(t, x) = U0(X, X/eps)`` with X
the foot of the backward characteristic. For a = a(v) the foot is
``x + eps D(-t/eps; x/eps)`` with D the displacement of the unit-speed flow
of a on the torus, so only the torus phase ``x/eps mod 1`` matters. On a grid
of spacing ``eps/m`` that phase takes ``m^d`` values and the flow is
integrated once per value.

The limit is the kinetic transport ``d_t f + abar(v) . grad_x f = 0`` with
``abar = P a`` and ``f(0) = P U0``, solved exactly per v-slice.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

from kinhom.errors import (
    GridMismatch,
    HypothesisViolation,
    SymmetryViolation,
    UnderresolvedOscillation,
)
from kinhom.ode import n_steps, rk4_step
from kinhom.projection import Characteristics, KernelBasis, ProjectionOperator, project
from kinhom.report import ConvergenceReport, ConvergenceRow
from kinhom.torus import BoxGrid, PeriodicField, TorusGrid, TwoScaleField, divergence_v
from kinhom.two_scale import torus_coordinate


@dataclass(frozen=True, eq=False)
class SeparableInitialData:
    """``U0(x, v) = phi(x) psi(v)`` with psi sampled on a torus grid."""

    phi: Callable
    psi: PeriodicField

    @property
    def vgrid(self) -> TorusGrid:
        return self.psi.grid

    def __call__(self, x, v):
        return self.phi(x) * self.psi(v)

    def project(self, P: ProjectionOperator) -> SeparableInitialData:
        return SeparableInitialData(self.phi, project(P, self.psi))

    def v_mean(self, x):
        return self.phi(x) * float(np.mean(self.psi.values))


@dataclass(frozen=True, eq=False)
class TransportProblem:
    """``d_t u + a . grad u = 0`` with ``u(0, x) = U0(x, x/eps)``.

    ``a`` is either a PeriodicField (velocity ``a(x/eps)``) or a callable of
    x alone, the slow x-dependent case. ``U0`` is any callable ``(x, v)``:
    a :class:`TwoScaleField`, :class:`SeparableInitialData` or a plain
    function.
    """

    a: PeriodicField | Callable
    U0: Callable
    bounds: tuple
    T_final: float
    div_tol: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "bounds", tuple(tuple(map(float, b)) for b in self.bounds))
        if isinstance(self.a, PeriodicField):
            div = divergence_v(self.a).sup_norm()
            if div > self.div_tol * max(1.0, self.a.sup_norm()):
                raise HypothesisViolation(f"div a = {div:.3e}", value=div)
        if self.T_final < 0:
            raise ValueError("T_final must be nonnegative")

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def periodic_velocity(self) -> bool:
        return isinstance(self.a, PeriodicField)


@dataclass
class OscillatorySolution:
    """Snapshots ``u_eps(t_i, x)`` on a box grid."""

    grid: BoxGrid
    epsilon: float
    times: np.ndarray
    values: np.ndarray
    l2_norms: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.l2_norms is None:
            self.l2_norms = np.sqrt([self.grid.integrate(u**2) for u in self.values])

    @property
    def l2_drift(self) -> float:
        """Largest relative change of the discrete L^2 norm over the snapshots."""
        n0 = self.l2_norms[0]
        return float(np.max(np.abs(self.l2_norms - n0)) / n0) if n0 > 0 else 0.0

    def at(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-12 * max(1.0, abs(t)):
            raise KeyError(f"no snapshot at t = {t}")
        return self.values[i]

    def pair(self, theta: Callable, t: float) -> float:
        """``int u_eps(t, x) theta(x) dx``."""
        x = self.grid.coords()
        return float(self.grid.integrate(self.at(t) * theta(x)))


def oscillation_grid(bounds, eps: float, m: int = 8) -> BoxGrid:
    """Box grid with spacing exactly ``eps/m`` when the box allows it."""
    shape = []
    for lo, hi in bounds:
        n = (hi - lo) * m / eps
        shape.append(int(round(n)) if abs(n - round(n)) < 1e-9 * n else int(np.ceil(n)))
    return BoxGrid(tuple(bounds), tuple(shape))


def _torus_displacements(chars: Characteristics, w: np.ndarray, taus: Sequence[float]):
    """Unwrapped displacement ``D(tau) = T(tau, w) - w`` at each requested tau (<= 0)."""
    y = np.array(w, dtype=float)
    out = []
    tau_prev = 0.0
    for tau in taus:
        m = n_steps(tau - tau_prev, chars.step)
        if m:
            h = (tau - tau_prev) / m
            for i in range(m):
                y = rk4_step(chars.rhs, tau_prev + i * h, y, h)
        tau_prev = tau
        out.append(y - w)
    return out


def solve_oscillatory(problem: TransportProblem, eps: float, times=None,
                      points_per_period: int = 8, grid: BoxGrid | None = None,
                      step: float | None = None) -> OscillatorySolution:
    """Direct solution at one eps by backward characteristics.

    ``times`` defaults to ``[0, T_final]``. ``step`` is the RK4 step in the
    fast time ``t/eps`` (default ``min(1/m) / (4 |a|)``).
    """
    times = np.asarray([0.0, problem.T_final] if times is None else times, dtype=float)
    if np.any(np.diff(times) < 0) or times[0] < 0:
        raise ValueError("times must be nondecreasing and nonnegative")
    grid = grid or oscillation_grid(problem.bounds, eps, points_per_period)
    if max(grid.spacing) > eps / 4:
        raise UnderresolvedOscillation(
            f"grid spacing {max(grid.spacing):.3e} exceeds eps/4 = {eps / 4:.3e}"
        )
    x = grid.coords()
    d = grid.dim
    U0 = problem.U0
    snapshots = []
    if problem.periodic_velocity:
        a = problem.a
        if a.grid.dim != d:
            raise GridMismatch("velocity and box dimensions differ")
        if step is None:
            speed = a.sup_norm()
            step = 1.0 / (4 * points_per_period * speed) if speed > 0 else 1.0
        chars = Characteristics(a, step=step)
        w = torus_coordinate(x, eps).reshape(d, -1)
        # distinct torus phases only; on an eps/m grid there are m^d of them
        key = np.round(w * 2**40).astype(np.int64)
        _, first, inverse = np.unique(key, axis=1, return_index=True, return_inverse=True)
        inverse = np.ravel(inverse)
        wu = w[:, first]
        disps = _torus_displacements(chars, wu, [-t / eps for t in times])
        for D in disps:
            Dfull = D[:, inverse].reshape(x.shape)
            foot = x + eps * Dfull
            vfoot = np.mod(w.reshape(x.shape) + Dfull, 1.0)
            snapshots.append(np.asarray(U0(foot, vfoot), dtype=float))
    else:
        vel = problem.a
        hstep = step or 1e-2
        y = x.reshape(d, -1).copy()
        t_prev = 0.0
        rhs = lambda t, z: -np.asarray(vel(z), dtype=float)
        for t in times:
            m = n_steps(t - t_prev, hstep)
            if m:
                h = (t - t_prev) / m
                for i in range(m):
                    y = rk4_step(rhs, i * h, y, h)
            t_prev = t
            foot = y.reshape(x.shape)
            snapshots.append(np.asarray(U0(foot, torus_coordinate(foot, eps)), dtype=float))
    sol = OscillatorySolution(grid, eps, times, np.array(snapshots))
    return sol


@dataclass(frozen=True, eq=False)
class EffectiveKineticSolution:
    """``f(t, x, v) = PU0(x - abar(v) t, v)`` on the torus grid of ``abar``."""

    PU0: Callable
    abar: PeriodicField

    @property
    def vgrid(self) -> TorusGrid:
        return self.abar.grid

    def _groups(self):
        """Torus grid points grouped by equal effective velocity."""
        vg = self.vgrid
        vel = self.abar.values.reshape(vg.dim, -1)
        key = np.round(vel * 2**36).astype(np.int64)
        _, first, inverse = np.unique(key, axis=1, return_index=True, return_inverse=True)
        return vel[:, first], np.ravel(inverse)

    def f(self, t: float, x, v_index=None) -> np.ndarray:
        """f at x for every torus grid point, shape ``(*batch, *vgrid.shape)``."""
        vg = self.vgrid
        x = np.asarray(x, dtype=float)
        vpts = vg.coords().reshape(vg.dim, -1)
        vel = self.abar.values.reshape(vg.dim, -1)
        batch = x.shape[1:]
        out = np.empty(batch + (vpts.shape[1],))
        for j in range(vpts.shape[1]):
            shift = vel[:, j].reshape(-1, *([1] * len(batch)))
            vj = np.broadcast_to(vpts[:, j].reshape(-1, *([1] * len(batch))), x.shape)
            out[..., j] = self.PU0(x - shift * t, vj)
        return out.reshape(batch + vg.shape)

    def snapshot(self, t: float, xgrid: BoxGrid) -> TwoScaleField:
        return TwoScaleField(xgrid, self.vgrid, self.f(t, xgrid.coords()))

    def u(self, t: float, x) -> np.ndarray:
        """``u = int f dv`` by torus quadrature.

        Separable data are summed group by group: each distinct abar value
        costs one evaluation of phi.
        """
        x = np.asarray(x, dtype=float)
        vg = self.vgrid
        if isinstance(self.PU0, SeparableInitialData):
            vel, inverse = self._groups()
            weights = np.bincount(inverse, weights=self.PU0.psi.values.ravel()) / vg.size
            out = np.zeros(x.shape[1:])
            for g in range(vel.shape[1]):
                if weights[g] != 0.0:
                    shift = vel[:, g].reshape(-1, *([1] * (x.ndim - 1)))
                    out += weights[g] * self.PU0.phi(x - shift * t)
            return out
        return np.mean(self.f(t, x).reshape(x.shape[1:] + (-1,)), axis=-1)

    def pair(self, theta: Callable, t: float, ygrid: BoxGrid) -> float:
        """``int u(t, x) theta(x) dx`` through the change of variables ``x = y + abar t``.

        The integrand ``PU0(y, v) theta(y + abar(v) t)`` keeps any kinks of
        the data fixed in y, so ``ygrid`` can align them with its nodes.
        """
        y = ygrid.coords()
        vg = self.vgrid
        if isinstance(self.PU0, SeparableInitialData):
            vel, inverse = self._groups()
            weights = np.bincount(inverse, weights=self.PU0.psi.values.ravel()) / vg.size
            phi = self.PU0.phi(y)
            total = 0.0
            for g in range(vel.shape[1]):
                if weights[g] != 0.0:
                    shift = vel[:, g].reshape(-1, *([1] * (y.ndim - 1)))
                    total += weights[g] * ygrid.integrate(phi * theta(y + shift * t))
            return float(total)
        vpts = vg.coords().reshape(vg.dim, -1)
        vel = self.abar.values.reshape(vg.dim, -1)
        total = 0.0
        for j in range(vpts.shape[1]):
            shape = (-1,) + (1,) * (y.ndim - 1)
            vj = np.broadcast_to(vpts[:, j].reshape(shape), y.shape)
            total += ygrid.integrate(self.PU0(y, vj) * theta(y + vel[:, j].reshape(shape) * t))
        return float(total / vg.size)


def solve_effective_kinetic(PU0: Callable, abar: PeriodicField) -> EffectiveKineticSolution:
    """Exact solution of ``d_t f + abar(v) . grad_x f = 0`` with ``f(0) = PU0``."""
    if not abar.is_vector:
        raise ValueError("abar must be a vector field")
    return EffectiveKineticSolution(PU0, abar)


def effective_problem(problem: TransportProblem, P: ProjectionOperator) -> EffectiveKineticSolution:
    """Project the data and the velocity, then build the effective solution."""
    if not problem.periodic_velocity:
        raise ValueError("the kinetic limit needs a velocity a(v) on the torus")
    U0 = problem.U0
    abar = project(P, problem.a)
    if isinstance(U0, SeparableInitialData):
        PU0 = U0.project(P)
    else:
        PU0 = _ProjectedData(U0, P)
    return solve_effective_kinetic(PU0, abar)


@dataclass(frozen=True, eq=False)
class _ProjectedData:
    """``(P U0(x, .))(v)`` for a general two-scale initial datum."""

    U0: Callable
    P: ProjectionOperator

    def __call__(self, x, v):
        vg = self.P.grid
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        batch = np.broadcast_shapes(x.shape[1:], v.shape[1:])
        vx = vg.coords().reshape(vg.dim, *([1] * len(batch)), -1)
        xx = np.broadcast_to(x, (x.shape[0], *batch))[..., None]
        samples = np.asarray(self.U0(xx, vx), dtype=float)
        flat = samples.reshape(-1, vg.size)
        Pm = self.P.matrix()
        proj = flat @ Pm.T
        # evaluate the projected torus function at v, point by point
        out = np.empty(flat.shape[0])
        vflat = np.broadcast_to(v, (v.shape[0], *batch)).reshape(v.shape[0], -1)
        for i in range(flat.shape[0]):
            out[i] = PeriodicField(vg, proj[i].reshape(vg.shape))(vflat[:, i : i + 1])[0]
        return out.reshape(batch)


def weak_limit_compare(problem: TransportProblem, thetas: Sequence[Callable],
                       epsilons: Sequence[float], P: ProjectionOperator,
                       t: float | None = None, points_per_period: int = 8,
                       ref_spacing: float = 2.0**-9) -> list[ConvergenceReport]:
    """One report per theta: ``<u_eps(t), theta>`` against ``<u(t), theta>``.

    The effective pairing is computed once on a reference grid of spacing
    ``ref_spacing``; the direct pairings use the ``eps/m`` grids.
    """
    t = problem.T_final if t is None else t
    eff = effective_problem(problem, P)
    ygrid = BoxGrid.with_spacing(problem.bounds, ref_spacing)
    refs = [eff.pair(th, t, ygrid) for th in thetas]
    values = [[] for _ in thetas]
    drifts = []
    for eps in epsilons:
        sol = solve_oscillatory(problem, eps, [0.0, t], points_per_period)
        drifts.append(sol.l2_drift)
        for i, th in enumerate(thetas):
            values[i].append(sol.pair(th, t))
    reports = []
    for i, ref in enumerate(refs):
        rows = [ConvergenceRow(float(e), v, ref) for e, v in zip(epsilons, values[i])]
        rep = ConvergenceReport(rows)
        rep.metadata.update(theta=i, time=t, l2_drift=max(drifts))
        reports.append(rep)
    return reports


def weak_kinetic_residual(problem: TransportProblem, sol: OscillatorySolution,
                          theta: Callable, fd_step: float = 1e-3) -> tuple[float, float]:
    """Weak form of the kinetic equation satisfied by ``f_eps = u_eps delta(v - x/eps)``.

    For a test function ``theta(t, x, v)`` returns ``(residual, scale)`` with

        residual = int_0^T <f_eps, (d_t + a . grad_x + a . grad_v / eps) theta> dt
                   - <f_eps(T), theta(T)> + <f_eps(0), theta(0)>

    and ``scale`` the largest of the three terms. The time integral is
    Simpson's rule over the snapshot times, derivatives of theta are
    fourth-order central differences.
    """
    if not problem.periodic_velocity:
        raise ValueError("the kinetic form needs a velocity a(v) on the torus")
    from kinhom.fine_scale import central_diff

    eps = sol.epsilon
    x = sol.grid.coords()
    d = sol.grid.dim
    v = torus_coordinate(x, eps)
    av = problem.a(v.reshape(d, -1)).reshape(x.shape)
    g = []
    for t, u in zip(sol.times, sol.values):
        h = fd_step
        dt = (-theta(t + 2 * h, x, v) + 8 * theta(t + h, x, v) - 8 * theta(t - h, x, v)
              + theta(t - 2 * h, x, v)) / (12 * h)
        dx = sum(av[j] * central_diff(lambda z: theta(t, z, v), x, j, h) for j in range(d))
        dv = sum(av[j] * central_diff(lambda w: theta(t, x, w), v, j, h) for j in range(d))
        g.append(sol.grid.integrate(u * (dt + dx + dv / eps)))
    bulk = float(integrate.simpson(np.asarray(g), x=sol.times))
    end = sol.grid.integrate(sol.values[-1] * theta(sol.times[-1], x, v))
    start = sol.grid.integrate(sol.values[0] * theta(sol.times[0], x, v))
    return bulk - end + start, float(max(abs(bulk), abs(end), abs(start)))


@dataclass(frozen=True, eq=False)
class MomentSystem:
    """Coupling tensors ``A[j][k, n] = <a_j psi_n, psi_k>`` of the moment hierarchy."""

    basis: np.ndarray
    tensors: np.ndarray
    order: int

    def asymmetry(self) -> float:
        return float(np.max(np.abs(self.tensors - np.swapaxes(self.tensors, 1, 2))))

    def characteristic_speeds(self, j: int) -> np.ndarray:
        """Eigenvalues of ``A[j]``, real by symmetry."""
        return np.linalg.eigvalsh(self.tensors[j])


def fourier_basis_v2(grid: TorusGrid, M: int) -> np.ndarray:
    """First M real orthonormal Fourier modes in v2: 1, sqrt2 cos, sqrt2 sin, ..."""
    v2 = grid.coords()[-1]
    out = [np.ones(grid.shape)]
    k = 1
    while len(out) < M:
        out.append(np.sqrt(2) * np.cos(2 * np.pi * k * v2))
        if len(out) < M:
            out.append(np.sqrt(2) * np.sin(2 * np.pi * k * v2))
        k += 1
    return np.array(out[:M])


def assemble_moment_system(basis, a: PeriodicField, M: int | None = None,
                           tol: float = 1e-8) -> MomentSystem:
    """Moment couplings on the first M basis functions by torus quadrature."""
    if isinstance(basis, KernelBasis):
        vecs = basis.vectors
    elif isinstance(basis, (list, tuple)) and basis and isinstance(basis[0], PeriodicField):
        vecs = np.array([b.values for b in basis])
    else:
        vecs = np.asarray(basis, dtype=float)
    M = vecs.shape[0] if M is None else int(M)
    if M > vecs.shape[0]:
        raise ValueError(f"truncation {M} exceeds the basis size {vecs.shape[0]}")
    vecs = vecs[:M]
    n = a.grid.size
    flat = vecs.reshape(M, n)
    gram = flat @ flat.T / n
    if np.max(np.abs(gram - np.eye(M))) > 1e-8:
        raise SymmetryViolation("moment basis is not orthonormal")
    tensors = np.array([(flat * a.values[j].ravel()) @ flat.T / n for j in range(a.grid.dim)])
    sysm = MomentSystem(vecs, tensors, M)
    if sysm.asymmetry() > tol:
        raise SymmetryViolation(f"coupling asymmetry {sysm.asymmetry():.3e} exceeds {tol:g}")
    return sysm
