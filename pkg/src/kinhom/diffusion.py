"""Advection-diffusion with a strong oscillating drift and its effective diffusion.

The direct problem is ``d_t u + eps^-1 a(x/eps) . grad u = alpha Lap u`` on a
periodic box. Its limit is ``d_t u = alpha div(D grad u)`` with

    D_ij = delta_ij + int grad chi_i . grad chi_j dv,

where the cell functions solve ``alpha Lap chi_k - div(a chi_k) = a_k`` on
the torus. Multiplying the cell problem by chi_j gives the second form
``alpha D_ij = alpha delta_ij - 1/2 int (a_i chi_j + a_j chi_i)``; both are
computed and compared.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import LinearOperator, gmres

from kinhom.errors import EnergyGrowth, FormMismatch, HypothesisViolation, NonConvergence
from kinhom.hyperbolic import _torus_displacements
from kinhom.projection import Characteristics
from kinhom.report import ConvergenceReport, ConvergenceRow
from kinhom.torus import (
    BoxGrid,
    PeriodicField,
    TorusGrid,
    divergence_v,
    interpolate_box,
    spectral_gradient,
)
from kinhom.two_scale import TestFunction, corrector_pairing, torus_coordinate


@dataclass(frozen=True, eq=False)
class DiffusionProblem:
    """Data of the direct problem; ``U0(x, v)`` is evaluated at ``v = x/eps``."""

    a: PeriodicField
    alpha: float
    U0: Callable
    bounds: tuple
    T_final: float
    div_tol: float = 1e-8
    mean_tol: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "bounds", tuple(tuple(map(float, b)) for b in self.bounds))
        check_cell_hypotheses(self.a, self.div_tol, self.mean_tol)
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.T_final < 0:
            raise ValueError("T_final must be nonnegative")

    @property
    def dim(self) -> int:
        return len(self.bounds)


def check_cell_hypotheses(a: PeriodicField, div_tol: float = 1e-8, mean_tol: float = 1e-10):
    """``div a = 0`` and ``int a = 0``, the solvability conditions of the cell problem."""
    if not a.is_vector:
        raise ValueError("a must be a vector field")
    div = divergence_v(a).sup_norm()
    if div > div_tol * max(1.0, a.sup_norm()):
        raise HypothesisViolation(f"div a = {div:.3e} exceeds {div_tol:g}", value=div)
    mean = np.max(np.abs(np.mean(a.values, axis=a.grid.axes)))
    if mean > mean_tol:
        raise HypothesisViolation(f"int a = {mean:.3e} is not zero", value=mean)


@dataclass
class CellSolution:
    """Cell functions chi_k with residuals and the effective matrix (gradient form)."""

    a: PeriodicField
    alpha: float
    chi: list
    residuals: np.ndarray
    iterations: list
    D: np.ndarray = field(default=None)

    @property
    def grid(self) -> TorusGrid:
        return self.a.grid

    def to_json(self) -> str:
        D_grad, D_flux = effective_matrix(self, check=False)
        return json.dumps(
            {
                "alpha": self.alpha,
                "grid": list(self.grid.shape),
                "D_gradient": D_grad.tolist(),
                "D_flux": D_flux.tolist(),
                "residuals": [float(r) for r in self.residuals],
                "iterations": list(self.iterations),
            },
            indent=2,
        )


def _cell_operator(a: PeriodicField, alpha: float):
    g = a.grid
    lap = -g.squared_wavenumber()
    syms = g.derivative_symbols()
    avals = a.values

    def apply(x):
        u = x.reshape(g.shape)
        uh = np.fft.fftn(u)
        out = alpha * np.fft.ifftn(lap * uh).real
        for j, s in enumerate(syms):
            out -= np.fft.ifftn(s * np.fft.fftn(avals[j] * u)).real
        return out.ravel()

    inv = np.zeros(g.shape)
    nz = lap != 0
    inv[nz] = 1.0 / (alpha * lap[nz])

    def precond(x):
        return np.fft.ifftn(inv * np.fft.fftn(x.reshape(g.shape))).real.ravel()

    return apply, precond


def solve_cell_problem(a: PeriodicField, alpha: float, rtol: float = 1e-12,
                       maxiter: int = 200, residual_tol: float = 1e-8) -> CellSolution:
    """GMRES in physical space with the inverse Laplacian as preconditioner.

    Each chi_k is normalized to mean zero. Raises NonConvergence when the
    true relative residual exceeds ``residual_tol``.
    """
    check_cell_hypotheses(a)
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    g = a.grid
    n = g.size
    apply, precond = _cell_operator(a, alpha)
    A = LinearOperator((n, n), matvec=apply, dtype=float)
    M = LinearOperator((n, n), matvec=precond, dtype=float)
    chis, res, its = [], [], []
    for k in range(g.dim):
        b = a.values[k].ravel()
        bn = np.linalg.norm(b)
        if bn == 0:
            chis.append(PeriodicField(g, np.zeros(g.shape)))
            res.append(0.0)
            its.append(0)
            continue
        count = [0]

        def cb(_):
            count[0] += 1

        x, info = gmres(A, b, M=M, rtol=rtol, atol=0.0, restart=min(n, 100), maxiter=maxiter,
                        callback=cb, callback_type="pr_norm")
        x = x - x.mean()
        r = float(np.linalg.norm(apply(x) - b) / bn)
        if r > residual_tol:
            raise NonConvergence(count[0], r, f"in cell problem k={k}")
        chis.append(PeriodicField(g, x.reshape(g.shape)))
        res.append(r)
        its.append(count[0])
    cell = CellSolution(a, float(alpha), chis, np.array(res), its)
    cell.D = gradient_form(cell)
    return cell


def gradient_form(cell: CellSolution) -> np.ndarray:
    """``delta_ij + int grad chi_i . grad chi_j``."""
    grads = [spectral_gradient(c).values for c in cell.chi]
    d = len(grads)
    G = np.array([[np.mean(np.sum(grads[i] * grads[j], axis=0)) for j in range(d)]
                  for i in range(d)])
    return np.eye(d) + G


def flux_form(cell: CellSolution) -> np.ndarray:
    """``delta_ij - (2 alpha)^-1 int (a_i chi_j + a_j chi_i)``."""
    d = len(cell.chi)
    S = np.array([[np.mean(cell.a.values[i] * cell.chi[j].values) for j in range(d)]
                  for i in range(d)])
    return np.eye(d) - 0.5 * (S + S.T) / cell.alpha


def effective_matrix(cell: CellSolution, tol: float = 1e-8, check: bool = True):
    """Both forms of D. Raises FormMismatch if ``alpha |D_grad - D_flux| > tol``."""
    D_grad = gradient_form(cell)
    D_flux = flux_form(cell)
    gap = cell.alpha * float(np.max(np.abs(D_grad - D_flux)))
    if check and gap > tol:
        raise FormMismatch(f"gradient and flux forms of D differ by {gap:.3e}")
    return D_grad, D_flux


def quadratic_form(cell: CellSolution, nu) -> float:
    """``|nu|^2 + int |grad(chi . nu)|^2``, equal to ``nu . D nu``."""
    nu = np.asarray(nu, dtype=float)
    combo = PeriodicField(cell.grid, sum(n * c.values for n, c in zip(nu, cell.chi)))
    return float(nu @ nu + np.mean(np.sum(spectral_gradient(combo).values ** 2, axis=0)))


def effective_matrix_field(a_of_x: Callable, vgrid: TorusGrid, alpha: float, xs) -> np.ndarray:
    """Best-effort D(x) for slowly varying ``a(x, v)``: one cell solve per sample x.

    ``a_of_x(x)`` returns the vector field values on ``vgrid`` at the point x.
    Returns an array of shape ``(n, d, d)``; interpolation between samples is
    left to the caller.
    """
    out = []
    for x in np.asarray(xs, dtype=float).T:
        cell = solve_cell_problem(PeriodicField(vgrid, a_of_x(x)), alpha)
        out.append(cell.D)
    return np.array(out)


def _periodic_grid(bounds, eps: float, ppp: int) -> BoxGrid:
    shape = []
    for lo, hi in bounds:
        cells = (hi - lo) / eps
        if abs(cells - round(cells)) > 1e-9 * max(1.0, cells):
            raise ValueError(f"box length {hi - lo} is not a whole number of cells of size {eps}")
        shape.append(int(round(cells)) * ppp)
    return BoxGrid(tuple(bounds), tuple(shape), periodic=True)


def _is_shear(a: PeriodicField) -> bool:
    """``a = (b(v2), 0)``: the drift shifts each x2-row rigidly."""
    if a.grid.dim != 2:
        return False
    return bool(np.all(a.values[1] == 0) and np.allclose(a.values[0], a.values[0][:1, :],
                                                          atol=1e-14, rtol=0))


@dataclass
class DiffusionSolution:
    grid: BoxGrid
    epsilon: float
    times: np.ndarray
    values: np.ndarray
    energies: np.ndarray
    dissipation: np.ndarray
    method: str

    @property
    def balance(self) -> np.ndarray:
        """``E(0) - E(t) - 2 alpha int_0^t int |grad u|^2``; zero up to advection losses."""
        return self.energies[0] - self.energies - self.dissipation

    def energy_inequality_margin(self) -> float:
        """Smallest ``E(0) - E(t) - alpha int_0^t int |grad u|^2`` relative to E(0)."""
        if self.energies[0] == 0:
            return 0.0
        return float(np.min(self.energies[0] - self.energies - 0.5 * self.dissipation)
                     / self.energies[0])

    def at(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-12 * max(1.0, abs(t)):
            raise KeyError(f"no snapshot at t = {t}")
        return self.values[i]


def solve_direct_diffusion(problem: DiffusionProblem, eps: float, times=None,
                           dt: float | None = None, points_per_period: int = 8,
                           method: str = "auto", energy_tol: float = 1e-6) -> DiffusionSolution:
    """Strang splitting: exact diffusion half-steps around an advection step.

    The advection step moves u along ``dx/dt = eps^-1 a(x/eps)``. For a shear
    field it is an exact Fourier phase shift per row ("shear"); otherwise the
    foot of each grid point is integrated once on the torus and u is
    interpolated there by periodic cubic splines ("semi-lagrangian").
    ``method="exponential"`` (shear fields only) skips the splitting and
    applies the exact propagator of each x1-Fourier mode, as a reference.

    The energy ``int u^2`` must not increase by more than ``energy_tol``
    (relative) over any step; EnergyGrowth otherwise.
    """
    times = np.asarray([0.0, problem.T_final] if times is None else times, dtype=float)
    if times[0] < 0 or np.any(np.diff(times) < 0):
        raise ValueError("times must be nondecreasing and nonnegative")
    a = problem.a
    shear = _is_shear(a)
    if method == "auto":
        method = "shear" if shear else "semi-lagrangian"
    if method in ("shear", "exponential") and not shear:
        raise ValueError(f"method {method!r} needs a shear field a = (b(v2), 0)")
    if method not in ("shear", "exponential", "semi-lagrangian"):
        raise ValueError(f"unknown method {method!r}")
    grid = _periodic_grid(problem.bounds, eps, points_per_period)
    if a.grid.dim != grid.dim:
        raise ValueError("velocity and box dimensions differ")
    x = grid.coords()
    u = np.asarray(problem.U0(x, torus_coordinate(x, eps)), dtype=float)
    ks = grid.wavenumbers()
    k2 = sum(k**2 for k in ks)
    alpha = problem.alpha
    vol = grid.cell_volume
    n = grid.size
    if dt is None:
        dt = eps**2 / 4

    if method == "exponential":
        return _exponential_shear(problem, eps, grid, u, times)

    if method == "shear":
        b = PeriodicField(a.grid, a.values[0])
        v2 = torus_coordinate(x[1][0], eps)
        speed = b(np.array([np.zeros_like(v2), v2])) / eps
        k1 = ks[0]

        def advect(uh, h):
            # uh is the Fourier transform in x1 only
            return uh * np.exp(-1j * k1 * (speed * h)[None, :])

    else:
        chars = Characteristics(a)
        w = torus_coordinate(x, eps).reshape(grid.dim, -1)
        key = np.round(w * 2**40).astype(np.int64)
        _, first, inverse = np.unique(key, axis=1, return_index=True, return_inverse=True)
        inverse = np.ravel(inverse)
        feet_cache = {}

        def feet(h):
            if h not in feet_cache:
                D = _torus_displacements(chars, w[:, first], [-h / eps**2])[0]
                feet_cache[h] = x + eps * D[:, inverse].reshape(x.shape)
            return feet_cache[h]

    def energy(vals):
        return float(np.sum(vals**2) * vol)

    def diffuse(vals, h):
        uh = np.fft.fftn(vals)
        lost = float(np.sum(np.abs(uh) ** 2 * (1 - np.exp(-2 * alpha * k2 * h)))) * vol / n
        return np.fft.ifftn(uh * np.exp(-alpha * k2 * h)).real, lost

    def step(vals, h):
        vals, l1 = diffuse(vals, h / 2)
        if method == "shear":
            vals = np.fft.ifft(advect(np.fft.fft(vals, axis=0), h), axis=0).real
        else:
            vals = interpolate_box(grid, vals, feet(h))
        vals, l2 = diffuse(vals, h / 2)
        return vals, l1 + l2

    out, energies, diss = [], [], []
    t, E, lost_total = 0.0, energy(u), 0.0
    for mark in times:
        m = int(np.ceil((mark - t) / dt - 1e-12)) if mark > t else 0
        if m:
            h = (mark - t) / m
            for _ in range(m):
                u, lost = step(u, h)
                E_new = energy(u)
                if E_new > E * (1 + energy_tol) + 1e-300:
                    raise EnergyGrowth(f"int u^2 grew from {E:.12e} to {E_new:.12e}")
                E = E_new
                lost_total += lost
        t = mark
        out.append(u.copy())
        energies.append(E)
        diss.append(lost_total)
    return DiffusionSolution(grid, eps, times, np.array(out), np.array(energies), np.array(diss),
                             method)


def _exponential_shear(problem, eps, grid, u, times) -> DiffusionSolution:
    """Exact propagator per x1-mode: ``d_t uh = (alpha(d2^2 - k1^2) - i k1 b/eps) uh``."""
    a = problem.a
    alpha = problem.alpha
    x = grid.coords()
    n1, n2 = grid.shape
    k1 = grid.wavenumbers()[0].ravel()
    L2 = grid.lengths[1]
    # spectral second-derivative matrix on the x2 grid
    k2 = 2 * np.pi * np.fft.fftfreq(n2, d=L2 / n2)
    F = np.fft.fft(np.eye(n2), axis=0)
    D2 = np.real(np.fft.ifft(-(k2**2)[:, None] * F, axis=0))
    b = PeriodicField(a.grid, a.values[0])
    v2 = torus_coordinate(x[1][0], eps)
    speed = b(np.array([np.zeros_like(v2), v2])) / eps
    uh0 = np.fft.fft(u, axis=0)
    active = np.where(np.max(np.abs(uh0), axis=1) > 1e-13 * np.max(np.abs(uh0)))[0]
    out, energies = [], []
    vol = grid.cell_volume
    for t in times:
        uh = np.zeros_like(uh0)
        for i in active:
            L = alpha * (D2 - k1[i] ** 2 * np.eye(n2)) - 1j * k1[i] * np.diag(speed)
            uh[i] = linalg.expm(L * t) @ uh0[i]
        vals = np.fft.ifft(uh, axis=0).real
        out.append(vals)
        energies.append(float(np.sum(vals**2) * vol))
    energies = np.array(energies)
    # with an exact propagator the dissipation is the energy loss itself
    return DiffusionSolution(grid, eps, np.asarray(times), np.array(out), energies,
                             energies[0] - energies, "exponential")


@dataclass
class EffectiveDiffusionSolution:
    grid: BoxGrid
    times: np.ndarray
    values: np.ndarray
    D: np.ndarray
    alpha: float

    def at(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-12 * max(1.0, abs(t)):
            raise KeyError(f"no snapshot at t = {t}")
        return self.values[i]

    def gradient(self, t: float) -> np.ndarray:
        uh = np.fft.fftn(self.at(t))
        return np.array([np.fft.ifftn(1j * k * uh).real for k in self.grid.wavenumbers()])


def v_mean_data(U0: Callable, vgrid: TorusGrid) -> Callable:
    """``x -> int U0(x, v) dv`` by torus quadrature."""

    def u0(x):
        x = np.asarray(x, dtype=float)
        vpts = vgrid.coords().reshape(vgrid.dim, -1)
        acc = np.zeros(x.shape[1:])
        for j in range(vpts.shape[1]):
            acc += U0(x, vpts[:, j].reshape(-1, *([1] * (x.ndim - 1))) * np.ones_like(x))
        return acc / vpts.shape[1]

    return u0


def solve_effective_diffusion(D, alpha: float, u0: Callable, grid: BoxGrid,
                              times: Sequence[float]) -> EffectiveDiffusionSolution:
    """Exact Fourier solution of ``d_t u = alpha div(D grad u)`` on a periodic box."""
    D = np.asarray(D, dtype=float)
    if np.max(np.abs(D - D.T)) > 1e-12 or np.min(np.linalg.eigvalsh(D)) <= 0:
        raise ValueError("D must be symmetric positive definite")
    ks = grid.wavenumbers()
    q = sum(D[i, j] * ks[i] * ks[j] for i in range(grid.dim) for j in range(grid.dim))
    uh = np.fft.fftn(np.asarray(u0(grid.coords()), dtype=float))
    vals = [np.fft.ifftn(uh * np.exp(-alpha * q * t)).real for t in times]
    return EffectiveDiffusionSolution(grid, np.asarray(times, dtype=float), np.array(vals), D,
                                      float(alpha))


def corrector_density(cell: CellSolution, grad_u: np.ndarray) -> np.ndarray:
    """``g(x, v) = grad u(x) . chi(v)``, shape ``(*x_batch, *vgrid.shape)``."""
    chi = np.array([c.values for c in cell.chi])
    return np.tensordot(np.moveaxis(grad_u, 0, -1), chi, axes=([-1], [0]))


def corrector_check(problem: DiffusionProblem, cell: CellSolution, epsilons: Sequence[float],
                    theta: TestFunction, t: float | None = None, xgrid: BoxGrid | None = None,
                    method: str = "auto", dt: float | None = None,
                    points_per_period: int = 8) -> ConvergenceReport:
    """Corrector pairings of u_eps against ``int int grad u . chi theta``.

    The reference uses the effective solution on ``xgrid`` (a coarse periodic
    grid of the box, 64 points per axis by default) and the cell grid in v.
    The largest ``|int g dv|`` over xgrid is stored as ``g_mean``.
    """
    t = problem.T_final if t is None else t
    vgrid = cell.grid
    xgrid = xgrid or BoxGrid(problem.bounds, (64,) * len(problem.bounds), periodic=True)
    u0 = v_mean_data(problem.U0, vgrid)
    eff = solve_effective_diffusion(cell.D, problem.alpha, u0, xgrid, [t])
    g = corrector_density(cell, eff.gradient(t))
    x = xgrid.coords()
    vpts = vgrid.coords().reshape(vgrid.dim, -1)
    gflat = g.reshape(*xgrid.shape, -1)
    ref = 0.0
    for j in range(vpts.shape[1]):
        vj = vpts[:, j].reshape(-1, *([1] * xgrid.dim)) * np.ones_like(x)
        ref += xgrid.integrate(gflat[..., j] * theta(x, vj))
    ref /= vpts.shape[1]
    rows = []
    for eps in epsilons:
        sol = solve_direct_diffusion(problem, eps, [0.0, t], dt=dt, method=method,
                                     points_per_period=points_per_period)
        val = corrector_pairing(sol.at(t), theta, eps, sol.grid, vgrid, points_per_period)
        rows.append(ConvergenceRow(float(eps), val, float(ref)))
    rep = ConvergenceReport(rows)
    rep.metadata.update(time=t, g_mean=float(np.max(np.abs(np.mean(gflat, axis=-1)))))
    return rep
