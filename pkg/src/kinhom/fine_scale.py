"""Transport of a moving fine-scale structure.

The problem is ``d_t u + div_x(A(t, x, phi(t, x)/eps) u) = 0``, where
``phi(t, .)`` deforms the oscillation pattern. Along the flow the phase
``phi/eps`` moves with speed ``B/eps``, where ``B = (d_t + A . grad_x) phi``.
The effective equation transports ``f`` with ``PA``, P the projection onto
``ker(B . grad_v)``. That only makes sense when this kernel is the same at
every (t, x), and the checker below tests this on samples instead of assuming
it. The result is a formal effective solution, since the derivation behind
it is not a proof.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import linalg

from kinhom.errors import HypothesisHFailed, HypothesisViolation, StepTooLarge
from kinhom.ode import n_steps, rk4_step
from kinhom.projection import ProjectionOperator, kernel_basis
from kinhom.torus import BoxGrid, PeriodicField, TorusGrid, TwoScaleField

PROVENANCE = "formal effective solution"


def _fd_weights(h):
    # fourth-order central difference: (f(-2h) - 8f(-h) + 8f(h) - f(2h)) / 12h
    return [(-2, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0)], 12.0 * h


def central_diff(fn: Callable, x: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Fourth-order central difference of ``fn`` along component ``axis`` of x."""
    stencil, den = _fd_weights(h)
    x = np.asarray(x, dtype=float)
    e = np.zeros((x.shape[0],) + (1,) * (x.ndim - 1))
    e[axis] = h
    return sum(w * np.asarray(fn(x + s * e)) for s, w in stencil) / den


@dataclass(frozen=True, eq=False)
class FineScaleProblem:
    """Data of the fine-scale transport problem.

    ``A(t, x, v)`` and ``phi(t, x)`` take arrays with the component axis
    first. Analytic ``phi_t(t, x)`` and ``phi_grad(t, x)`` (shape
    ``(d, d, ...)`` with ``[i, k] = d phi_i / d x_k``) are used when given;
    otherwise fourth-order central differences with step ``fd_step``.
    """

    A: Callable
    phi: Callable
    U0: Callable
    bounds: tuple
    T_final: float
    phi_t: Optional[Callable] = None
    phi_grad: Optional[Callable] = None
    fd_step: float = 1e-3

    @property
    def dim(self) -> int:
        return len(self.bounds)

    def dphi_dt(self, t, x):
        if self.phi_t is not None:
            return np.asarray(self.phi_t(t, x), dtype=float)
        h = self.fd_step
        stencil, den = _fd_weights(h)
        return sum(w * np.asarray(self.phi(t + s * h, x)) for s, w in stencil) / den

    def grad_phi(self, t, x):
        if self.phi_grad is not None:
            return np.asarray(self.phi_grad(t, x), dtype=float)
        cols = [central_diff(lambda z: self.phi(t, z), x, k, self.fd_step) for k in range(self.dim)]
        return np.stack(cols, axis=1)


def build_B(problem: FineScaleProblem, check_points=None, tol: float = 1e-6) -> Callable:
    """``B_i(t, x, v) = d_t phi_i + sum_k A_k d_k phi_i``.

    When ``check_points`` (a list of ``(t, x, v)`` arrays) is given, the
    divergence in v is sampled there and must stay below ``tol``.
    """

    def B(t, x, v):
        x = np.asarray(x, dtype=float)
        A = np.asarray(problem.A(t, x, v), dtype=float)
        G = problem.grad_phi(t, x)
        return problem.dphi_dt(t, x) + np.einsum("ik...,k...->i...", G, A)

    if check_points is not None:
        worst, where = 0.0, None
        for t, x, v in check_points:
            div = sum(
                central_diff(lambda w: B(t, x, w)[j], np.asarray(v, dtype=float), j, 1e-3)
                for j in range(problem.dim)
            )
            k = int(np.argmax(np.abs(div)))
            if np.abs(div).flat[k] > worst:
                worst = float(np.abs(div).flat[k])
                where = (t, np.asarray(x)[(slice(None),) + np.unravel_index(k, div.shape)])
        if worst > tol:
            raise HypothesisViolation(f"div_v B = {worst:.3e} exceeds {tol:g}", where, worst)
    return B


@dataclass
class HypothesisReport:
    identity_error: float
    min_det: float
    div_A: float
    trace_term: float
    worst: dict = field(default_factory=dict)


def check_structure(problem: FineScaleProblem, xs: np.ndarray, times: Sequence[float],
                    vs: np.ndarray, tol_identity: float = 1e-10, tol: float = 1e-8,
                    min_det: float = 0.0) -> HypothesisReport:
    """Sampled checks on the data.

    * ``phi(0, .)`` is the identity and ``det grad_x phi > 0``.
    * ``div_x A = 0`` and ``sum_ij dA_i/dv_j dphi_j/dx_i = 0``.

    ``xs`` has shape ``(d, n)``, ``vs`` shape ``(d, m)``. Raises
    HypothesisViolation naming the failing inequality and the worst point.
    """
    d = problem.dim
    xs = np.asarray(xs, dtype=float)
    vs = np.asarray(vs, dtype=float)
    ident = float(np.max(np.abs(problem.phi(0.0, xs) - xs)))
    if ident > tol_identity:
        raise HypothesisViolation(f"phi(0, x) differs from x by {ident:.3e}", value=ident)
    dets, divs, traces = [], [], []
    worst = {}
    X = np.repeat(xs[:, :, None], vs.shape[1], axis=2)
    V = np.repeat(vs[:, None, :], xs.shape[1], axis=1)
    h = problem.fd_step
    for t in times:
        G = problem.grad_phi(t, xs)
        det = np.linalg.det(np.moveaxis(G, -1, 0)) if d > 1 else G[0, 0]
        dets.append(np.min(det))
        div = sum(central_diff(lambda z: problem.A(t, z, V)[i], X, i, h) for i in range(d))
        divs.append(np.max(np.abs(div)))
        GX = problem.grad_phi(t, X)
        tr = sum(
            central_diff(lambda w: problem.A(t, X, w)[i], V, j, h) * GX[j, i]
            for i in range(d) for j in range(d)
        )
        traces.append(np.max(np.abs(tr)))
        if traces[-1] >= max(worst.get("trace", (0,))[0], 0):
            k = np.unravel_index(int(np.argmax(np.abs(tr))), tr.shape)
            worst["trace"] = (traces[-1], t, X[(slice(None),) + k], V[(slice(None),) + k])
    rep = HypothesisReport(ident, float(np.min(dets)), float(np.max(divs)), float(np.max(traces)),
                           worst)
    if rep.min_det <= min_det:
        raise HypothesisViolation(f"det grad phi = {rep.min_det:.3e} is not bounded below",
                                  value=rep.min_det)
    if rep.div_A > tol:
        raise HypothesisViolation(f"div_x A = {rep.div_A:.3e} exceeds {tol:g}", value=rep.div_A)
    if rep.trace_term > tol:
        pt = worst["trace"]
        raise HypothesisViolation(
            f"tr(grad_v A grad_x phi) = {rep.trace_term:.3e} exceeds {tol:g}",
            worst_point=(pt[1], pt[2], pt[3]), value=rep.trace_term,
        )
    return rep


@dataclass
class CharTrajectory:
    times: np.ndarray
    X: np.ndarray
    V: np.ndarray
    consistency: np.ndarray

    @property
    def max_consistency(self) -> float:
        return float(np.max(self.consistency))


def torus_distance(a, b) -> np.ndarray:
    r = np.mod(np.asarray(a) - np.asarray(b) + 0.5, 1.0) - 0.5
    return np.max(np.abs(r), axis=0)


def charsys_integrate(problem: FineScaleProblem, y, eps: float, T: float, times=None,
                      step: float | None = None, h0: float = 0.05, u0=None) -> CharTrajectory:
    """RK4 for ``dx/dt = A(t, x, v)``, ``dv/dt = B(t, x, v) / eps``.

    ``y`` has shape ``(d, n)``. The fast variable starts at
    ``u0 = phi(0, y)/eps`` unless given; ``step`` must not exceed
    ``eps * h0``. The consistency column is the torus distance between
    ``phi(t, X)/eps`` and V at each output time.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    step = eps * h0 if step is None else step
    if step > eps * h0 * (1 + 1e-12):
        raise StepTooLarge(f"step {step:.3e} exceeds eps*h0 = {eps * h0:.3e}")
    B = build_B(problem)
    y = np.asarray(y, dtype=float)
    d = problem.dim
    v = problem.phi(0.0, y) / eps if u0 is None else np.asarray(u0, dtype=float)
    z = np.concatenate([y, v])

    def rhs(t, z):
        x, w = z[:d], z[d:]
        wm = np.mod(w, 1.0)
        return np.concatenate([problem.A(t, x, wm), B(t, x, wm) / eps])

    times = np.asarray([0.0, T] if times is None else times, dtype=float)
    Xs, Vs, cons = [], [], []
    t = 0.0
    for mark in times:
        m = n_steps(mark - t, step)
        if m:
            h = (mark - t) / m
            for i in range(m):
                z = rk4_step(rhs, t + i * h, z, h)
        t = mark
        Xs.append(z[:d].copy())
        Vs.append(z[d:].copy())
        cons.append(float(np.max(torus_distance(problem.phi(t, z[:d]) / eps, z[d:]))))
    return CharTrajectory(times, np.array(Xs), np.array(Vs), np.array(cons))


def B_field(problem: FineScaleProblem, t: float, x, vgrid: TorusGrid) -> PeriodicField:
    """``B(t, x, .)`` sampled on the torus grid at one point x."""
    B = build_B(problem)
    v = vgrid.coords()
    xx = np.asarray(x, dtype=float).reshape(-1, *([1] * vgrid.dim)) * np.ones(vgrid.shape)
    return PeriodicField(vgrid, B(t, xx, v))


@dataclass
class HCheck:
    """Outcome of the (H) check: worst principal angle and where it occurred."""

    max_angle: float
    pair: tuple
    dimensions: list


def check_hypothesis_H(problem: FineScaleProblem, samples: Sequence[tuple], vgrid: TorusGrid,
                       angle_tol: float = 1e-6, svd_threshold: float = 1e-8,
                       atol: float = 1e-8) -> HCheck:
    """Compare ``ker(B(t, x, .) . grad_v)`` across sampled ``(t, x)``.

    Kernels of different dimension count as an angle of pi/2. A B with sup
    norm below ``atol`` (finite-difference noise) counts as zero. Raises
    HypothesisHFailed with the worst pair when the angle exceeds ``angle_tol``.
    """
    bases = []
    for t, x in samples:
        kb = kernel_basis(B_field(problem, t, x, vgrid), svd_threshold, atol=atol)
        bases.append(kb.vectors.reshape(kb.dimension, -1).T)
    worst, pair = 0.0, None
    for i, j in combinations(range(len(bases)), 2):
        if bases[i].shape[1] != bases[j].shape[1]:
            ang = np.pi / 2
        else:
            ang = float(np.max(linalg.subspace_angles(bases[i], bases[j])))
        if ang > worst:
            worst, pair = ang, (samples[i], samples[j])
    dims = [b.shape[1] for b in bases]
    if worst > angle_tol:
        raise HypothesisHFailed(
            f"kernel of B differs between samples: principal angle {worst:.3e} "
            f"(dimensions {dims})",
            points=pair,
            angle=worst,
        )
    return HCheck(worst, pair, dims)


@dataclass
class FineScaleSolution:
    times: np.ndarray
    snapshots: list
    provenance: str = PROVENANCE


def numeric_phi(a: Callable, steps: int = 64) -> Callable:
    """``phi(t, x)``: the backward characteristic of ``a(x)`` traced to time 0.

    A fixed number of RK4 steps keeps phi smooth in t.
    """

    def phi(t, x):
        x = np.asarray(x, dtype=float)
        if t == 0:
            return x.copy()
        h = -t / steps
        y = x
        for _ in range(steps):
            y = rk4_step(lambda _, z: np.asarray(a(z), dtype=float), 0.0, y, h)
        return y

    return phi


def solve_effective_fine_scale(problem: FineScaleProblem, P: ProjectionOperator,
                               xgrid: BoxGrid, times: Sequence[float],
                               h_samples: Sequence[tuple] | None = None,
                               step: float = 1e-2) -> FineScaleSolution:
    """Transport ``f`` with ``PA`` from ``f(0) = P U0`` on ``xgrid x P.grid``.

    If ``h_samples`` is given, hypothesis (H) is checked on them first.
    Each v-slice is traced backward along ``dx/dt = PA(t, x, v)``. For a
    v-independent A the projection leaves A unchanged (constants lie in
    every kernel) and A is used directly.
    """
    vgrid = P.grid
    if h_samples:
        check_hypothesis_H(problem, h_samples, vgrid)
    d = problem.dim
    x0 = xgrid.coords()
    vpts = vgrid.coords().reshape(vgrid.dim, -1)
    nv = vpts.shape[1]
    Pm = None if P.basis.dimension == vgrid.size else P.matrix()
    probe_x = x0.reshape(d, -1)[:, :: max(1, xgrid.size // 16)]
    probe = [problem.A(0.0, probe_x, vpts[:, [j]]) for j in range(nv)]
    v_free = all(np.allclose(p, probe[0], atol=1e-14, rtol=0) for p in probe)

    def PA(t, x, j):
        if v_free or Pm is None:
            return problem.A(t, x, vpts[:, [j]].reshape(-1, *([1] * (x.ndim - 1))))
        samples = np.stack(
            [problem.A(t, x, vpts[:, [l]].reshape(-1, *([1] * (x.ndim - 1)))) for l in range(nv)],
            axis=-1,
        )
        return samples @ Pm[j]

    snaps = []
    flat = x0.reshape(d, -1)
    for t in times:
        f = np.empty((flat.shape[1], nv))
        feet = []
        for j in range(nv):
            if v_free and feet:
                feet.append(feet[0])
                continue
            y = flat.copy()
            m = n_steps(t, step)
            if m:
                h = -t / m
                for i in range(m):
                    y = rk4_step(lambda s, z: PA(s, z, j), t + i * h, y, h)
            feet.append(y)
        for j in range(nv):
            if Pm is None:
                f[:, j] = problem.U0(feet[j], np.broadcast_to(vpts[:, [j]], feet[j].shape))
            else:
                vals = np.stack(
                    [problem.U0(feet[j], np.broadcast_to(vpts[:, [l]], feet[j].shape))
                     for l in range(nv)],
                    axis=-1,
                )
                f[:, j] = vals @ Pm[j]
        snaps.append(TwoScaleField(xgrid, vgrid, f.reshape(*xgrid.shape, *vgrid.shape)))
    return FineScaleSolution(np.asarray(times, dtype=float), snaps)
