"""Named regression scenarios.

Each scenario splits into independent tasks (usually one per ladder entry) so
``--jobs`` can spread them over processes. A task returns rows
``(series, abscissa, value)`` and optionally reference values per series.
For the grid scenarios (kernel, cell, fine-scale) the abscissa stored in the
``epsilon`` column is the grid spacing ``1/n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import erf

from kinhom import counterexample as cx
from kinhom.diffusion import (
    DiffusionProblem,
    _is_shear,
    corrector_check,
    effective_matrix,
    solve_cell_problem,
    solve_direct_diffusion,
    solve_effective_diffusion,
    v_mean_data,
)
from kinhom.errors import ConfigError, NumericalFailure
from kinhom.fine_scale import (
    FineScaleProblem,
    B_field,
    check_hypothesis_H,
    solve_effective_fine_scale,
)
from kinhom.hyperbolic import SeparableInitialData, TransportProblem, weak_limit_compare
from kinhom.projection import ProjectionOperator, annihilation_residual, kernel_basis
from kinhom.torus import BoxGrid, PeriodicField, TorusGrid
from kinhom.two_scale import TestFunction, triple_scale_pairing, two_scale_pairing

TWO_PI = 2 * np.pi


@dataclass
class TaskResult:
    rows: list = field(default_factory=list)
    refs: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Scenario:
    name: str
    topic: str
    tasks: Callable
    evaluate: Callable
    fields: tuple = ()
    check: Callable | None = None


def _gauss2(width2):
    return lambda x: np.exp(-(x[0] ** 2 + x[1] ** 2) / width2)


def _gauss2_integral(width2, half):
    s = np.sqrt(np.pi * width2) * erf(half / np.sqrt(width2))
    return float(s * s)


# two-scale and triple-scale: constant u against separable test functions

_W2 = 0.05


def _two_scale_eval(cfg, eps):
    psi = lambda v: 1.0 + np.sin(TWO_PI * v[0]) + 0.5 * np.cos(TWO_PI * v[0]) * np.cos(TWO_PI * v[1])
    theta = TestFunction.separable(_gauss2(_W2), psi)
    grid = BoxGrid.with_spacing(((-1.0, 1.0), (-1.0, 1.0)), eps / 8)
    val = two_scale_pairing(lambda x: np.ones(x.shape[1:]), theta, eps, grid)
    return TaskResult([("pairing", eps, val)], {"pairing": _gauss2_integral(_W2, 1.0)})


def _triple_scale_eval(cfg, eps):
    psi = lambda v: 1.0 + np.cos(TWO_PI * v[0])
    chi = lambda w: 1.0 + np.sin(TWO_PI * w[1])
    theta = TestFunction.separable(_gauss2(0.02), psi, chi)
    grid = BoxGrid.with_spacing(((-0.5, 0.5), (-0.5, 0.5)), eps * eps / 8)
    val = triple_scale_pairing(lambda x: np.ones(x.shape[1:]), theta, eps, grid)
    return TaskResult([("pairing", eps, val)], {"pairing": _gauss2_integral(0.02, 0.5)})


def _ladder(cfg):
    if not cfg.epsilons:
        raise ConfigError("scenario needs an eps ladder", "experiment.epsilons")
    return list(cfg.epsilons)


# kernel: the projection of a fixed test function lies in ker(a . grad_v)

def _kernel_tasks(cfg):
    return list(cfg.vgrid)


def _kernel_eval(cfg, n):
    g = TorusGrid((n, n))
    a = cfg.build_field(g)
    P = ProjectionOperator.nullspace(a)
    f = PeriodicField.from_function(
        g, lambda v: np.cos(TWO_PI * v[0]) + np.sin(TWO_PI * v[1]) + np.cos(TWO_PI * (v[0] + v[1])))
    Pf = P(f)
    idem = float(np.max(np.abs(P(Pf).values - Pf.values)))
    h = 1.0 / n
    return TaskResult([("annihilation", h, annihilation_residual(a, Pf))], {"annihilation": 0.0},
                      {f"n={n}": dict(dimension=P.basis.dimension, idempotence=idem)})


# hyperbolic: weak limits of the oscillatory transport problem

def _prof(s):
    return np.clip(1 - 4 * s * s, 0, None) ** 3


def _hyper_problem(cfg):
    vg = TorusGrid((cfg.vgrid[0],) * 2)
    a = cfg.build_field(vg)
    psi = PeriodicField.from_function(
        vg, lambda v: 1 + np.cos(TWO_PI * v[0]) + 0.5 * np.sin(TWO_PI * v[1]))
    U = SeparableInitialData(lambda x: _prof(x[0]) * _prof(x[1]), psi)
    T = 0.25 if cfg.t_final is None else cfg.t_final
    return TransportProblem(a, U, ((-1.0, 1.0), (-1.0, 1.0)), T), a


def _g(c, w):
    return lambda x: np.exp(-((x[0] - c[0]) ** 2 + (x[1] - c[1]) ** 2) / (2 * w * w))


HYPERBOLIC_THETAS = (
    _g((0.1, 0.05), 0.3),
    _g((-0.2, 0.15), 0.25),
    lambda x: _g((0.15, -0.1), 0.35)(x) * (1 + x[0]),
)


def _hyper_eval(cfg, eps):
    pr, a = _hyper_problem(cfg)
    ref_spacing = 2.0**-7 if cfg.preset == "desk" else 2.0**-9
    reps = weak_limit_compare(pr, HYPERBOLIC_THETAS, [eps], ProjectionOperator.nullspace(a),
                              points_per_period=8 if cfg.preset == "desk" else 16,
                              ref_spacing=ref_spacing)
    rows = [(f"theta{i}", eps, r.values[0]) for i, r in enumerate(reps)]
    refs = {f"theta{i}": r.references[0] for i, r in enumerate(reps)}
    drift = reps[0].metadata["l2_drift"]
    if drift > 1e-6:
        raise NumericalFailure(f"L2 norm drifted by {drift:.3e} at eps = {eps}")
    return TaskResult(rows, refs, {f"eps={eps}": dict(l2_drift=drift)})


# counterexample: subsequence-dependent weak limits

def _cx_theta(t):
    return TestFunction(lambda x, v: _g((t - 0.75, 1.25), 0.4)(x) * np.sin(TWO_PI * (v[1] - v[0])))


def _cx_tasks(cfg):
    if not cfg.alphas or not cfg.ns:
        raise ConfigError("counterexample needs alphas and ns", "experiment.alphas")
    return [("ref", a) for a in cfg.alphas] + [(a, n) for a in cfg.alphas for n in cfg.ns]


def _cx_eval(cfg, task):
    t = cfg.t_final
    theta = _cx_theta(t)
    bounds = cx.support_box(t)
    if task[0] == "ref":
        alpha = task[1]
        ref = cx.limit_pairing(t, alpha, theta, BoxGrid.with_spacing(bounds, 2.0**-8))
        return TaskResult(refs={f"alpha={alpha:g}": ref})
    alpha, n = task
    eps = float(cx.subsequence(alpha, [n])[0])
    grid = BoxGrid.with_spacing(bounds, eps / 8)
    val = two_scale_pairing(cx.solution(t, grid.coords(), eps), theta, eps, grid)
    return TaskResult([(f"alpha={alpha:g}", eps, val)])


def _cx_check(cfg, reports):
    limits = [r.extrapolated for r in reports.values()]
    return {"limits": limits, "spread": float(max(limits) - min(limits))}


# fine-scale: the special example and the (H) check

def _rot(x):
    return np.array([-x[1], x[0]])


def _rot_back(t, x):
    c, s = np.cos(t), np.sin(t)
    return np.array([c * x[0] + s * x[1], -s * x[0] + c * x[1]])


def _fs_U0(x, v):
    return np.exp(-((x[0] - 0.3) ** 2 + x[1] ** 2) / 0.05) * (
        1 + 0.5 * np.cos(TWO_PI * v[0]) * np.sin(TWO_PI * v[1]))


def _x_only(fn):
    return lambda t, x, v: fn(x) * np.ones(np.broadcast_shapes(np.shape(x), np.shape(v)))


def _fs_tasks(cfg):
    if cfg.field == "counterexample-32":
        return ["H"]
    return list(cfg.xgrid)


def _fs_eval(cfg, n):
    vg = TorusGrid((cfg.vgrid[0],) * 2)
    if n == "H":
        prob = FineScaleProblem(_x_only(cx.velocity), lambda t, x: np.asarray(x, float).copy(),
                                _fs_U0, ((-1.0, 2.0), (-1.0, 2.0)), 1.0)
        # raises HypothesisHFailed: the kernel dimension jumps across the shear band
        check_hypothesis_H(prob, [(0.0, [-0.5, 0.0]), (0.0, [0.5, 0.0])], vg)
        return TaskResult()
    box = ((-1.0, 1.0), (-1.0, 1.0))
    T = 0.6 if cfg.t_final is None else cfg.t_final
    prob = FineScaleProblem(_x_only(_rot), _rot_back, _fs_U0, box, T)
    B0 = B_field(prob, 0.5 * T, [0.2, 0.1], vg)
    P = ProjectionOperator.nullspace(B0, basis=kernel_basis(B0, atol=1e-8))
    xg = BoxGrid(box, (n, n))
    sol = solve_effective_fine_scale(prob, P, xg, [T], h_samples=[(0.2, [0.1, 0.3]),
                                                                 (0.7 * T, [-0.5, 0.2])])
    X = xg.coords().reshape(2, n, n, 1, 1)
    V = vg.coords().reshape(2, 1, 1, *vg.shape)
    err = float(np.max(np.abs(sol.snapshots[0].values - _fs_U0(_rot_back(T, X), V))))
    return TaskResult([("transport_error", 2.0 / n, err)], {"transport_error": 0.0},
                      {"provenance": sol.provenance})


def _fs_check(cfg, reports):
    err = max(reports["transport_error"].values)
    if err > 1e-6:
        raise NumericalFailure(f"effective solution misses the transported data by {err:.3e}")
    return {}


# cell problem and effective diffusion matrix

def _shear_reference(cfg):
    """Closed form for a = (b(v2), 0): D11 = 1 + sum_k |b_k|^2 / (8 pi^2 k^2 alpha^2)."""
    if cfg.field == "shear-sin":
        sin, cos = (1.0,), ()
    elif cfg.field == "inline" and cfg.inline.kind == "shear":
        sin, cos = cfg.inline.sin, cfg.inline.cos
    else:
        return None
    s = sum(c * c / (8 * np.pi**2 * k * k) for k, c in enumerate(sin, 1))
    s += sum(c * c / (8 * np.pi**2 * k * k) for k, c in enumerate(cos, 1))
    return np.array([[1 + s / cfg.alpha**2, 0.0], [0.0, 1.0]])


def _cell_tasks(cfg):
    if cfg.alpha <= 0:
        raise ConfigError("cell problems need alpha > 0", "experiment.alpha")
    return list(cfg.vgrid)


def _cell_eval(cfg, n):
    g = TorusGrid((n, n))
    cell = solve_cell_problem(cfg.build_field(g), cfg.alpha)
    D_grad, D_flux = effective_matrix(cell)
    ref = _shear_reference(cfg)
    rows, refs = [], {}
    for i in range(2):
        for j in range(2):
            key = f"D{i + 1}{j + 1}"
            rows.append((key, 1.0 / n, D_grad[i, j]))
            refs[key] = float("nan") if ref is None else ref[i, j]
    gap = float(np.max(np.abs(D_grad - D_flux)))
    return TaskResult(rows, refs, {f"n={n}": dict(form_gap=gap, iterations=cell.iterations,
                                                  min_eigenvalue=float(np.linalg.eigvalsh(
                                                      0.5 * (D_grad + D_grad.T)).min()))})


# direct diffusion and the corrector

def _diff_U0(x, v):
    return np.cos(TWO_PI * x[0]) * (1 + 0.5 * np.sin(TWO_PI * x[1]))


def _diff_theta(x, v=None):
    return np.cos(TWO_PI * x[0]) * (1 + 0.3 * np.sin(TWO_PI * x[1]))


def _diff_problem(cfg):
    if cfg.alpha <= 0:
        raise ConfigError("diffusion needs alpha > 0", "experiment.alpha")
    vg = TorusGrid((cfg.vgrid[0],) * 2)
    T = 0.05 if cfg.t_final is None else cfg.t_final
    return DiffusionProblem(cfg.build_field(vg), cfg.alpha, _diff_U0, ((0.0, 1.0), (0.0, 1.0)), T), vg


def _diff_eval(cfg, eps):
    pr, vg = _diff_problem(cfg)
    # splitting error scales with dt/eps^2, so the exact shear propagator is
    # used where available and dt shrinks with eps^2 otherwise
    if _is_shear(pr.a):
        sol = solve_direct_diffusion(pr, eps, [0.0, pr.T_final], method="exponential")
    else:
        sol = solve_direct_diffusion(pr, eps, [0.0, pr.T_final], dt=eps * eps / 16)
    val = float(sol.grid.integrate(sol.at(pr.T_final) * _diff_theta(sol.grid.coords())))
    cell = solve_cell_problem(pr.a, pr.alpha)
    xg = BoxGrid(pr.bounds, (64, 64), periodic=True)
    eff = solve_effective_diffusion(effective_matrix(cell)[0], pr.alpha,
                                    v_mean_data(pr.U0, vg), xg, [pr.T_final])
    ref = float(xg.integrate(eff.at(pr.T_final) * _diff_theta(xg.coords())))
    margin = sol.energy_inequality_margin()
    if margin < -1e-6:
        raise NumericalFailure(f"energy inequality violated by {-margin:.3e} at eps = {eps}")
    return TaskResult([("pairing", eps, val)], {"pairing": ref},
                      {f"eps={eps}": dict(energy_margin=margin, method=sol.method)})


def _corr_theta():
    return TestFunction(lambda x, v: (1 + np.sin(TWO_PI * x[0]) + 0.3 * np.sin(TWO_PI * x[1]))
                        * np.sin(TWO_PI * v[1]))


def _corr_U0(x, v):
    return np.cos(TWO_PI * x[0]) * (1 + 0.5 * np.sin(TWO_PI * x[1]))


def _corr_eval(cfg, eps):
    if cfg.alpha <= 0:
        raise ConfigError("corrector needs alpha > 0", "experiment.alpha")
    vg = TorusGrid((cfg.vgrid[0],) * 2)
    T = 0.05 if cfg.t_final is None else cfg.t_final
    pr = DiffusionProblem(cfg.build_field(vg), cfg.alpha, _corr_U0, ((0.0, 1.0), (0.0, 1.0)), T)
    cell = solve_cell_problem(pr.a, pr.alpha)
    try:
        rep = corrector_check(pr, cell, [eps], _corr_theta(), method="exponential")
    except ValueError as exc:
        raise ConfigError(f"corrector pairings need a shear field: {exc}", "experiment.field") from None
    if rep.metadata["g_mean"] > 1e-8:
        raise NumericalFailure(f"corrector density has v-mean {rep.metadata['g_mean']:.3e}")
    return TaskResult([("corrector", eps, rep.values[0])], {"corrector": rep.references[0]},
                      {f"eps={eps}": dict(g_mean=rep.metadata["g_mean"])})


_TORUS_FIELDS = ("ergodic-constant", "shear-sin", "shear-positive", "perp-gradient", "random",
                 "inline")
_MEAN_ZERO = ("shear-sin", "perp-gradient", "random", "inline")

CATALOG = {
    s.name: s
    for s in (
        Scenario("two-scale", "two-scale limit of a constant against a separable test function "
                 "(limit is the product of means)", _ladder, _two_scale_eval),
        Scenario("triple-scale", "three-scale pairing with separated scales eps and eps^2",
                 _ladder, _triple_scale_eval),
        Scenario("kernel", "kernel of a . grad_v and the orthogonal projection onto it",
                 _kernel_tasks, _kernel_eval, _TORUS_FIELDS),
        Scenario("hyperbolic", "weak limit of oscillatory transport vs the projected kinetic "
                 "equation", _ladder, _hyper_eval,
                 ("ergodic-constant", "shear-sin", "shear-positive", "random", "inline")),
        Scenario("counterexample", "x-dependent shear whose weak limits depend on the "
                 "subsequence (ill-posed limit)", _cx_tasks, _cx_eval, ("counterexample-32",),
                 _cx_check),
        Scenario("fine-scale", "effective transport for the fine-scale problem along the "
                 "comoving phase, with the kernel-constancy hypothesis check", _fs_tasks, _fs_eval,
                 ("rotation", "counterexample-32"), _fs_check),
        Scenario("cell", "cell problem alpha lap chi - div(a chi) = a and the enhanced "
                 "diffusion matrix", _cell_tasks, _cell_eval, _MEAN_ZERO),
        Scenario("diffusion", "direct advection-diffusion at scale eps vs the homogenized "
                 "heat equation", _ladder, _diff_eval, _MEAN_ZERO),
        Scenario("corrector", "first-order corrector eps grad u . chi of the diffusive limit",
                 _ladder, _corr_eval, _MEAN_ZERO),
    )
}


def list_scenarios() -> list[tuple[str, str]]:
    return [(s.name, s.topic) for s in CATALOG.values()]
