import json

import numpy as np
import pytest

from kinhom.diffusion import (
    CellSolution,
    DiffusionProblem,
    corrector_check,
    corrector_density,
    effective_matrix,
    effective_matrix_field,
    flux_form,
    quadratic_form,
    solve_cell_problem,
    solve_direct_diffusion,
    solve_effective_diffusion,
    v_mean_data,
)
from kinhom.errors import EnergyGrowth, FormMismatch, HypothesisViolation, NonConvergence
from kinhom.fields import ergodic_constant, random_divergence_free, shear_sin
from kinhom.torus import BoxGrid, PeriodicField, TorusGrid, spectral_gradient
from kinhom.two_scale import TestFunction

TWO_PI = 2 * np.pi
G32 = TorusGrid((32, 32))
G64 = TorusGrid((64, 64))
UNIT = ((0.0, 1.0), (0.0, 1.0))


def U_smooth(x, v):
    return np.cos(TWO_PI * x[0]) * (1 + 0.5 * np.sin(TWO_PI * x[1]))


def zero_field(g=G32):
    return PeriodicField.constant(g, [0.0, 0.0])


def test_problem_checks_hypotheses():
    with pytest.raises(HypothesisViolation, match="int a"):
        DiffusionProblem(ergodic_constant(G32), 1.0, U_smooth, UNIT, 1.0)
    comp = PeriodicField.from_function(G32, lambda v: [np.sin(TWO_PI * v[0]), 0 * v[0]])
    with pytest.raises(HypothesisViolation, match="div a"):
        DiffusionProblem(comp, 1.0, U_smooth, UNIT, 1.0)
    with pytest.raises(ValueError):
        DiffusionProblem(shear_sin(G32), 0.0, U_smooth, UNIT, 1.0)


def test_cell_problem_zero_field():
    cell = solve_cell_problem(zero_field(), 1.0)
    assert all(np.all(c.values == 0) for c in cell.chi)
    D_grad, D_flux = effective_matrix(cell)
    np.testing.assert_array_equal(D_grad, np.eye(2))
    np.testing.assert_array_equal(D_flux, np.eye(2))


@pytest.mark.parametrize("alpha", [0.25, 1.0])
def test_cell_problem_shear_closed_form(alpha):
    cell = solve_cell_problem(shear_sin(G64), alpha)
    v2 = G64.coords()[1]
    np.testing.assert_allclose(cell.chi[0].values, -np.sin(TWO_PI * v2) / (4 * np.pi**2 * alpha),
                               atol=1e-13)
    assert np.max(np.abs(cell.chi[1].values)) == 0
    want = np.diag([1 + 1 / (8 * np.pi**2 * alpha**2), 1.0])
    np.testing.assert_allclose(cell.D, want, atol=1e-10)


def test_cell_problem_matches_dense_solve():
    # oracle: dense assembly of alpha Lap - div(a .) on a 16^2 grid, mean fixed by a border row
    g = TorusGrid((16, 16))
    a = random_divergence_free(g, bandwidth=2, seed=7)
    n = g.size
    lap = -g.squared_wavenumber()
    syms = g.derivative_symbols()
    cols = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1
        u = e.reshape(g.shape)
        out = np.fft.ifft2(lap * np.fft.fft2(u)).real
        for j, s in enumerate(syms):
            out -= np.fft.ifft2(s * np.fft.fft2(a.values[j] * u)).real
        cols.append(out.ravel())
    L = np.array(cols).T
    Lb = np.vstack([L, np.ones(n)])
    cell = solve_cell_problem(a, 1.0)
    for k in range(2):
        x = np.linalg.lstsq(Lb, np.append(a.values[k].ravel(), 0.0), rcond=None)[0]
        np.testing.assert_allclose(cell.chi[k].values.ravel(), x, atol=1e-10)


def test_cell_residual_and_mean():
    a = random_divergence_free(G64, seed=3)
    cell = solve_cell_problem(a, 0.25)
    assert np.all(cell.residuals <= 1e-8)
    for c in cell.chi:
        assert abs(np.mean(c.values)) < 1e-14


@pytest.mark.parametrize("seed", range(5))
def test_flux_identity_on_random_fields(seed):
    a = random_divergence_free(G64, seed=seed)
    alpha = 1.0
    cell = solve_cell_problem(a, alpha)
    chi = [c.values for c in cell.chi]
    grads = [spectral_gradient(c).values for c in cell.chi]
    S = np.array([[0.5 * np.mean(a.values[i] * chi[j] + a.values[j] * chi[i]) for j in range(2)]
                  for i in range(2)])
    G = np.array([[np.mean(np.sum(grads[i] * grads[j], axis=0)) for j in range(2)]
                  for i in range(2)])
    assert np.max(np.abs(S + alpha * G)) <= 1e-8
    D_grad, _ = effective_matrix(cell)
    assert np.min(np.linalg.eigvalsh(D_grad)) >= 1 - 1e-10
    np.testing.assert_allclose(D_grad, D_grad.T, atol=1e-14)


def test_quadratic_form_identity():
    cell = solve_cell_problem(random_divergence_free(G32, seed=11), 0.25)
    for nu in ([1.0, 0.0], [0.3, -0.7], [2.0, 1.0]):
        assert quadratic_form(cell, nu) == pytest.approx(np.array(nu) @ cell.D @ np.array(nu),
                                                         rel=1e-12)


def test_form_mismatch_flags_unconverged_cell():
    cell = solve_cell_problem(shear_sin(G32), 1.0)
    bad = CellSolution(cell.a, cell.alpha, [cell.chi[0] * 1.01, cell.chi[1]],
                       cell.residuals, cell.iterations)
    with pytest.raises(FormMismatch):
        effective_matrix(bad)
    assert flux_form(bad)[0, 0] > 1


def test_nonconvergence_reported():
    a = random_divergence_free(G32, seed=1, amplitude=50.0)
    with pytest.raises(NonConvergence) as err:
        solve_cell_problem(a, 0.01, maxiter=1)
    assert err.value.residual > 1e-8


def test_cell_json_export():
    cell = solve_cell_problem(shear_sin(G32), 1.0)
    data = json.loads(cell.to_json())
    assert data["alpha"] == 1.0
    assert data["D_gradient"][0][0] == pytest.approx(1 + 1 / (8 * np.pi**2))
    assert len(data["residuals"]) == 2


def test_effective_matrix_field_constant_in_x():
    a = shear_sin(G32)
    Ds = effective_matrix_field(lambda x: a.values * (1 + 0 * x[0]), G32, 1.0,
                                np.array([[0.0, 0.5], [0.1, 0.2]]))
    assert Ds.shape == (2, 2, 2)
    np.testing.assert_allclose(Ds[0], Ds[1])


def test_heat_regression():
    pr = DiffusionProblem(zero_field(), 0.5, U_smooth, UNIT, 0.1)
    sol = solve_direct_diffusion(pr, 0.25, [0.0, 0.05, 0.1])
    x = sol.grid.coords()
    for t in sol.times:
        want = np.exp(-0.5 * TWO_PI**2 * t) * np.cos(TWO_PI * x[0]) + 0.5 * np.exp(
            -0.5 * 2 * TWO_PI**2 * t) * np.cos(TWO_PI * x[0]) * np.sin(TWO_PI * x[1])
        np.testing.assert_allclose(sol.at(t), want, atol=1e-8)
    np.testing.assert_allclose(sol.balance, 0, atol=1e-12)


def test_constant_data_stays_constant():
    pr = DiffusionProblem(shear_sin(G32), 1.0, lambda x, v: 3.0 + 0 * x[0], UNIT, 0.05)
    sol = solve_direct_diffusion(pr, 1 / 8, [0.0, 0.05])
    np.testing.assert_allclose(sol.at(0.05), 3.0, atol=1e-12)


def test_box_must_hold_whole_cells():
    pr = DiffusionProblem(shear_sin(G32), 1.0, U_smooth, UNIT, 0.05)
    with pytest.raises(ValueError):
        solve_direct_diffusion(pr, 0.3)


def test_strang_converges_to_exact_shear_propagator():
    pr = DiffusionProblem(shear_sin(G32), 1.0, U_smooth, UNIT, 0.05)
    eps = 1 / 8
    ref = solve_direct_diffusion(pr, eps, [0.0, 0.05], method="exponential").at(0.05)
    errs = [np.max(np.abs(solve_direct_diffusion(pr, eps, [0.0, 0.05], dt=eps**2 / f).at(0.05)
                          - ref)) for f in (32, 64)]
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.1)


def test_semi_lagrangian_matches_phase_shift():
    pr = DiffusionProblem(shear_sin(G32), 1.0, U_smooth, UNIT, 0.05)
    eps = 1 / 8
    a = solve_direct_diffusion(pr, eps, [0.0, 0.05], method="shear").at(0.05)
    b = solve_direct_diffusion(pr, eps, [0.0, 0.05], method="semi-lagrangian").at(0.05)
    assert np.max(np.abs(a - b)) < 1e-5


@pytest.mark.parametrize("method", ["shear", "semi-lagrangian", "exponential"])
def test_energy_inequality(method):
    pr = DiffusionProblem(shear_sin(G32), 1.0, U_smooth, UNIT, 0.05)
    sol = solve_direct_diffusion(pr, 1 / 8, np.linspace(0, 0.05, 6), method=method)
    assert np.all(np.diff(sol.energies) <= 1e-6 * sol.energies[0])
    assert sol.energy_inequality_margin() >= -1e-6
    # the exact diffusion steps account for the dissipation; advection only loses energy
    assert np.all(sol.balance >= -1e-12 * sol.energies[0])


def test_energy_growth_is_fatal():
    pr = DiffusionProblem(zero_field(), 1e-4, U_smooth, UNIT, 0.05)
    with pytest.raises(EnergyGrowth):
        solve_direct_diffusion(pr, 0.25, energy_tol=-1e-3)


def test_shear_only_methods_reject_other_fields():
    a = random_divergence_free(G32, seed=0)
    pr = DiffusionProblem(a, 1.0, U_smooth, UNIT, 0.05)
    with pytest.raises(ValueError):
        solve_direct_diffusion(pr, 0.25, method="exponential")
    with pytest.raises(ValueError):
        solve_direct_diffusion(pr, 0.25, method="upwind")


def test_effective_identity_matrix_is_heat_equation():
    grid = BoxGrid(UNIT, (32, 32), periodic=True)
    u0 = lambda x: np.cos(TWO_PI * x[0]) * np.cos(2 * TWO_PI * x[1])
    sol = solve_effective_diffusion(np.eye(2), 0.5, u0, grid, [0.0, 0.1])
    want = np.exp(-0.5 * 5 * TWO_PI**2 * 0.1) * u0(grid.coords())
    np.testing.assert_allclose(sol.at(0.1), want, atol=1e-13)


def test_effective_variance_growth_recovers_anisotropy():
    cell = solve_cell_problem(shear_sin(G32), 0.25)
    box = ((-4.0, 4.0), (-4.0, 4.0))
    grid = BoxGrid(box, (256, 256), periodic=True)
    u0 = lambda x: np.exp(-(x[0] ** 2 + x[1] ** 2) / (2 * 0.3**2))
    sol = solve_effective_diffusion(cell.D, 0.25, u0, grid, [0.0, 0.2])
    x = grid.coords()

    def var(u):
        m = grid.integrate(u)
        return [grid.integrate(u * x[i] ** 2) / m for i in range(2)]

    v0, v1 = var(sol.at(0.0)), var(sol.at(0.2))
    growth = [(v1[i] - v0[i]) / (2 * 0.25 * 0.2) for i in range(2)]
    np.testing.assert_allclose(growth, np.diag(cell.D), rtol=1e-8)
    assert growth[0] / growth[1] == pytest.approx(cell.D[0, 0] / cell.D[1, 1], abs=1e-4)


def test_effective_rejects_indefinite_matrix():
    grid = BoxGrid(UNIT, (8, 8), periodic=True)
    with pytest.raises(ValueError):
        solve_effective_diffusion(np.diag([1.0, -1.0]), 1.0, lambda x: x[0], grid, [0.1])


def test_effective_initial_data_is_v_mean():
    U = lambda x, v: (1 + np.cos(TWO_PI * v[0])) * np.exp(-x[0] ** 2)
    x = np.array([[0.0, 0.5], [0.1, 0.2]])
    np.testing.assert_allclose(v_mean_data(U, G32)(x), np.exp(-x[0] ** 2), atol=1e-14)


def test_corrector_density_has_zero_v_mean():
    cell = solve_cell_problem(random_divergence_free(G32, seed=2), 1.0)
    grad = np.random.default_rng(0).standard_normal((2, 5))
    g = corrector_density(cell, grad)
    assert g.shape == (5, 32, 32)
    assert np.max(np.abs(g.mean(axis=(-2, -1)))) < 1e-14


def test_corrector_zero_field_gives_zero():
    pr = DiffusionProblem(zero_field(), 1.0, U_smooth, UNIT, 0.02)
    cell = solve_cell_problem(zero_field(), 1.0)
    th = TestFunction(lambda x, v: (1 + np.sin(TWO_PI * x[0])) * np.sin(TWO_PI * v[1]))
    rep = corrector_check(pr, cell, [1 / 4, 1 / 8], th)
    assert rep.references[0] == 0
    assert max(rep.abs_errors) < 1e-12


def test_corrector_shear_prediction():
    a = shear_sin(G32)
    pr = DiffusionProblem(a, 1.0, U_smooth, UNIT, 0.05)
    cell = solve_cell_problem(a, 1.0)
    th = TestFunction(lambda x, v: (1 + np.sin(TWO_PI * x[0]) + 0.3 * np.sin(TWO_PI * x[1]))
                      * np.sin(TWO_PI * v[1]))
    rep = corrector_check(pr, cell, [1 / 8, 1 / 16, 1 / 32], th, method="exponential")
    assert rep.strictly_decreasing_errors()
    assert rep.extrapolated_error <= 5e-3
    assert abs(rep.references[0]) > 1e-3
    assert rep.metadata["g_mean"] <= 1e-8
