import numpy as np
import pytest

from kinhom import counterexample as cx
from kinhom.errors import HypothesisHFailed, HypothesisViolation, StepTooLarge
from kinhom.fields import shear_positive
from kinhom.fine_scale import (
    PROVENANCE,
    FineScaleProblem,
    B_field,
    build_B,
    central_diff,
    charsys_integrate,
    check_hypothesis_H,
    check_structure,
    numeric_phi,
    solve_effective_fine_scale,
    torus_distance,
)
from kinhom.hyperbolic import SeparableInitialData, solve_effective_kinetic
from kinhom.projection import ProjectionOperator, kernel_basis, project
from kinhom.torus import BoxGrid, PeriodicField, TorusGrid

TWO_PI = 2 * np.pi
BOX = ((-1.0, 1.0), (-1.0, 1.0))
VG = TorusGrid((8, 8))


def rot(x):
    x = np.asarray(x, dtype=float)
    return np.array([-x[1], x[0]])


def rot_back(t, x):
    # backward characteristic of the rotation: R(-t) x
    c, s = np.cos(t), np.sin(t)
    return np.array([c * x[0] + s * x[1], -s * x[0] + c * x[1]])


def U0(x, v):
    return np.exp(-((x[0] - 0.3) ** 2 + x[1] ** 2) / 0.05) * (
        1 + 0.5 * np.cos(TWO_PI * v[0]) * np.sin(TWO_PI * v[1])
    )


def x_only(fn):
    return lambda t, x, v: fn(x) * np.ones(np.broadcast_shapes(np.shape(x), np.shape(v)))


def rotation_problem(phi=rot_back):
    return FineScaleProblem(x_only(rot), phi, U0, BOX, 1.0)


def identity(t, x):
    return np.asarray(x, dtype=float).copy()


def shear_A(t, x, v):
    b = 1.0 + 0.5 * np.sin(TWO_PI * v[1])
    return np.array([b, 0 * v[0]]) * np.ones(np.broadcast_shapes(np.shape(x), np.shape(v)))


def test_central_diff_is_fourth_order():
    x = np.array([[0.3], [0.1]])
    errs = [abs(central_diff(lambda z: np.sin(z[0]), x, 0, h)[0] - np.cos(0.3)) for h in (0.1, 0.05)]
    assert errs[0] / errs[1] == pytest.approx(16, rel=0.05)


def test_B_for_identity_phi_is_A():
    prob = FineScaleProblem(shear_A, identity, U0, BOX, 1.0)
    B = build_B(prob)
    x = np.array([[0.2], [0.4]])
    v = np.array([[0.1], [0.3]])
    np.testing.assert_allclose(B(0.5, x, v), shear_A(0.5, x, v), atol=1e-10)


def test_B_vanishes_for_comoving_phase():
    c = np.array([0.7, -0.4])
    A = lambda t, x, v: c.reshape(2, *([1] * (np.ndim(x) - 1))) * np.ones(np.shape(x))
    phi = lambda t, x: np.asarray(x) - c.reshape(2, *([1] * (np.ndim(x) - 1))) * t
    B = build_B(FineScaleProblem(A, phi, U0, BOX, 1.0))
    x = np.random.default_rng(0).uniform(-1, 1, (2, 10))
    assert np.max(np.abs(B(0.4, x, 0.5 * np.ones_like(x)))) < 1e-12


@pytest.mark.parametrize("numeric", [False, True])
def test_B_vanishes_along_backward_characteristics(numeric):
    phi = numeric_phi(rot) if numeric else rot_back
    prob = rotation_problem(phi)
    x = np.random.default_rng(1).uniform(-1, 1, (2, 12))
    v = np.random.default_rng(2).random((2, 12))
    B = build_B(prob, check_points=[(0.5, x, v)])
    assert np.max(np.abs(B(0.5, x, v))) < (1e-8 if numeric else 1e-12)


def test_B_divergence_check_rejects_compressible_B():
    A = lambda t, x, v: np.array([np.sin(TWO_PI * v[0]), 0 * v[1]]) * np.ones(np.shape(x))
    prob = FineScaleProblem(A, identity, U0, BOX, 1.0)
    x = np.zeros((2, 3))
    v = np.array([[0.0, 0.25, 0.5], [0.0, 0.0, 0.0]])
    with pytest.raises(HypothesisViolation) as err:
        build_B(prob, check_points=[(0.0, x, v)])
    assert err.value.value == pytest.approx(TWO_PI, rel=1e-5)


def test_structure_checks_pass_on_rotation():
    rng = np.random.default_rng(0)
    rep = check_structure(rotation_problem(), rng.uniform(-1, 1, (2, 20)), [0.3, 0.8],
                          rng.random((2, 5)))
    assert rep.identity_error == 0.0
    assert rep.min_det == pytest.approx(1.0, abs=1e-10)
    assert rep.div_A < 1e-10 and rep.trace_term < 1e-10


def test_structure_rejects_phi_not_identity_at_zero():
    prob = FineScaleProblem(x_only(rot), lambda t, x: np.asarray(x) + 0.1, U0, BOX, 1.0)
    with pytest.raises(HypothesisViolation):
        check_structure(prob, np.zeros((2, 2)), [0.5], np.zeros((2, 1)))


def test_structure_rejects_compressible_A():
    A = x_only(lambda x: np.array([x[0], 0 * x[1]]))
    prob = FineScaleProblem(A, identity, U0, BOX, 1.0)
    with pytest.raises(HypothesisViolation, match="div_x A"):
        check_structure(prob, np.zeros((2, 2)), [0.5], np.zeros((2, 1)))


def test_structure_rejects_trace_term():
    # A depends on v1 while phi has a nonzero d phi_1/d x_1
    A = lambda t, x, v: np.array([np.sin(TWO_PI * v[0]), 0 * v[1]]) * np.ones(
        np.broadcast_shapes(np.shape(x), np.shape(v)))
    prob = FineScaleProblem(A, identity, U0, BOX, 1.0)
    with pytest.raises(HypothesisViolation) as err:
        check_structure(prob, np.zeros((2, 2)), [0.5], np.array([[0.0], [0.0]]))
    assert err.value.worst_point is not None


def test_charsys_with_zero_B_keeps_fast_variable():
    prob = rotation_problem()
    y = np.array([[0.5, -0.2], [0.1, 0.4]])
    tr = charsys_integrate(prob, y, 0.05, 1.0, times=[0.5, 1.0])
    np.testing.assert_allclose(tr.V[-1], rot_back(0, y) / 0.05, atol=1e-9)
    np.testing.assert_allclose(tr.X[-1], rot_back(-1.0, y), atol=1e-9)
    assert tr.max_consistency < 1e-9


def test_charsys_reduces_to_kinetic_characteristics():
    # identity phi, A = a(v): dx/dt = a(v), dv/dt = a(v)/eps with v2 frozen
    eps = 0.1
    prob = FineScaleProblem(shear_A, identity, U0, BOX, 1.0)
    y = np.array([[0.2], [0.33]])
    tr = charsys_integrate(prob, y, eps, 0.7)
    b = 1.0 + 0.5 * np.sin(TWO_PI * 0.33 / eps)
    np.testing.assert_allclose(tr.X[-1], [[0.2 + 0.7 * b], [0.33]], atol=1e-12)
    assert tr.max_consistency < 1e-12


def test_charsys_consistency_with_numeric_phi():
    prob = rotation_problem(numeric_phi(rot))
    tr = charsys_integrate(prob, np.array([[0.4, -0.3], [0.2, 0.6]]), 0.1, 0.5, times=[0.25, 0.5])
    assert tr.max_consistency < 1e-6


def test_charsys_rejects_large_step():
    with pytest.raises(StepTooLarge):
        charsys_integrate(rotation_problem(), np.zeros((2, 1)), 0.01, 1.0, step=0.01)
    with pytest.raises(ValueError):
        charsys_integrate(rotation_problem(), np.zeros((2, 1)), 0.0, 1.0)


def test_torus_distance_wraps():
    assert torus_distance(np.array([[0.95]]), np.array([[0.05]]))[0] == pytest.approx(0.1)


def test_hypothesis_H_holds_for_constant_kernel():
    prob = FineScaleProblem(shear_A, identity, U0, BOX, 1.0)
    hc = check_hypothesis_H(prob, [(0.0, [0.1, 0.2]), (0.5, [-0.4, 0.3]), (0.9, [0.7, -0.6])], VG)
    assert hc.max_angle < 1e-8
    assert hc.dimensions == [8, 8, 8]


def test_hypothesis_H_treats_fd_noise_as_zero_B():
    hc = check_hypothesis_H(rotation_problem(numeric_phi(rot)),
                            [(0.2, [0.1, 0.3]), (0.7, [-0.5, 0.2])], VG)
    assert hc.dimensions == [VG.size, VG.size]


def test_hypothesis_H_rejects_counterexample_field():
    A = x_only(cx.velocity)
    prob = FineScaleProblem(A, identity, U0, ((-1.0, 2.0), (-1.0, 2.0)), 1.0)
    left, mid = (0.0, [-0.5, 0.0]), (0.0, [0.5, 0.0])
    # independent oracle: two direct kernel computations disagree in dimension
    g = TorusGrid((16, 16))
    dims = [kernel_basis(B_field(prob, *s, g)).dimension for s in (left, mid)]
    assert dims[0] != dims[1]
    with pytest.raises(HypothesisHFailed) as err:
        check_hypothesis_H(prob, [left, mid], g)
    assert err.value.angle == pytest.approx(np.pi / 2)
    assert err.value.points == (left, mid)


def test_special_example_transports_initial_structure():
    prob = rotation_problem()
    B0 = B_field(prob, 0.5, [0.2, 0.1], VG)
    P = ProjectionOperator.nullspace(B0, basis=kernel_basis(B0, atol=1e-8))
    xg = BoxGrid(BOX, (32, 32))
    sol = solve_effective_fine_scale(prob, P, xg, [0.0, 0.6],
                                     h_samples=[(0.2, [0.1, 0.3]), (0.7, [-0.5, 0.2])])
    X = xg.coords().reshape(2, 32, 32, 1, 1)
    V = VG.coords().reshape(2, 1, 1, 8, 8)
    for t, snap in zip((0.0, 0.6), sol.snapshots):
        assert np.max(np.abs(snap.values - U0(rot_back(t, X), V))) < 1e-6
    assert sol.provenance == PROVENANCE


def test_effective_reduces_to_kinetic_solution():
    a = shear_positive(VG)
    psi = PeriodicField.from_function(
        VG, lambda v: 1 + np.cos(TWO_PI * v[0]) + 0.5 * np.sin(TWO_PI * v[1]))
    U = SeparableInitialData(lambda x: np.exp(-(x[0] ** 2 + x[1] ** 2) / 0.1), psi)
    prob = FineScaleProblem(shear_A, identity, U, BOX, 1.0)
    P = ProjectionOperator.nullspace(a)
    xg = BoxGrid(BOX, (16, 16))
    got = solve_effective_fine_scale(prob, P, xg, [0.4]).snapshots[0].values
    want = solve_effective_kinetic(U.project(P), project(P, a)).snapshot(0.4, xg).values
    np.testing.assert_allclose(got, want, atol=1e-10)


def test_effective_conserves_mass():
    prob = rotation_problem()
    P = ProjectionOperator.nullspace(B_field(prob, 0.0, [0.0, 0.0], VG),
                                     basis=kernel_basis(B_field(prob, 0.0, [0.0, 0.0], VG), atol=1e-8))
    xg = BoxGrid(((-1.5, 1.5), (-1.5, 1.5)), (64, 64))
    sol = solve_effective_fine_scale(prob, P, xg, [0.0, 1.0])
    m0, m1 = (xg.integrate(s.values.mean(axis=(-2, -1))) for s in sol.snapshots)
    assert m1 == pytest.approx(m0, rel=1e-6)
