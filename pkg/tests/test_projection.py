import json
import warnings

import numpy as np
import pytest

from kinhom.errors import GridMismatch, HypothesisViolation, IllConditionedWarning
from kinhom.fields import ergodic_constant, random_divergence_free, shear, shear_positive
from kinhom.projection import (
    Characteristics,
    ProjectionOperator,
    annihilation_residual,
    assemble_operator,
    birkhoff_project,
    effective_velocity,
    flow,
    kernel_basis,
    project,
)
from kinhom.torus import PeriodicField, TorusGrid, advective_derivative, inner, norm

TWO_PI = 2 * np.pi
G16 = TorusGrid((16, 16))
G32 = TorusGrid((32, 32))


def sin1(g):
    return PeriodicField.from_function(g, lambda v: np.sin(TWO_PI * v[0]))


def mixed(g):
    return PeriodicField.from_function(
        g,
        lambda v: np.sin(TWO_PI * v[0]) * np.cos(TWO_PI * v[1]) + np.cos(TWO_PI * 2 * v[1])
        + 0.5 + np.sin(TWO_PI * (v[0] + v[1])),
    )


def test_characteristics_rejects_compressible_field():
    a = PeriodicField.from_function(G16, lambda v: [np.sin(TWO_PI * v[0]), 0 * v[0]])
    with pytest.raises(HypothesisViolation):
        Characteristics(a)


def test_constant_flow_is_translation():
    c = np.sqrt(2.0)
    chars = Characteristics(PeriodicField.constant(G16, [1.0, c]))
    np.testing.assert_allclose(flow(chars, [0.0, 0.0], 1.0), [0.0, c % 1.0], atol=1e-13)


@pytest.mark.parametrize("interp", ["spectral", "cubic"])
def test_shear_flow_closed_form(interp):
    b = lambda s: 1.0 + 0.5 * np.sin(TWO_PI * s)
    chars = Characteristics(shear(G32, b), interpolation=interp)
    v0 = np.array([[0.1, 0.7, 0.33], [0.2, 0.45, 0.9]])
    got = flow(chars, v0, 1.3)
    want = np.array([np.mod(v0[0] + 1.3 * b(v0[1]), 1.0), v0[1]])
    tol = 1e-12 if interp == "spectral" else 1e-4
    np.testing.assert_allclose(got, want, atol=tol)


def test_flow_preserves_volume():
    a = random_divergence_free(G32, bandwidth=3, seed=7)
    chars = Characteristics(a)
    v0 = np.array([0.3, 0.6])
    d = 1e-5
    # central differences keep the stencil error at O(d^2)
    pts = np.array([v0 + [d, 0], v0 - [d, 0], v0 + [0, d], v0 - [0, d]]).T
    out = flow(chars, pts, 1.0, unwrapped=True)
    jac = np.column_stack([out[:, 0] - out[:, 1], out[:, 2] - out[:, 3]]) / (2 * d)
    assert abs(np.linalg.det(jac) - 1.0) < 1e-6


def test_birkhoff_ergodic_rate():
    chars = Characteristics(ergodic_constant(G16, 2 / 3))
    errs = [norm(birkhoff_project(chars, sin1(G16), T)) for T in (50, 100, 200)]
    for e1, e2 in zip(errs, errs[1:]):
        assert 0.4 <= e2 / e1 <= 0.6


def test_birkhoff_constant_is_invariant():
    chars = Characteristics(shear_positive(G16))
    c = PeriodicField.constant(G16, 2.5)
    np.testing.assert_allclose(birkhoff_project(chars, c, 3.0).values, 2.5, atol=1e-13)


def test_birkhoff_shear_averages_out_v1():
    P = ProjectionOperator.birkhoff(shear_positive(G16), horizon=60.0)
    f = PeriodicField.from_function(G16, lambda v: np.sin(TWO_PI * v[0]) * np.cos(TWO_PI * v[1]))
    assert norm(P(f)) < 1.0 / 60


def test_kernel_dimensions():
    assert kernel_basis(ergodic_constant(G16, 2 / 3)).dimension == 1
    kb = kernel_basis(shear_positive(G16))
    assert kb.dimension == 16
    for psi in kb.vectors:
        assert np.max(np.abs(psi - psi.mean(axis=0, keepdims=True))) < 1e-8
    zero = PeriodicField.constant(G16, [0.0, 0.0])
    assert kernel_basis(zero).dimension == 256


def test_kernel_basis_orthonormal_and_annihilated():
    a = shear_positive(G16)
    kb = kernel_basis(a)
    np.testing.assert_allclose(kb.gram(), np.eye(kb.dimension), atol=1e-10)
    for psi in kb.fields():
        assert annihilation_residual(a, psi) <= kb.threshold * kb.sigma_max


def test_nyquist_block_removes_spurious_kernel():
    a = ergodic_constant(G16, 2 / 3)
    M = assemble_operator(a)
    assert M.shape == (512, 256)
    s = np.linalg.svd(M[:256], compute_uv=False)
    # the derivative block alone has a 3-dimensional kernel: constants plus
    # the Nyquist checkerboards
    assert np.sum(s < 1e-8 * s[0]) == 4


def test_matrix_free_agrees_with_dense():
    for a in (ergodic_constant(G16, 2 / 3), shear_positive(G16)):
        dense = ProjectionOperator.nullspace(a, method="dense")
        free = ProjectionOperator.nullspace(a, method="matrix-free")
        assert dense.basis.dimension == free.basis.dimension
        f = mixed(G16)
        assert norm(dense(f) - free(f)) < 1e-8


def test_small_gap_warns():
    a = ergodic_constant(G16, 2 / 3)
    with pytest.warns(IllConditionedWarning):
        kernel_basis(a, svd_threshold=0.05)


@pytest.mark.parametrize("field", [lambda g: ergodic_constant(g, 2 / 3), shear_positive])
def test_projection_algebra(field):
    a = field(G16)
    P = ProjectionOperator.nullspace(a)
    f, g = mixed(G16), sin1(G16) + PeriodicField.from_function(G16, lambda v: np.cos(TWO_PI * v[1]))
    Pf = P(f)
    assert norm(P(Pf) - Pf) <= 1e-8 * norm(f)
    assert inner(Pf, g) == pytest.approx(inner(f, P(g)), rel=1e-10)
    assert np.mean(Pf.values) == pytest.approx(np.mean(f.values), abs=1e-10)
    assert annihilation_residual(a, Pf) <= 1e-8 * P.basis.sigma_max


def test_projection_examples():
    a = shear_positive(G16)
    P = ProjectionOperator.nullspace(a)
    psi = PeriodicField.from_function(G16, lambda v: np.cos(TWO_PI * 3 * v[1]) + v[1] * 0)
    assert norm(P(psi) - psi) < 1e-8
    h = PeriodicField.from_function(G16, lambda v: np.sin(TWO_PI * v[0]) * np.cos(TWO_PI * v[1]))
    assert norm(P(advective_derivative(a, h))) < 1e-8
    erg = ProjectionOperator.nullspace(ergodic_constant(G16, 2 / 3))
    f = mixed(G16)
    np.testing.assert_allclose(erg(f).values, np.mean(f.values), atol=1e-12)
    with pytest.raises(GridMismatch):
        project(P, sin1(G32))


def test_effective_velocity():
    erg = ergodic_constant(G16, 0.5)
    abar = effective_velocity(ProjectionOperator.nullspace(erg))
    np.testing.assert_allclose(abar.values[0], 0.5, atol=1e-12)
    np.testing.assert_allclose(abar.values[1], 0.5 * np.sqrt(2), atol=1e-12)
    a = shear_positive(G16)
    abar = effective_velocity(ProjectionOperator.nullspace(a))
    np.testing.assert_allclose(abar.values, a.values, atol=1e-10)
    assert np.max(np.abs(abar.values)) <= np.max(np.abs(a.values)) + 1e-12


def test_birkhoff_and_nullspace_cross_validate():
    T = 50.0
    for a in (ergodic_constant(G16, 2 / 3), shear_positive(G16)):
        f = mixed(G16)
        pb = ProjectionOperator.birkhoff(a, T)(f)
        pn = ProjectionOperator.nullspace(a)(f)
        assert norm(pb - pn) <= 2.0 / T


def test_projection_is_flow_invariant():
    a = shear_positive(G16)
    Pf = ProjectionOperator.nullspace(a)(mixed(G16))
    chars = Characteristics(a)
    v0 = np.random.default_rng(3).random((2, 20))
    np.testing.assert_allclose(Pf(flow(chars, v0, 0.7)), Pf(v0), atol=1e-8)


def test_kernel_report_and_csv(tmp_path):
    kb = kernel_basis(shear_positive(G16))
    rep = json.loads(kb.to_json())
    assert rep["dimension"] == 16
    assert rep["gap_ratio"] > 10 * rep["threshold"]
    text = kb.to_csv(tmp_path / "basis.csv")
    lines = text.splitlines()
    assert lines[0].startswith("v1,v2,psi0")
    assert len(lines) == 257
