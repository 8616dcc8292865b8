import numpy as np
import pytest

from kinhom import counterexample as cx
from kinhom.errors import UnsupportedRegion
from kinhom.torus import BoxGrid
from kinhom.two_scale import TestFunction

TWO_PI = 2 * np.pi


def gauss(x, c, w=0.4):
    return np.exp(-((x[0] - c[0]) ** 2 + (x[1] - c[1]) ** 2) / (2 * w * w))


def resolving_theta(t, c2=1.25):
    # resolves v2 - v1, the direction in which the limit oscillates
    return TestFunction(lambda x, v: gauss(x, (t - 0.75, c2)) * np.sin(TWO_PI * (v[1] - v[0])))


def band_points(n=7):
    y1 = np.linspace(-1.0, -0.5, n)
    return np.array([y1, np.linspace(-0.2, 0.3, n)])


def test_velocity_profile():
    x = np.array([[-0.5, 0.3, 1.7], [0.0, 0.0, 0.0]])
    np.testing.assert_array_equal(cx.velocity(x), [[1, 1, 1], [0, 0.3, 1]])


def test_F_is_antiderivative_of_a2():
    s = np.linspace(-1, 2, 301)
    h = 1e-6
    np.testing.assert_allclose((cx.F(s + h) - cx.F(s - h)) / (2 * h), np.clip(s, 0, 1), atol=1e-6)


def test_first_component_moves_at_unit_speed():
    y = band_points()
    for t in (0.2, 1.0, 2.5):
        np.testing.assert_allclose(cx.exact_characteristics(t, y)[0], y[0] + t)


def test_second_component_at_exit_time():
    y = band_points()
    t1 = 1.0 - y[0]
    np.testing.assert_allclose(cx.exact_characteristics(t1, y)[1], y[1] + 0.5, atol=1e-14)


def test_second_component_after_exit():
    y = band_points()
    t = 3.0
    X = cx.exact_characteristics(t, y)
    np.testing.assert_allclose(X[1], y[1] + X[0] - 0.5, atol=1e-14)
    np.testing.assert_allclose(X[1], y[1] + 0.5 + t - (1 - y[0]), atol=1e-14)


@pytest.mark.parametrize("t", [0.3, 1.2, 2.5])
def test_closed_form_matches_rk4(t):
    y = band_points(5)
    np.testing.assert_allclose(cx.numeric_characteristics(t, y), cx.exact_characteristics(t, y),
                               atol=1e-8)


def test_backward_foot_inverts_forward_trace():
    y = band_points()
    for t in (0.4, 1.3, 2.5):
        np.testing.assert_allclose(cx.backward_foot(t, cx.exact_characteristics(t, y)), y,
                                   atol=1e-14)


def test_exact_characteristics_reject_unsupported_starts():
    with pytest.raises(UnsupportedRegion):
        cx.exact_characteristics(1.0, np.array([[0.2], [0.0]]))
    with pytest.raises(UnsupportedRegion):
        cx.exact_characteristics(-1.0, np.array([[-0.7], [0.0]]))


def test_subsequence_phase():
    for alpha in (0.0, 0.25, 0.5):
        eps = cx.subsequence(alpha, [4, 8, 16])
        np.testing.assert_allclose(np.mod(1 / (2 * eps) + 1e-12, 1.0), alpha, atol=1e-9)
        assert np.all(np.diff(eps) < 0)


def test_solution_at_time_zero_is_data():
    x = np.array([[-0.8, -0.6, 0.2], [0.05, -0.1, 0.0]])
    eps = 0.05
    want = cx.default_envelope(x) * np.sin(TWO_PI * np.mod(x[1], eps) / eps)
    np.testing.assert_allclose(cx.solution(0.0, x, eps), want, atol=1e-12)


def test_solution_after_crossing_matches_closed_form():
    # u = K(x1 - t, x2 - x1 + 1/2) L(x2/eps - x1/eps + 1/(2 eps)) for t > 2
    t, eps = 2.5, 1 / 24
    x = np.array([np.linspace(1.55, 1.95, 9), np.linspace(1.0, 1.3, 9)])
    K = cx.default_envelope(np.array([x[0] - t, x[1] - x[0] + 0.5]))
    L = np.sin(TWO_PI * (x[1] / eps - x[0] / eps + 1 / (2 * eps)))
    np.testing.assert_allclose(cx.solution(t, x, eps), K * L, atol=1e-9)


def test_support_box_contains_support():
    t = 2.5
    (a1, b1), (a2, b2) = cx.support_box(t)
    y = np.array(np.meshgrid(np.linspace(-1, -0.5, 33), np.linspace(-0.25, 0.25, 33))).reshape(2, -1)
    X = cx.exact_characteristics(t, y)
    assert X[0].min() >= a1 and X[0].max() <= b1
    assert X[1].min() >= a2 and X[1].max() <= b2


def test_predicted_limit_regimes():
    x = np.array([[1.75], [1.25]])
    v = np.array([[0.1], [0.3]])
    f0 = cx.predicted_limit(2.5, 0.0, x, v)
    f5 = cx.predicted_limit(2.5, 0.5, x, v)
    np.testing.assert_allclose(f5, -f0)
    assert np.all(cx.predicted_limit(1.2, 0.0, x, v) == 0)
    with pytest.raises(UnsupportedRegion):
        cx.predicted_limit(1.8, 0.0, x, v)


def test_limit_pairings_flip_sign_between_alphas():
    t = 2.5
    th = resolving_theta(t)
    box = BoxGrid.with_spacing(cx.support_box(t), 2**-6)
    p0 = cx.limit_pairing(t, 0.0, th, box)
    p5 = cx.limit_pairing(t, 0.5, th, box)
    assert p0 == pytest.approx(-p5, abs=1e-12)
    assert abs(p0) > 1e-2


def test_subsequence_limits_after_crossing():
    t = 2.5
    table = cx.subsequence_limits(resolving_theta(t), [0.0, 0.5], t, ns=(4, 8, 16))
    for alpha, rep in table.reports.items():
        assert rep.extrapolated_error < 1e-3
        assert rep.metadata["alpha"] == alpha
    assert table.spread() > 1e-2


def test_v_independent_theta_sees_zero_weak_limit():
    t = 2.5
    th = TestFunction.of_x(lambda x: gauss(x, (t - 0.75, 1.25)))
    table = cx.subsequence_limits(th, [0.0, 0.25], t, ns=(4, 8, 16))
    for rep in table.reports.values():
        assert abs(rep.extrapolated) < 1e-3
        assert abs(rep.references[0]) < 1e-15


def test_no_reference_inside_unsupported_window():
    table = cx.subsequence_limits(resolving_theta(1.8, 0.5), [0.0], 1.8, ns=(4, 8))
    assert np.isnan(table.reports[0.0].references[0])
