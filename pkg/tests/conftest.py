import sys

import numpy as np
import pytest

from kinhom.torus import BoxGrid, TorusGrid


def bump(x, center=0.0, width=0.15):
    """Gaussian bump, negligible (< 1e-14) at the edge of [-1, 1]^d."""
    x = np.asarray(x, dtype=float)
    c = np.reshape(center, (-1,) + (1,) * (x.ndim - 1))
    return np.exp(-np.sum((x - c) ** 2, axis=0) / (2 * width**2))


@pytest.fixture
def grid64():
    return TorusGrid((64, 64))


@pytest.fixture
def grid1d():
    return TorusGrid((64,))


@pytest.fixture
def unit_box_1d():
    return ((-1.0, 1.0),)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def box_for(eps, bounds=((-1.0, 1.0),), ppp=8):
    return BoxGrid.with_spacing(bounds, eps / ppp)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
