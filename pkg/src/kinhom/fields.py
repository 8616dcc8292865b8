"""Closed-form velocity fields on the torus used across the test suite and CLI.

Every builder takes the grid and regenerates the field exactly, so a named
field means the same thing at every resolution.
"""

from __future__ import annotations

import numpy as np

from kinhom.torus import PeriodicField, TorusGrid

TWO_PI = 2 * np.pi

ERGODIC_DIRECTION = (1.0, np.sqrt(2.0))


def ergodic_constant(grid: TorusGrid, scale: float = 1.0, direction=ERGODIC_DIRECTION) -> PeriodicField:
    """Constant field ``scale * (1, sqrt 2)``; its flow is ergodic on T^2."""
    if grid.dim != 2:
        raise ValueError("ergodic constant fields live on T^2")
    return PeriodicField.constant(grid, scale * np.asarray(direction, dtype=float))


def shear(grid: TorusGrid, b) -> PeriodicField:
    """``a(v) = (b(v2), 0)`` for a callable profile ``b``."""
    return PeriodicField.from_function(grid, lambda v: [b(v[1]), np.zeros_like(v[0])])


def shear_sin(grid: TorusGrid, amplitude: float = 1.0) -> PeriodicField:
    return shear(grid, lambda s: amplitude * np.sin(TWO_PI * s))


def shear_positive(grid: TorusGrid) -> PeriodicField:
    """Shear with ``b = 1 + sin(2 pi v2) / 2``, nowhere zero."""
    return shear(grid, lambda s: 1.0 + 0.5 * np.sin(TWO_PI * s))


def from_stream(grid: TorusGrid, xi) -> PeriodicField:
    """``a = grad^perp xi = (-d2 xi, d1 xi)`` computed spectrally."""
    if grid.dim != 2:
        raise ValueError("stream functions need d = 2")
    vals = np.asarray(xi(grid.coords()), dtype=float)
    spec = np.fft.fft2(vals)
    d1, d2 = grid.derivative_symbols()
    a1 = -np.fft.ifft2(d2 * spec).real
    a2 = np.fft.ifft2(d1 * spec).real
    return PeriodicField(grid, np.array([a1, a2]))


def perp_gradient(grid: TorusGrid) -> PeriodicField:
    """Cellular flow from ``xi = cos(2 pi v1) cos(2 pi v2) / (2 pi)``."""
    return from_stream(grid, lambda v: np.cos(TWO_PI * v[0]) * np.cos(TWO_PI * v[1]) / TWO_PI)


def random_divergence_free(grid: TorusGrid, bandwidth: int = 3, seed=None,
                           amplitude: float = 1.0) -> PeriodicField:
    """Band-limited random divergence-free mean-zero field on T^2.

    The stream function has independent Gaussian coefficients on
    ``1 <= |k|_inf <= bandwidth`` with a ``|k|^-2`` envelope; the field is
    rescaled to sup norm ``amplitude``.
    """
    if grid.dim != 2:
        raise ValueError("random divergence-free fields need d = 2")
    if 2 * bandwidth >= min(grid.shape) // 2:
        raise ValueError("grid too coarse for the requested bandwidth")
    rng = np.random.default_rng(seed)
    v = grid.coords()
    xi = np.zeros(grid.shape)
    for k1 in range(-bandwidth, bandwidth + 1):
        for k2 in range(0, bandwidth + 1):
            if k2 == 0 and k1 <= 0:
                continue
            c, s = rng.standard_normal(2) / (k1 * k1 + k2 * k2)
            ph = TWO_PI * (k1 * v[0] + k2 * v[1])
            xi += c * np.cos(ph) + s * np.sin(ph)
    a = from_stream(grid, lambda _: xi)
    return a * (amplitude / a.sup_norm())


BUILTIN_FIELDS = {
    "ergodic-constant": ergodic_constant,
    "shear-sin": shear_sin,
    "shear-positive": shear_positive,
    "perp-gradient": perp_gradient,
    "random": random_divergence_free,
}


def builtin_field(name: str, grid: TorusGrid, **params) -> PeriodicField:
    try:
        builder = BUILTIN_FIELDS[name]
    except KeyError:
        raise KeyError(f"unknown field {name!r}; known: {sorted(BUILTIN_FIELDS)}") from None
    return builder(grid, **params)
