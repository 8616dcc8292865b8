"""Grids, periodic fields and spectral calculus on the unit torus.

Fields on T^d (d = 1 or 2) are stored as samples on the uniform collocation
grid ``v_j = j / N``; derivatives go through the discrete Fourier transform.
The Nyquist mode of an even grid has an ambiguous derivative and is
differentiated to zero, the usual convention for real spectral collocation.

Products of band-limited fields can alias. Nothing here dealiases; callers
keep the resolution at least twice the bandwidth of the fields they combine.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from kinhom.errors import GridMismatch

__all__ = [
    "TorusGrid",
    "PeriodicField",
    "BoxGrid",
    "TwoScaleField",
    "integrate_torus",
    "spectral_gradient",
    "divergence_v",
    "advective_derivative",
    "laplacian",
    "refine",
    "inner",
    "norm",
]

# modes below this fraction of the largest coefficient are dropped for
# off-grid evaluation
_TRIM = 1e-14


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on the unit torus with ``shape[i]`` points along axis i."""

    shape: tuple[int, ...]

    def __post_init__(self):
        shape = tuple(int(n) for n in np.atleast_1d(self.shape))
        if len(shape) not in (1, 2):
            raise ValueError(f"torus dimension must be 1 or 2, got {len(shape)}")
        if any(n < 4 for n in shape):
            raise ValueError(f"every resolution must be >= 4, got {shape}")
        object.__setattr__(self, "shape", shape)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(1.0 / n for n in self.shape)

    @property
    def axes(self) -> tuple[int, ...]:
        """Array axes (negative) that carry the torus coordinates."""
        return tuple(range(-self.dim, 0))

    def coords(self) -> np.ndarray:
        """Grid coordinates, shape ``(d, *shape)``."""
        lines = [np.arange(n) / n for n in self.shape]
        return np.array(np.meshgrid(*lines, indexing="ij"))

    def wavenumbers(self) -> list[np.ndarray]:
        """Signed integer wavenumbers per axis, broadcastable against the grid."""
        ks = []
        for i, n in enumerate(self.shape):
            k = np.fft.fftfreq(n, d=1.0 / n)
            view = [1] * self.dim
            view[i] = n
            ks.append(k.reshape(view))
        return ks

    def derivative_symbols(self) -> list[np.ndarray]:
        """``2 pi i k_j`` with the Nyquist entry set to zero."""
        symbols = []
        for k, n in zip(self.wavenumbers(), self.shape):
            s = 2j * np.pi * k
            if n % 2 == 0:
                s = np.where(np.abs(k) == n // 2, 0.0, s)
            symbols.append(s)
        return symbols

    def squared_wavenumber(self) -> np.ndarray:
        """``|2 pi k|^2`` on the full spectral grid."""
        return sum((2 * np.pi * k) ** 2 for k in self.wavenumbers())


def _as_values(values, grid: TorusGrid) -> np.ndarray:
    arr = np.array(values)
    if arr.dtype.kind not in "fc":
        arr = arr.astype(float)
    if arr.shape != grid.shape and arr.shape != (grid.dim, *grid.shape):
        raise ValueError(
            f"values of shape {arr.shape} do not match grid {grid.shape} "
            f"(scalar) or {(grid.dim, *grid.shape)} (vector)"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError("field values must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PeriodicField:
    """Samples of a scalar or d-vector field on a :class:`TorusGrid`.

    Vector fields keep the component index first: ``values[j]`` is the j-th
    component. Instances are immutable.
    """

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_values(self.values, self.grid))

    @classmethod
    def from_function(cls, grid: TorusGrid, fn: Callable) -> PeriodicField:
        """Sample ``fn(v)`` where ``v`` has shape ``(d, *grid.shape)``."""
        v = grid.coords()
        out = fn(v)
        if isinstance(out, (list, tuple)):
            out = np.array([np.broadcast_to(c, grid.shape) for c in out])
        else:
            out = np.broadcast_to(out, grid.shape)
        return cls(grid, out)

    @classmethod
    def constant(cls, grid: TorusGrid, value) -> PeriodicField:
        value = np.asarray(value, dtype=float)
        if value.ndim == 0:
            return cls(grid, np.full(grid.shape, float(value)))
        return cls(grid, value.reshape(-1, *([1] * grid.dim)) * np.ones(grid.shape))

    @property
    def rank(self) -> int:
        return 0 if self.values.shape == self.grid.shape else 1

    @property
    def is_vector(self) -> bool:
        return self.rank == 1

    @property
    def is_real(self) -> bool:
        return self.values.dtype.kind == "f"

    def component(self, j: int) -> PeriodicField:
        if not self.is_vector:
            raise ValueError("scalar field has no components")
        return PeriodicField(self.grid, self.values[j])

    def components(self) -> list[PeriodicField]:
        return [self.component(j) for j in range(self.grid.dim)]

    def coefficients(self) -> np.ndarray:
        """Fourier coefficients ``c_k`` with ``f(v) = sum_k c_k exp(2 pi i k.v)``."""
        return np.fft.fftn(self.values, axes=self.grid.axes) / self.grid.size

    def with_values(self, values) -> PeriodicField:
        return PeriodicField(self.grid, values)

    def sup_norm(self) -> float:
        if self.is_vector:
            return float(np.max(np.sqrt(np.sum(np.abs(self.values) ** 2, axis=0))))
        return float(np.max(np.abs(self.values)))

    def __add__(self, other):
        return self.with_values(self.values + _other_values(self, other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.with_values(self.values - _other_values(self, other))

    def __mul__(self, other):
        return self.with_values(self.values * _other_values(self, other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)

    @cached_property
    def _modes(self):
        coef = self.coefficients()
        grid = self.grid
        if self.is_vector:
            flat = coef.reshape(grid.dim, -1).T
        else:
            flat = coef.reshape(-1, 1)
        ks = np.array(
            np.meshgrid(*[np.fft.fftfreq(n, 1.0 / n) for n in grid.shape], indexing="ij")
        ).reshape(grid.dim, -1).T
        mag = np.max(np.abs(flat), axis=1)
        top = mag.max() if mag.size else 0.0
        keep = mag > _TRIM * top if top > 0 else np.zeros_like(mag, dtype=bool)
        ks, flat = ks[keep], flat[keep]
        # split Nyquist modes symmetrically so real fields interpolate as cosines
        for axis, n in enumerate(grid.shape):
            if n % 2:
                continue
            nyq = ks[:, axis] == -n // 2
            if np.any(nyq):
                mirrored = ks[nyq].copy()
                mirrored[:, axis] = n // 2
                flat = flat.copy()
                flat[nyq] *= 0.5
                ks = np.vstack([ks, mirrored])
                flat = np.vstack([flat, flat[nyq]])
        return ks, flat

    def __call__(self, points) -> np.ndarray:
        """Trigonometric interpolant evaluated at arbitrary torus points.

        ``points`` has shape ``(d, ...)``; the result has shape ``(...)`` for a
        scalar field and ``(d, ...)`` for a vector field. Cost is linear in the
        number of non-negligible Fourier modes.
        """
        points = np.asarray(points, dtype=float)
        d = self.grid.dim
        if points.shape[0] != d:
            raise GridMismatch(f"expected points of shape ({d}, ...), got {points.shape}")
        batch = points.shape[1:]
        pts = points.reshape(d, -1).T
        ks, coef = self._modes
        ncomp = coef.shape[1]
        out = np.zeros((pts.shape[0], ncomp), dtype=complex)
        if len(ks):
            chunk = max(1, 2**21 // len(ks))
            for s in range(0, pts.shape[0], chunk):
                phase = np.exp(2j * np.pi * (pts[s : s + chunk] @ ks.T))
                out[s : s + chunk] = phase @ coef
        if self.is_real:
            out = out.real
        if self.is_vector:
            return out.T.reshape(ncomp, *batch)
        return out[:, 0].reshape(batch)


def _other_values(field: PeriodicField, other):
    if isinstance(other, PeriodicField):
        if other.grid != field.grid:
            raise GridMismatch(f"grids differ: {field.grid.shape} vs {other.grid.shape}")
        return other.values
    return other


def integrate_torus(field: PeriodicField):
    """Integral over the unit torus by the (spectrally exact) rectangle rule."""
    mean = np.mean(field.values, axis=field.grid.axes)
    if field.is_vector:
        return mean
    return mean.item()


def inner(f: PeriodicField, g: PeriodicField) -> float:
    """Discrete L^2(T^d) inner product, ``mean(f * conj(g))``."""
    if f.grid != g.grid:
        raise GridMismatch(f"grids differ: {f.grid.shape} vs {g.grid.shape}")
    val = np.mean(f.values * np.conj(g.values))
    return val.real if f.is_real and g.is_real else val


def norm(f: PeriodicField) -> float:
    return float(np.sqrt(np.mean(np.abs(f.values) ** 2) * (f.grid.dim if f.is_vector else 1)))


def _apply_symbol(values: np.ndarray, grid: TorusGrid, symbol: np.ndarray, real: bool):
    spec = np.fft.fftn(values, axes=grid.axes)
    out = np.fft.ifftn(spec * symbol, axes=grid.axes)
    return out.real if real else out


def spectral_gradient(field: PeriodicField) -> PeriodicField:
    """Gradient of a scalar field by Fourier differentiation."""
    if field.is_vector:
        raise ValueError("spectral_gradient expects a scalar field")
    grid = field.grid
    parts = [
        _apply_symbol(field.values, grid, s, field.is_real) for s in grid.derivative_symbols()
    ]
    return PeriodicField(grid, np.array(parts))


def divergence_v(field: PeriodicField) -> PeriodicField:
    if not field.is_vector:
        raise ValueError("divergence_v expects a vector field")
    grid = field.grid
    total = sum(
        _apply_symbol(field.values[j], grid, s, field.is_real)
        for j, s in enumerate(grid.derivative_symbols())
    )
    return PeriodicField(grid, total)


def advective_derivative(a: PeriodicField, f: PeriodicField) -> PeriodicField:
    """``a . grad f`` evaluated pointwise (no dealiasing)."""
    if a.grid != f.grid:
        raise GridMismatch(f"grids differ: {a.grid.shape} vs {f.grid.shape}")
    if not a.is_vector or f.is_vector:
        raise ValueError("advective_derivative expects a vector a and a scalar f")
    grad = spectral_gradient(f)
    return PeriodicField(f.grid, np.sum(a.values * grad.values, axis=0))


def laplacian(field: PeriodicField) -> PeriodicField:
    if field.is_vector:
        raise ValueError("laplacian expects a scalar field")
    grid = field.grid
    return PeriodicField(
        grid, _apply_symbol(field.values, grid, -grid.squared_wavenumber(), field.is_real)
    )


def refine(field: PeriodicField, shape: Sequence[int]) -> PeriodicField:
    """Resample a field on a finer grid by spectral zero padding."""
    new = TorusGrid(tuple(shape))
    old = field.grid
    if new.dim != old.dim or any(n < m for n, m in zip(new.shape, old.shape)):
        raise ValueError("refine needs a grid at least as fine in every direction")
    coef = field.coefficients()
    lead = coef.shape[: coef.ndim - old.dim]
    out = np.zeros(lead + new.shape, dtype=complex)
    src_idx, dst_idx = [], []
    for n_old, n_new in zip(old.shape, new.shape):
        k = np.fft.fftfreq(n_old, 1.0 / n_old).astype(int)
        src_idx.append(np.arange(n_old))
        dst_idx.append(np.mod(k, n_new))
    ix_src = np.ix_(*src_idx)
    ix_dst = np.ix_(*dst_idx)
    out[(Ellipsis, *ix_dst)] = coef[(Ellipsis, *ix_src)]
    values = np.fft.ifftn(out * new.size, axes=new.axes)
    return PeriodicField(new, values.real if field.is_real else values)


@dataclass(frozen=True)
class BoxGrid:
    """Uniform grid on a box in R^d.

    Points are ``lo + j h`` for ``j = 0 .. N-1`` with ``h = (hi - lo) / N``.
    For periodic boxes this is the usual collocation grid; for compactly
    supported integrands it is the trapezoid rule.
    """

    bounds: tuple[tuple[float, float], ...]
    shape: tuple[int, ...]
    periodic: bool = False

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        shape = tuple(int(n) for n in np.atleast_1d(self.shape))
        if len(bounds) != len(shape):
            raise ValueError("bounds and shape must have the same length")
        if any(hi <= lo for lo, hi in bounds):
            raise ValueError(f"empty box {bounds}")
        if any(n < 4 for n in shape):
            raise ValueError(f"every resolution must be >= 4, got {shape}")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "shape", shape)

    @classmethod
    def with_spacing(cls, bounds, max_spacing: float, periodic: bool = False) -> BoxGrid:
        shape = tuple(max(4, int(np.ceil((hi - lo) / max_spacing - 1e-9))) for lo, hi in bounds)
        return cls(tuple(bounds), shape, periodic)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def lengths(self) -> tuple[float, ...]:
        return tuple(hi - lo for lo, hi in self.bounds)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(length / n for length, n in zip(self.lengths, self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.bounds])

    def axis_points(self, i: int) -> np.ndarray:
        lo = self.bounds[i][0]
        return lo + np.arange(self.shape[i]) * self.spacing[i]

    def coords(self) -> np.ndarray:
        return np.array(
            np.meshgrid(*[self.axis_points(i) for i in range(self.dim)], indexing="ij")
        )

    def integrate(self, values) -> float:
        values = np.asarray(values)
        return np.sum(values, axis=tuple(range(-self.dim, 0))) * self.cell_volume

    def wavenumbers(self) -> list[np.ndarray]:
        """Angular wavenumbers ``2 pi k / L`` per axis (periodic boxes)."""
        out = []
        for i, (n, length) in enumerate(zip(self.shape, self.lengths)):
            k = 2 * np.pi * np.fft.fftfreq(n, d=length / n)
            view = [1] * self.dim
            view[i] = n
            out.append(k.reshape(view))
        return out

    def to_index(self, points: np.ndarray) -> np.ndarray:
        """Fractional grid indices of physical points, shape ``(d, ...)``."""
        points = np.asarray(points, dtype=float)
        h = np.array(self.spacing).reshape(-1, *([1] * (points.ndim - 1)))
        lo = self.lower.reshape(-1, *([1] * (points.ndim - 1)))
        return (points - lo) / h


def interpolate_box(grid: BoxGrid, values: np.ndarray, points: np.ndarray, order: int = 3):
    """Cubic-spline interpolation of samples on a box grid.

    Periodic boxes wrap; otherwise values outside the box are zero, the
    natural extension for compactly supported data.
    """
    idx = grid.to_index(points)
    mode = "grid-wrap" if grid.periodic else "constant"
    values = np.asarray(values)
    if np.iscomplexobj(values):
        return interpolate_box(grid, values.real, points, order) + 1j * interpolate_box(
            grid, values.imag, points, order
        )
    return ndimage.map_coordinates(values, idx, order=order, mode=mode, cval=0.0)


@dataclass(frozen=True, eq=False)
class TwoScaleField:
    """Samples ``f(x_i, v_j)`` on a box grid times a torus grid.

    ``values`` has shape ``(*xgrid.shape, *vgrid.shape)``.
    """

    xgrid: BoxGrid
    vgrid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=float)
        expected = (*self.xgrid.shape, *self.vgrid.shape)
        if arr.shape != expected:
            raise ValueError(f"values of shape {arr.shape}, expected {expected}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("two-scale field values must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @classmethod
    def from_function(cls, xgrid: BoxGrid, vgrid: TorusGrid, fn: Callable) -> TwoScaleField:
        """Sample ``fn(x, v)`` with ``x`` and ``v`` broadcast to the product grid."""
        dx, dv = xgrid.dim, vgrid.dim
        x = xgrid.coords().reshape(dx, *xgrid.shape, *([1] * dv))
        v = vgrid.coords().reshape(dv, *([1] * dx), *vgrid.shape)
        vals = np.broadcast_to(fn(x, v), (*xgrid.shape, *vgrid.shape))
        return cls(xgrid, vgrid, vals)

    def v_mean(self) -> np.ndarray:
        """``int f(x, v) dv`` on the x-grid."""
        return np.mean(self.values, axis=tuple(range(-self.vgrid.dim, 0)))

    def l2_norm(self) -> float:
        return float(np.sqrt(self.xgrid.integrate(np.mean(self.values**2, axis=self.vgrid.axes))))

    def slice_v(self, index) -> np.ndarray:
        return self.values[(Ellipsis, *np.atleast_1d(index))]

    def __call__(self, x, v) -> np.ndarray:
        """Interpolate: cubic splines in x, trigonometric in v.

        ``x`` and ``v`` have shapes ``(dx, ...)`` and ``(dv, ...)`` with a common
        trailing batch shape.
        """
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        dx, dv = self.xgrid.dim, self.vgrid.dim
        coef = np.fft.fftn(self.values, axes=tuple(range(dx, dx + dv))) / self.vgrid.size
        ks = self.vgrid.wavenumbers()
        batch = np.broadcast_shapes(x.shape[1:], v.shape[1:])
        x = np.broadcast_to(x, (dx, *batch))
        v = np.broadcast_to(v, (dv, *batch))
        out = np.zeros(batch, dtype=complex)
        flat = coef.reshape(*self.xgrid.shape, -1)
        kflat = np.array(np.broadcast_arrays(*ks)).reshape(dv, -1)
        scale = np.abs(flat).max() if flat.size else 0.0
        for m in range(flat.shape[-1]):
            c = flat[..., m]
            if scale == 0 or np.abs(c).max() <= _TRIM * scale:
                continue
            cx = interpolate_box(self.xgrid, c, x)
            phase = np.exp(2j * np.pi * np.tensordot(kflat[:, m], v, axes=(0, 0)))
            out += cx * phase
        return out.real
