"""The kernel ``K = ker(a . grad_v)`` on the torus and the projection onto it.

Two independent constructions:

* Birkhoff: time averages ``(1/T) int_0^T f(T(s, v)) ds`` along the flow of a.
* Null space: the discrete operator ``a . grad`` is assembled as a matrix and
  its numerical kernel is read off an SVD.

On an even grid the spectral derivative kills the Nyquist mode, which would
make every Nyquist function a spurious kernel element. The assembled operator
therefore carries one extra block, ``sum_j a_j (pi N_j) Q_j`` with ``Q_j``
the projector onto the Nyquist mode along axis j. It is the imaginary part
of the derivative symbol ``+- i pi N`` that the real collocation drops.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg, ndimage
from scipy.sparse.linalg import LinearOperator, lobpcg

from kinhom.errors import GridMismatch, HypothesisViolation, IllConditionedWarning
from kinhom.ode import n_steps, rk4_step
from kinhom.torus import (
    PeriodicField,
    TorusGrid,
    advective_derivative,
    divergence_v,
    inner,
    spectral_gradient,
)

DENSE_LIMIT = 64 * 64


@dataclass(frozen=True, eq=False)
class Characteristics:
    """Flow of a divergence-free field a on the torus, integrated with RK4.

    ``step`` defaults to ``min(spacing) / (4 |a|_inf)``. ``interpolation``
    chooses how a is evaluated off the grid: trigonometric ("spectral") or
    periodic cubic splines ("cubic").
    """

    a: PeriodicField
    step: Optional[float] = None
    interpolation: str = "spectral"
    div_tol: float = 1e-8
    lipschitz: float = field(init=False)

    def __post_init__(self):
        a = self.a
        if not a.is_vector:
            raise ValueError("characteristics need a vector field")
        div = divergence_v(a).sup_norm()
        if div > self.div_tol * max(1.0, a.sup_norm()):
            raise HypothesisViolation(f"div a = {div:.3e} exceeds {self.div_tol:g}", value=div)
        lip = max(spectral_gradient(c).sup_norm() for c in a.components())
        object.__setattr__(self, "lipschitz", float(lip))
        if self.step is None:
            speed = a.sup_norm()
            h = min(a.grid.spacing) / (4 * speed) if speed > 0 else 1.0
            object.__setattr__(self, "step", float(h))
        if self.interpolation not in ("spectral", "cubic"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        if self.interpolation == "cubic":
            coeffs = [ndimage.spline_filter(c, order=3, mode="grid-wrap") for c in a.values]
            object.__setattr__(self, "_spline", coeffs)

    @property
    def grid(self) -> TorusGrid:
        return self.a.grid

    def velocity(self, y: np.ndarray) -> np.ndarray:
        if self.interpolation == "spectral":
            return self.a(np.mod(y, 1.0))
        shape = np.array(self.grid.shape).reshape(-1, *([1] * (y.ndim - 1)))
        idx = np.mod(y, 1.0) * shape
        return np.array([
            ndimage.map_coordinates(c, idx, order=3, mode="grid-wrap", prefilter=False)
            for c in self._spline
        ])

    def rhs(self, t, y):
        return self.velocity(y)


def flow(chars: Characteristics, v0, t: float, unwrapped: bool = False) -> np.ndarray:
    """``T(t, v0)`` by RK4; ``v0`` has shape ``(d,)`` or ``(d, ...)``."""
    if t < 0:
        raise ValueError("flow is defined for t >= 0")
    y = np.array(v0, dtype=float)
    m = n_steps(t, chars.step)
    if m:
        h = t / m
        for i in range(m):
            y = rk4_step(chars.rhs, i * h, y, h)
    return y if unwrapped else np.mod(y, 1.0)


def birkhoff_project(chars: Characteristics, f: PeriodicField, horizon: float,
                     step: float | None = None) -> PeriodicField:
    """Time average of f along the flow from every grid point.

    Trapezoid rule on the RK4 steps; f is evaluated spectrally between grid
    points.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if f.grid != chars.grid:
        raise GridMismatch(f"grids differ: {f.grid.shape} vs {chars.grid.shape}")
    grid = chars.grid
    y = grid.coords().reshape(grid.dim, -1)
    m = n_steps(horizon, step or chars.step)
    h = horizon / m
    prev = f(y)
    acc = 0.5 * prev
    for i in range(m):
        y = np.mod(rk4_step(chars.rhs, i * h, y, h), 1.0)
        cur = f(y)
        acc = acc + (cur if i < m - 1 else 0.5 * cur)
    avg = acc * h / horizon
    return f.with_values(avg.reshape(f.values.shape))


# -- null-space route -------------------------------------------------------


def _nyquist_symbols(grid: TorusGrid) -> list[np.ndarray]:
    out = []
    for k, n in zip(grid.wavenumbers(), grid.shape):
        if n % 2:
            out.append(np.zeros_like(k, dtype=float))
        else:
            out.append(np.where(np.abs(k) == n // 2, np.pi * n, 0.0))
    return out


def _apply_blocks(a: PeriodicField, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """The two blocks of the stacked operator applied to ``values (..., *shape)``."""
    grid = a.grid
    axes = grid.axes
    spec = np.fft.fftn(values, axes=axes)
    deriv = np.zeros(values.shape)
    nyq = np.zeros(values.shape)
    for j, (s, q) in enumerate(zip(grid.derivative_symbols(), _nyquist_symbols(grid))):
        deriv += a.values[j] * np.fft.ifftn(s * spec, axes=axes).real
        if np.any(q):
            nyq += a.values[j] * np.fft.ifftn(q * spec, axes=axes).real
    return deriv, nyq


def _apply_blocks_adjoint(a: PeriodicField, r1: np.ndarray, r2: np.ndarray) -> np.ndarray:
    # D_j^T = -D_j and Q_j symmetric
    grid = a.grid
    axes = grid.axes
    out = np.zeros(r1.shape)
    for j, (s, q) in enumerate(zip(grid.derivative_symbols(), _nyquist_symbols(grid))):
        out -= np.fft.ifftn(s * np.fft.fftn(a.values[j] * r1, axes=axes), axes=axes).real
        if np.any(q):
            out += np.fft.ifftn(q * np.fft.fftn(a.values[j] * r2, axes=axes), axes=axes).real
    return out


def assemble_operator(a: PeriodicField) -> np.ndarray:
    """Dense ``(2n, n)`` real matrix of the stacked operator."""
    grid = a.grid
    n = grid.size
    eye = np.eye(n).reshape(n, *grid.shape)
    d, q = _apply_blocks(a, eye)
    return np.vstack([d.reshape(n, n).T, q.reshape(n, n).T])


@dataclass(frozen=True, eq=False)
class KernelBasis:
    """Orthonormal basis of the numerical kernel of ``a . grad_v``.

    ``vectors`` has shape ``(k, *grid.shape)`` and is orthonormal for the
    discrete L^2 product ``mean(f g)``.
    """

    grid: TorusGrid
    vectors: np.ndarray
    threshold: float
    sigma_max: float
    sigma_kernel: float
    sigma_next: float
    method: str

    @property
    def dimension(self) -> int:
        return self.vectors.shape[0]

    @property
    def gap_ratio(self) -> float:
        """``sigma_next / sigma_max``; compare with ``threshold``."""
        return self.sigma_next / self.sigma_max if self.sigma_max > 0 else float("inf")

    def fields(self) -> list[PeriodicField]:
        return [PeriodicField(self.grid, v) for v in self.vectors]

    def gram(self) -> np.ndarray:
        flat = self.vectors.reshape(self.dimension, -1)
        return flat @ flat.T / self.grid.size

    def report(self) -> dict:
        return {
            "dimension": self.dimension,
            "grid": list(self.grid.shape),
            "method": self.method,
            "threshold": self.threshold,
            "sigma_max": self.sigma_max,
            "sigma_kernel_max": self.sigma_kernel,
            "sigma_next": self.sigma_next,
            "gap_ratio": self.gap_ratio,
        }

    def to_json(self) -> str:
        return json.dumps(self.report(), indent=2, sort_keys=True)

    def to_csv(self, path=None) -> str:
        """One row per grid point: coordinates then each basis field."""
        v = self.grid.coords().reshape(self.grid.dim, -1)
        cols = [f"v{i + 1}" for i in range(self.grid.dim)]
        cols += [f"psi{k}" for k in range(self.dimension)]
        data = np.vstack([v, self.vectors.reshape(self.dimension, -1)]).T
        lines = [",".join(cols)]
        lines += [",".join(f"{x:.16e}" for x in row) for row in data]
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _dense_kernel(a: PeriodicField, threshold: float):
    grid = a.grid
    M = assemble_operator(a)
    _, s, vt = linalg.svd(M, full_matrices=False)
    smax = s[0] if s.size else 0.0
    if smax == 0:
        return vt, s, 0.0, 0.0, 0.0
    cut = threshold * smax
    keep = s <= cut
    sk = float(s[keep].max()) if keep.any() else 0.0
    snext = float(s[~keep].min()) if (~keep).any() else float("inf")
    return vt[keep], s, float(smax), sk, snext


def _matfree_kernel(a: PeriodicField, threshold: float, max_dim: int | None, seed=0):
    grid = a.grid
    n = grid.size
    shape = grid.shape

    def normal(x):
        x = np.asarray(x)
        cols = x.reshape(n, -1).T.reshape(-1, *shape)
        r1, r2 = _apply_blocks(a, cols)
        out = _apply_blocks_adjoint(a, r1, r2)
        return out.reshape(-1, n).T.reshape(x.shape)

    k = max_dim or (max(shape) + 4)
    k = min(k, n // 5)
    op = LinearOperator((n, n), matvec=normal, matmat=normal, dtype=float)
    # sigma_max of the stacked operator: a few power iterations on M^T M
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    lam = 0.0
    for _ in range(60):
        y = normal(x)
        lam = np.linalg.norm(y) / np.linalg.norm(x)
        x = y / np.linalg.norm(y)
    smax = float(np.sqrt(lam))
    x0 = rng.standard_normal((n, k))
    # (1 - Laplacian)^-1 as a preconditioner accelerates the low end
    lap = 1.0 + grid.squared_wavenumber() * (a.sup_norm() ** 2)

    def precond(x):
        x = np.asarray(x)
        cols = x.reshape(n, -1).T.reshape(-1, *shape)
        out = np.fft.ifftn(np.fft.fftn(cols, axes=grid.axes) / lap, axes=grid.axes).real
        return out.reshape(-1, n).T.reshape(x.shape)

    pre = LinearOperator((n, n), matvec=precond, matmat=precond, dtype=float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lam_k, vecs = lobpcg(op, x0, M=pre, largest=False, tol=1e-12, maxiter=500)
    order = np.argsort(lam_k)
    vecs = vecs[:, order]
    # singular values recomputed directly from the Ritz vectors
    cols = vecs.T.reshape(-1, *shape)
    r1, r2 = _apply_blocks(a, cols)
    sig = np.sqrt(np.sum(r1.reshape(k, -1) ** 2, axis=1) + np.sum(r2.reshape(k, -1) ** 2, axis=1))
    keep = sig <= threshold * smax
    q, _ = np.linalg.qr(vecs[:, keep])
    sk = float(sig[keep].max()) if keep.any() else 0.0
    snext = float(sig[~keep].min()) if (~keep).any() else float("inf")
    return q.T, sig, smax, sk, snext


def kernel_basis(a: PeriodicField, svd_threshold: float = 1e-8, method: str = "auto",
                 max_dim: int | None = None, atol: float = 0.0) -> KernelBasis:
    """Orthonormal basis of the discrete kernel of ``a . grad_v``.

    Singular values at or below ``svd_threshold * sigma_max`` count as zero.
    ``method`` is "dense" (full SVD), "matrix-free" (LOBPCG on the normal
    operator, looking for at most ``max_dim`` kernel vectors) or "auto",
    which is dense up to 64^2 unknowns. A field with sup norm at most
    ``atol`` counts as zero, so its kernel is the whole space.
    """
    grid = a.grid
    n = grid.size
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "matrix-free"
    if not np.any(a.values) or np.max(np.abs(a.values)) <= atol:
        vecs = np.eye(n)
        return KernelBasis(grid, vecs.reshape(n, *grid.shape) * np.sqrt(n), svd_threshold,
                           0.0, 0.0, float("inf"), method)
    if method == "dense":
        vt, _, smax, sk, snext = _dense_kernel(a, svd_threshold)
    elif method == "matrix-free":
        vt, _, smax, sk, snext = _matfree_kernel(a, svd_threshold, max_dim)
    else:
        raise ValueError(f"unknown method {method!r}")
    if snext < 10 * svd_threshold * smax:
        warnings.warn(
            f"small spectral gap: next singular value {snext / smax:.2e} of sigma_max "
            f"against threshold {svd_threshold:.1e}; kernel dimension is grid-sensitive",
            IllConditionedWarning,
            stacklevel=2,
        )
    vecs = np.asarray(vt).reshape(-1, *grid.shape) * np.sqrt(n)
    return KernelBasis(grid, vecs, svd_threshold, smax, sk, snext, method)


@dataclass(frozen=True, eq=False)
class ProjectionOperator:
    """Projection P onto ``ker(a . grad_v)``, by null-space basis or Birkhoff averaging."""

    a: PeriodicField
    mode: str
    basis: Optional[KernelBasis] = None
    horizon: Optional[float] = None
    chars: Optional[Characteristics] = None

    @classmethod
    def nullspace(cls, a: PeriodicField, svd_threshold: float = 1e-8, method: str = "auto",
                  basis: KernelBasis | None = None) -> ProjectionOperator:
        basis = basis or kernel_basis(a, svd_threshold, method)
        return cls(a, "nullspace", basis=basis)

    @classmethod
    def birkhoff(cls, a: PeriodicField, horizon: float, step: float | None = None,
                 interpolation: str = "spectral") -> ProjectionOperator:
        chars = Characteristics(a, step=step, interpolation=interpolation)
        return cls(a, "birkhoff", horizon=float(horizon), chars=chars)

    @property
    def grid(self) -> TorusGrid:
        return self.a.grid

    def __call__(self, f: PeriodicField) -> PeriodicField:
        return project(self, f)

    def matrix(self) -> np.ndarray:
        """``n x n`` matrix of P on grid samples (null-space mode)."""
        if self.mode != "nullspace":
            raise ValueError("only the null-space projection has an explicit matrix")
        q = self.basis.vectors.reshape(self.basis.dimension, -1)
        return q.T @ q / self.grid.size


def project(P: ProjectionOperator, f: PeriodicField) -> PeriodicField:
    if f.grid != P.grid:
        raise GridMismatch(f"grids differ: {f.grid.shape} vs {P.grid.shape}")
    if P.mode == "birkhoff":
        if f.is_vector:
            parts = [birkhoff_project(P.chars, c, P.horizon).values for c in f.components()]
            return f.with_values(np.array(parts))
        return birkhoff_project(P.chars, f, P.horizon)
    n = P.grid.size
    q = P.basis.vectors.reshape(P.basis.dimension, -1)
    lead = f.values.shape[: f.values.ndim - P.grid.dim]
    flat = f.values.reshape(*lead, n)
    coeff = flat @ q.T / n
    return f.with_values((coeff @ q).reshape(f.values.shape))


def effective_velocity(P: ProjectionOperator, a: PeriodicField | None = None) -> PeriodicField:
    """``abar = P a`` componentwise. Its sup norm never exceeds that of a."""
    a = P.a if a is None else a
    abar = project(P, a)
    bound = np.max(np.abs(a.values))
    over = np.max(np.abs(abar.values)) - bound
    if over > 1e-6 * max(1.0, bound):
        warnings.warn(f"|Pa|_inf exceeds |a|_inf by {over:.2e}", IllConditionedWarning,
                      stacklevel=2)
    return abar


def annihilation_residual(a: PeriodicField, f: PeriodicField) -> float:
    """``|a . grad f|_2 / |f|_2``."""
    den = np.sqrt(inner(f, f))
    r = advective_derivative(a, f)
    return float(np.sqrt(inner(r, r)) / den) if den > 0 else 0.0
