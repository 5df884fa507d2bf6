"""Scalar and vector fields sampled on a uniform 2-D grid.

Array layout: ``values[j, i]`` holds the sample at world position
``(x, y) = (i * spacing, j * spacing)``, so flattening a ``(height, width)``
array in C order gives the row-major ``values[j * width + i]`` indexing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage


class DomainError(ValueError):
    """A query point lies outside the region where an operator is defined."""


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    spacing: float = 1.0

    def __post_init__(self):
        if self.width < 3 or self.height < 3:
            raise ValueError(f"grid must be at least 3x3 cells, got {self.width}x{self.height}")
        if not self.spacing > 0:
            raise ValueError(f"grid spacing must be positive, got {self.spacing}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def x_max(self) -> float:
        return (self.width - 1) * self.spacing

    @property
    def y_max(self) -> float:
        return (self.height - 1) * self.spacing

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """World coordinate arrays ``(X, Y)`` of shape ``(height, width)``."""
        x = np.arange(self.width) * self.spacing
        y = np.arange(self.height) * self.spacing
        return np.meshgrid(x, y)

    def contains(self, x, y, margin: float = 0.0):
        """Whether points lie in the world rectangle shrunk by ``margin``."""
        eps = 1e-9 * self.spacing
        x = np.asarray(x)
        y = np.asarray(y)
        return (
            (x >= margin - eps)
            & (x <= self.x_max - margin + eps)
            & (y >= margin - eps)
            & (y <= self.y_max - margin + eps)
        )


def _checked(values, grid: GridSpec, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.shape != grid.shape:
        if arr.size == grid.width * grid.height:
            arr = arr.reshape(grid.shape)
        else:
            raise ValueError(f"{name} has shape {arr.shape}, grid expects {grid.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _checked(self.values, self.grid, "values"))

    @classmethod
    def from_function(cls, grid: GridSpec, fn) -> ScalarField:
        X, Y = grid.coords()
        return cls(grid, np.broadcast_to(fn(X, Y), grid.shape))

    @cached_property
    def _derivatives(self):
        h = self.grid.spacing
        gy, gx = np.gradient(self.values, h)
        return gx, gy

    @cached_property
    def _second_derivatives(self):
        g = self.values
        h2 = self.grid.spacing ** 2
        gxx = np.zeros_like(g)
        gyy = np.zeros_like(g)
        gxy = np.zeros_like(g)
        gxx[:, 1:-1] = (g[:, 2:] - 2.0 * g[:, 1:-1] + g[:, :-2]) / h2
        gyy[1:-1, :] = (g[2:, :] - 2.0 * g[1:-1, :] + g[:-2, :]) / h2
        gxy[1:-1, 1:-1] = (g[2:, 2:] - g[2:, :-2] - g[:-2, 2:] + g[:-2, :-2]) / (4.0 * h2)
        # boundary rows/columns are never read: hessian_at requires a one-cell margin
        return gxx, gxy, gyy


@dataclass(frozen=True, eq=False)
class VectorField:
    grid: GridSpec
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", _checked(self.u, self.grid, "u"))
        object.__setattr__(self, "v", _checked(self.v, self.grid, "v"))

    @classmethod
    def from_function(cls, grid: GridSpec, fn) -> VectorField:
        X, Y = grid.coords()
        u, v = fn(X, Y)
        return cls(grid, np.broadcast_to(u, grid.shape), np.broadcast_to(v, grid.shape))

    @classmethod
    def zeros(cls, grid: GridSpec) -> VectorField:
        return cls(grid, np.zeros(grid.shape), np.zeros(grid.shape))

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)

    def __neg__(self) -> VectorField:
        return VectorField(self.grid, -self.u, -self.v)

    @cached_property
    def _jacobian_nodes(self):
        h = self.grid.spacing
        uy, ux = np.gradient(self.u, h)
        vy, vx = np.gradient(self.v, h)
        return ux, uy, vx, vy


@dataclass(frozen=True)
class Mat2:
    a11: float
    a12: float
    a21: float
    a22: float

    @classmethod
    def from_array(cls, m) -> Mat2:
        m = np.asarray(m, dtype=float)
        return cls(float(m[0, 0]), float(m[0, 1]), float(m[1, 0]), float(m[1, 1]))

    def to_array(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a21, self.a22]])

    def __matmul__(self, vec):
        x, y = vec
        return (self.a11 * x + self.a12 * y, self.a21 * x + self.a22 * y)

    def norm_inf(self) -> float:
        return max(abs(self.a11) + abs(self.a12), abs(self.a21) + abs(self.a22))


# ---------------------------------------------------------------------------
# sampling


def _bilinear(values: np.ndarray, grid: GridSpec, x, y, margin: float = 0.0) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    inside = grid.contains(x, y, margin)
    if not np.all(inside):
        bad = np.argmin(inside.ravel()) if inside.ndim else 0
        bx = x.ravel()[bad] if x.ndim else float(x)
        by = y.ravel()[bad] if y.ndim else float(y)
        raise DomainError(f"point ({bx:.6g}, {by:.6g}) outside sampling domain (margin {margin:g})")
    h = grid.spacing
    fx = np.clip(x / h, 0.0, grid.width - 1)
    fy = np.clip(y / h, 0.0, grid.height - 1)
    i0 = np.minimum(np.floor(fx).astype(int), grid.width - 2)
    j0 = np.minimum(np.floor(fy).astype(int), grid.height - 2)
    tx = fx - i0
    ty = fy - j0
    v00 = values[j0, i0]
    v10 = values[j0, i0 + 1]
    v01 = values[j0 + 1, i0]
    v11 = values[j0 + 1, i0 + 1]
    return (1 - ty) * ((1 - tx) * v00 + tx * v10) + ty * ((1 - tx) * v01 + tx * v11)


def sample_scalar(f: ScalarField, x: float, y: float) -> float:
    """Bilinear interpolation of ``f`` at a world point; raises DomainError outside."""
    return float(_bilinear(f.values, f.grid, x, y))


def sample_scalars(f: ScalarField, x, y) -> np.ndarray:
    return _bilinear(f.values, f.grid, x, y)


def sample_vector(F: VectorField, x: float, y: float) -> tuple[float, float]:
    return float(_bilinear(F.u, F.grid, x, y)), float(_bilinear(F.v, F.grid, x, y))


def sample_vectors(F: VectorField, x, y) -> tuple[np.ndarray, np.ndarray]:
    return _bilinear(F.u, F.grid, x, y), _bilinear(F.v, F.grid, x, y)


# ---------------------------------------------------------------------------
# differentiation


def gradient(f: ScalarField) -> VectorField:
    """Central differences inside, first-order one-sided on the boundary."""
    gx, gy = f._derivatives
    return VectorField(f.grid, gx, gy)


def jacobians_at(F: VectorField, x, y) -> np.ndarray:
    """Jacobians at many points, shape ``(n, 2, 2)`` with rows ``(du/dx, du/dy)``, ``(dv/dx, dv/dy)``."""
    ux, uy, vx, vy = F._jacobian_nodes
    m = F.grid.spacing
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    out = np.empty(x.shape + (2, 2))
    out[..., 0, 0] = _bilinear(ux, F.grid, x, y, margin=m)
    out[..., 0, 1] = _bilinear(uy, F.grid, x, y, margin=m)
    out[..., 1, 0] = _bilinear(vx, F.grid, x, y, margin=m)
    out[..., 1, 1] = _bilinear(vy, F.grid, x, y, margin=m)
    return out


def jacobian_at(F: VectorField, x: float, y: float) -> Mat2:
    return Mat2.from_array(jacobians_at(F, x, y)[0])


def hessians_at(g: ScalarField, x, y) -> np.ndarray:
    gxx, gxy, gyy = g._second_derivatives
    m = g.grid.spacing
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    out = np.empty(x.shape + (2, 2))
    out[..., 0, 0] = _bilinear(gxx, g.grid, x, y, margin=m)
    out[..., 0, 1] = out[..., 1, 0] = _bilinear(gxy, g.grid, x, y, margin=m)
    out[..., 1, 1] = _bilinear(gyy, g.grid, x, y, margin=m)
    return out


def hessian_at(g: ScalarField, x: float, y: float) -> Mat2:
    """Second central differences, bilinearly interpolated; symmetric by construction."""
    return Mat2.from_array(hessians_at(g, x, y)[0])


# ---------------------------------------------------------------------------
# smoothing and extension


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    t = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(f: ScalarField, sigma: float) -> ScalarField:
    """Separable Gaussian blur in grid units, kernel cut at ``ceil(3 sigma)`` and renormalised."""
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return f
    k = gaussian_kernel(sigma)
    out = ndimage.correlate1d(f.values, k, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, k, axis=1, mode="reflect")
    return ScalarField(f.grid, out)


def _neumann_laplacian(w: np.ndarray, h: float) -> np.ndarray:
    p = np.pad(w, 1, mode="edge")
    return (p[1:-1, 2:] + p[1:-1, :-2] + p[2:, 1:-1] + p[:-2, 1:-1] - 4.0 * w) / (h * h)


def gvf_stable_dt(grid: GridSpec, mu: float) -> float:
    return grid.spacing ** 2 / (4.0 * mu)


def gvf_extend(
    F: VectorField,
    mu: float = 0.2,
    iterations: int = 2000,
    dt: float | None = None,
    tol: float = 1e-4,
) -> VectorField:
    """Gradient vector flow extension of ``F``.

    Explicit iteration of ``w <- w + dt * (mu * lap(w) - (w - F) * |F|^2)`` for
    each component with reflecting boundaries. Stops after ``iterations`` sweeps
    or once the largest componentwise update falls below ``tol``. The default
    ``dt`` is 0.9 of the smaller of the diffusion limit ``h^2 / (4 mu)`` and the
    data-term limit ``1 / max|F|^2``.
    """
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    limit = gvf_stable_dt(F.grid, mu)
    h = F.grid.spacing
    b = F.u ** 2 + F.v ** 2
    bmax = float(b.max(initial=0.0))
    if dt is None:
        dt = 0.9 * limit if bmax == 0 else 0.9 * min(limit, 1.0 / bmax)
    if dt <= 0 or dt > limit * (1 + 1e-12):
        raise ValueError(f"dt={dt} outside explicit diffusion limit (0, {limit}]")
    if dt * bmax > 1.0:
        raise ValueError("dt * max|F|^2 exceeds 1; data term would be unstable")
    u = F.u.copy()
    v = F.v.copy()
    for _ in range(iterations):
        du = dt * (mu * _neumann_laplacian(u, h) - (u - F.u) * b)
        dv = dt * (mu * _neumann_laplacian(v, h) - (v - F.v) * b)
        u += du
        v += dv
        if max(np.abs(du).max(), np.abs(dv).max()) < tol:
            break
    return VectorField(F.grid, u, v)


# ---------------------------------------------------------------------------
# synthetic fields


def make_ring_field(grid: GridSpec, cx: float, cy: float, r0: float, sigma: float) -> ScalarField:
    """``exp(-(r - r0)^2 / (2 sigma^2))``; its ridge is the circle of radius ``r0``."""
    if r0 <= 0 or sigma <= 0:
        raise ValueError("r0 and sigma must be positive")
    X, Y = grid.coords()
    r = np.hypot(X - cx, Y - cy)
    return ScalarField(grid, np.exp(-((r - r0) ** 2) / (2.0 * sigma ** 2)))


def make_disk_pattern(
    grid: GridSpec,
    disks,
    blur_sigma: float = 2.0,
    ramp: tuple[float, float] = (0.0, 0.0),
) -> ScalarField:
    """Sum of disk indicators plus a linear intensity ramp, then Gaussian blur."""
    if blur_sigma < 0:
        raise ValueError("blur_sigma must be non-negative")
    X, Y = grid.coords()
    img = np.zeros(grid.shape)
    for cx, cy, radius in disks:
        if not grid.contains(cx, cy):
            raise ValueError(f"disk centre ({cx}, {cy}) outside the grid")
        img += (np.hypot(X - cx, Y - cy) <= radius).astype(float)
    gx, gy = ramp
    img += gx * X + gy * Y
    return gaussian_smooth(ScalarField(grid, img), blur_sigma)


def make_blob_pattern(grid: GridSpec, blur_sigma: float = 3.0, texture: float = 0.004) -> ScalarField:
    """Stand-in for a blurry real photograph: a non-convex blob whose interior
    carries an intensity gradient, on a background with its own gradient."""
    X, Y = grid.coords()
    w, hgt = grid.x_max, grid.y_max
    cx, cy = 0.5 * w, 0.5 * hgt
    s = min(w, hgt)
    lobes = [
        (cx - 0.12 * s, cy, 0.22 * s),
        (cx + 0.14 * s, cy + 0.06 * s, 0.18 * s),
    ]
    mask = np.zeros(grid.shape, dtype=bool)
    for lx, ly, lr in lobes:
        mask |= np.hypot(X - lx, Y - ly) <= lr
    # bite out a notch to make the shape non-convex
    mask &= ~(np.hypot(X - cx, Y - (cy - 0.3 * s)) <= 0.14 * s)
    img = mask * (0.8 + texture * (X - cx)) + (1 - mask) * (0.1 + 0.5 * texture * (Y - cy))
    return gaussian_smooth(ScalarField(grid, img), blur_sigma)


def edge_indicator(image: ScalarField) -> ScalarField:
    """Edge strength ``|grad I|``."""
    return ScalarField(image.grid, gradient(image).magnitude())
