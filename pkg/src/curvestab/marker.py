"""Explicit polygon curves that keep track of individual material points.

The level-set engine cannot say where a given point ``p`` of the curve went;
this one can, as long as no resampling happens in between (each resample
bumps ``epoch`` so callers can tell).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .field import VectorField, sample_vectors
from .levelset import CurvePolyline, polygon_normals, segment_lengths

log = logging.getLogger(__name__)


class SelfIntersection(Exception):
    """Terminal state: the marker polygon crossed itself."""


@dataclass(frozen=True, eq=False)
class MarkerCurve:
    vertices: np.ndarray
    epoch: int = 0

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float).reshape(-1, 2)
        if len(v) < 3:
            raise ValueError("marker curve needs at least 3 vertices")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    def __len__(self) -> int:
        return len(self.vertices)

    @property
    def normals(self) -> np.ndarray:
        return polygon_normals(self.vertices, closed=True)

    @property
    def tangents(self) -> np.ndarray:
        n = self.normals
        return np.stack([-n[:, 1], n[:, 0]], axis=1)

    def spacings(self) -> np.ndarray:
        return segment_lengths(self.vertices, closed=True)

    def length(self) -> float:
        return float(self.spacings().sum())

    def signed_area(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return float(0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def to_polyline(self) -> CurvePolyline:
        return CurvePolyline(self.vertices, True, self.normals)

    @classmethod
    def from_polyline(cls, c: CurvePolyline) -> MarkerCurve:
        if not c.closed:
            raise ValueError("marker curves must be closed")
        return oriented(cls(c.vertices))

    @classmethod
    def circle(cls, cx: float, cy: float, radius: float, n: int | None = None, spacing: float = 1.0,
               phase: float = 0.0) -> MarkerCurve:
        if n is None:
            n = max(8, int(round(2 * np.pi * radius / spacing)))
        t = phase + 2 * np.pi * np.arange(n) / n
        return cls(np.stack([cx + radius * np.cos(t), cy + radius * np.sin(t)], axis=1))

    @classmethod
    def ellipse(cls, cx: float, cy: float, a: float, b: float, n: int | None = None,
                spacing: float = 1.0, angle: float = 0.0) -> MarkerCurve:
        t = np.linspace(0, 2 * np.pi, 4096, endpoint=False)
        ca, sa = np.cos(angle), np.sin(angle)
        x, y = a * np.cos(t), b * np.sin(t)
        dense = cls(np.stack([cx + ca * x - sa * y, cy + sa * x + ca * y], axis=1))
        if n is None:
            n = max(8, int(round(dense.length() / spacing)))
        return resample(dense, dense.length() / n, log_reset=False)


def oriented(c: MarkerCurve) -> MarkerCurve:
    """Counter-clockwise copy of ``c`` (interior on the left)."""
    if c.signed_area() < 0:
        return MarkerCurve(c.vertices[::-1], c.epoch)
    return c


def marker_step(c: MarkerCurve, alpha, beta, dt: float) -> MarkerCurve:
    """Move every vertex by ``dt * (alpha T + beta N)``."""
    n = len(c)
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (n,))
    beta = np.broadcast_to(np.asarray(beta, dtype=float), (n,))
    vmax = float(np.max(np.maximum(np.abs(alpha), np.abs(beta)), initial=0.0))
    hmin = float(c.spacings().min())
    if dt * vmax > 0.5 * hmin * (1 + 1e-12):
        raise ValueError(f"step too large: dt*max(|alpha|,|beta|)={dt * vmax:.4g} > 0.5*min spacing={0.5 * hmin:.4g}")
    N = c.normals
    T = np.stack([-N[:, 1], N[:, 0]], axis=1)
    v = c.vertices + dt * (alpha[:, None] * T + beta[:, None] * N)
    return MarkerCurve(v, c.epoch)


def resample(c: MarkerCurve, target_spacing: float, log_reset: bool = True) -> MarkerCurve:
    """Arc-length uniform resampling starting at vertex 0; resets vertex identity."""
    if len(c) < 3:
        raise ValueError("cannot resample fewer than 3 vertices")
    v = c.vertices
    seg = c.spacings()
    total = seg.sum()
    n = max(3, int(round(total / target_spacing)))
    s = np.concatenate([[0.0], np.cumsum(seg)])
    closed_v = np.vstack([v, v[:1]])
    targets = total * np.arange(n) / n
    k = np.clip(np.searchsorted(s, targets, side="right") - 1, 0, len(seg) - 1)
    frac = np.where(seg[k] > 0, (targets - s[k]) / np.where(seg[k] > 0, seg[k], 1.0), 0.0)
    out = closed_v[k] + frac[:, None] * (closed_v[k + 1] - closed_v[k])
    # exact hits on existing vertices stay bit-identical
    hit = np.isclose(targets, s[k], rtol=0, atol=1e-12 * max(total, 1.0))
    out[hit] = v[k[hit]]
    if log_reset:
        log.info("resampled marker curve to %d vertices; vertex identity reset (epoch %d)", n, c.epoch + 1)
    return MarkerCurve(out, c.epoch + 1)


def _point_segment_dist(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Min distance from each point to the set of segments ``a[k]-b[k]``."""
    out = np.empty(len(points))
    ab = b - a
    L2 = np.einsum("ij,ij->i", ab, ab)
    L2 = np.where(L2 > 0, L2, 1.0)
    chunk = max(1, 2_000_000 // max(len(a), 1))
    for s in range(0, len(points), chunk):
        p = points[s:s + chunk, None, :]
        t = np.clip(np.einsum("pkj,kj->pk", p - a[None], ab) / L2, 0.0, 1.0)
        d = p - (a[None] + t[..., None] * ab[None])
        out[s:s + chunk] = np.sqrt(np.min(np.einsum("pkj,pkj->pk", d, d), axis=1))
    return out


def _segments(curves):
    a, b = [], []
    for c in curves:
        v = c.vertices
        if getattr(c, "closed", True):
            a.append(v)
            b.append(np.roll(v, -1, axis=0))
        else:
            a.append(v[:-1])
            b.append(v[1:])
    return np.vstack(a), np.vstack(b)


def distance_to_curves(points, curves) -> np.ndarray:
    """Distance from each point to the nearest segment of any of ``curves``."""
    if not isinstance(curves, (list, tuple)):
        curves = [curves]
    a, b = _segments(curves)
    return _point_segment_dist(np.asarray(points, dtype=float).reshape(-1, 2), a, b)


def hausdorff(a, b) -> float:
    """Symmetric Hausdorff distance between curves (or lists of curves).

    Each vertex set is measured against the other's segments, so two samplings
    of the same image give ~0 even when their vertices differ.
    """
    la = a if isinstance(a, (list, tuple)) else [a]
    lb = b if isinstance(b, (list, tuple)) else [b]
    if not la or not lb:
        return 0.0 if not la and not lb else float("inf")
    pa = np.vstack([c.vertices for c in la])
    pb = np.vstack([c.vertices for c in lb])
    return float(max(distance_to_curves(pa, lb).max(), distance_to_curves(pb, la).max()))


def self_intersects(c: MarkerCurve) -> bool:
    """Whether any two non-adjacent edges cross."""
    p = c.vertices
    q = np.roll(p, -1, axis=0)
    n = len(p)
    if n < 4:
        return False

    def orient(a, b, c_):
        return (b[..., 0] - a[..., 0]) * (c_[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c_[..., 0] - a[..., 0])

    i, j = np.triu_indices(n, k=2)
    keep = ~((i == 0) & (j == n - 1))
    i, j = i[keep], j[keep]
    d1 = orient(p[i], q[i], p[j])
    d2 = orient(p[i], q[i], q[j])
    d3 = orient(p[j], q[j], p[i])
    d4 = orient(p[j], q[j], q[i])
    return bool(np.any((d1 * d2 < 0) & (d3 * d4 < 0)))


def normal_speed(F: VectorField, c: MarkerCurve) -> np.ndarray:
    """``<F, N>`` at each vertex."""
    u, v = sample_vectors(F, c.vertices[:, 0], c.vertices[:, 1])
    N = c.normals
    return u * N[:, 0] + v * N[:, 1]


def evolve_markers(
    c: MarkerCurve,
    velocity: Callable[[MarkerCurve], tuple],
    dt: float,
    steps: int,
    h: float = 1.0,
    allow_resample: bool = True,
    check_every: int = 10,
    callback=None,
) -> MarkerCurve:
    """Repeated ``marker_step`` with spacing control and self-intersection checks.

    ``velocity(c)`` returns per-vertex ``(alpha, beta)``. With resampling enabled
    the spacing is kept in ``[0.5 h, 2 h]``.
    """
    for k in range(steps):
        alpha, beta = velocity(c)
        c = marker_step(c, alpha, beta, dt)
        if allow_resample:
            sp = c.spacings()
            if sp.min() < 0.5 * h or sp.max() > 2.0 * h:
                c = resample(c, h)
        if check_every and (k + 1) % check_every == 0 and self_intersects(c):
            raise SelfIntersection(f"marker curve self-intersects after {k + 1} steps")
        if callback is not None:
            callback(k + 1, c)
    return c


def check_tangential_invariance(
    F: VectorField,
    c0: MarkerCurve,
    alpha_fn,
    steps: int,
    dt: float,
    h: float | None = None,
) -> float:
    """Hausdorff distance between runs with and without a tangential term.

    Both runs use ``beta = <F, N>``; the second adds ``alpha_fn`` (a callable
    of the curve, or a constant) along the tangent.
    """
    h = F.grid.spacing if h is None else h
    c0 = oriented(c0)

    def alpha_of(c):
        a = alpha_fn(c) if callable(alpha_fn) else alpha_fn
        return np.broadcast_to(np.asarray(a, dtype=float), (len(c),))

    plain = evolve_markers(c0, lambda c: (0.0, normal_speed(F, c)), dt, steps, h)
    slid = evolve_markers(c0, lambda c: (alpha_of(c), normal_speed(F, c)), dt, steps, h)
    return hausdorff(plain, slid)


def check_normal_displacement(
    F: VectorField,
    c0: MarkerCurve,
    tau: float,
    dt: float | None = None,
) -> np.ndarray:
    """Tangential leakage ``|<D, T>| / |D|`` of each vertex's displacement ``D``
    over time ``tau`` under pure normal flow, with ``T`` taken at the start.

    Vertices whose displacement is zero report 0.
    """
    if dt is None:
        dt = tau / 10.0
    n_steps = int(round(tau / dt))
    if n_steps < 1 or not np.isclose(n_steps * dt, tau, rtol=1e-9):
        raise ValueError("tau must be a positive multiple of dt")
    c0 = oriented(c0)
    T0 = c0.tangents
    c = evolve_markers(c0, lambda c: (0.0, normal_speed(F, c)), dt, n_steps, allow_resample=False,
                       check_every=0)
    D = c.vertices - c0.vertices
    norm = np.linalg.norm(D, axis=1)
    tang = np.abs(np.einsum("ij,ij->i", D, T0))
    return np.where(norm > 0, tang / np.where(norm > 0, norm, 1.0), 0.0)
