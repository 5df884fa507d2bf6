"""Implicit curves as the zero set of a signed distance function.

Sign convention: ``phi < 0`` inside, ``phi > 0`` outside, outward normal
``N = grad(phi) / |grad(phi)|``. Extracted polylines run counter-clockwise
(interior on the left) and carry ``T = R N`` with ``R`` the +90 degree
rotation, so ``T`` is the direction of travel.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field
from functools import cached_property

import numba
import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve
from scipy.spatial import cKDTree

from .field import GridSpec, ScalarField, sample_vectors, gradient

log = logging.getLogger(__name__)

_FAR = 1e30


class CurveVanished(Exception):
    """Terminal state: the zero set is empty. Not a numerical failure."""


@dataclass(frozen=True, eq=False)
class LevelSetFunction:
    phi: ScalarField
    steps_since_reinit: int = 0

    @property
    def grid(self) -> GridSpec:
        return self.phi.grid

    @property
    def values(self) -> np.ndarray:
        return self.phi.values

    def has_zero_set(self) -> bool:
        v = self.phi.values
        return bool(v.min() < 0 <= v.max())


def _rot90(n: np.ndarray) -> np.ndarray:
    return np.stack([-n[:, 1], n[:, 0]], axis=1)


@dataclass(frozen=True, eq=False)
class CurvePolyline:
    """Ordered polyline; ``normals`` default to those implied by the vertex order."""

    vertices: np.ndarray
    closed: bool = True
    normals: np.ndarray | None = dc_field(default=None)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "vertices", v)
        if self.normals is None:
            object.__setattr__(self, "normals", polygon_normals(v, self.closed))
        else:
            n = np.asarray(self.normals, dtype=float).reshape(-1, 2)
            norm = np.linalg.norm(n, axis=1, keepdims=True)
            object.__setattr__(self, "normals", n / np.where(norm > 0, norm, 1.0))

    def __len__(self) -> int:
        return len(self.vertices)

    @property
    def tangents(self) -> np.ndarray:
        return _rot90(self.normals)

    @cached_property
    def weights(self) -> np.ndarray:
        """Arc length attributed to each vertex (half of each adjacent segment)."""
        seg = segment_lengths(self.vertices, self.closed)
        w = np.zeros(len(self.vertices))
        w[: len(seg)] += 0.5 * seg
        if self.closed:
            w += 0.5 * np.roll(seg, 1)
        else:
            w[1:] += 0.5 * seg
        return w


def segment_lengths(vertices: np.ndarray, closed: bool = True) -> np.ndarray:
    d = np.roll(vertices, -1, axis=0) - vertices if closed else np.diff(vertices, axis=0)
    return np.hypot(d[:, 0], d[:, 1])


def polygon_normals(vertices: np.ndarray, closed: bool = True) -> np.ndarray:
    """Outward normals of a counter-clockwise polygon from neighbour central differences."""
    v = np.asarray(vertices, dtype=float)
    if closed:
        t = np.roll(v, -1, axis=0) - np.roll(v, 1, axis=0)
    else:
        t = np.gradient(v, axis=0) if len(v) > 1 else np.zeros_like(v)
    n = np.stack([t[:, 1], -t[:, 0]], axis=1)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    return n / np.where(norm > 0, norm, 1.0)


def curve_length(c: CurvePolyline) -> float:
    if len(c.vertices) < 3:
        raise ValueError("curve needs at least 3 vertices")
    return float(segment_lengths(c.vertices, c.closed).sum())


def enclosed_area(c: CurvePolyline) -> float:
    """Shoelace area; positive for counter-clockwise curves."""
    if len(c.vertices) < 3:
        raise ValueError("curve needs at least 3 vertices")
    x, y = c.vertices[:, 0], c.vertices[:, 1]
    return float(0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


# ---------------------------------------------------------------------------
# construction


def init_circle(grid: GridSpec, cx: float, cy: float, radius: float) -> LevelSetFunction:
    X, Y = grid.coords()
    return LevelSetFunction(ScalarField(grid, np.hypot(X - cx, Y - cy) - radius))


def init_multi_circle(grid: GridSpec, circles) -> LevelSetFunction:
    """Union of discs: pointwise minimum of the individual circle distances."""
    circles = list(circles)
    if not circles:
        raise ValueError("need at least one circle")
    X, Y = grid.coords()
    phi = np.full(grid.shape, np.inf)
    for cx, cy, r in circles:
        phi = np.minimum(phi, np.hypot(X - cx, Y - cy) - r)
    return LevelSetFunction(ScalarField(grid, phi))


# ---------------------------------------------------------------------------
# evolution


def _one_sided(phi: np.ndarray, h: float):
    p = np.empty((phi.shape[0] + 2, phi.shape[1] + 2))
    p[1:-1, 1:-1] = phi
    # linear extrapolation keeps a signed distance function's slope at the border
    p[1:-1, 0] = 2 * phi[:, 0] - phi[:, 1]
    p[1:-1, -1] = 2 * phi[:, -1] - phi[:, -2]
    p[0, :] = 2 * p[1, :] - p[2, :]
    p[-1, :] = 2 * p[-2, :] - p[-3, :]
    c = p[1:-1, 1:-1]
    dxm = (c - p[1:-1, :-2]) / h
    dxp = (p[1:-1, 2:] - c) / h
    dym = (c - p[:-2, 1:-1]) / h
    dyp = (p[2:, 1:-1] - c) / h
    return dxm, dxp, dym, dyp


def godunov_norms(phi: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Upwind ``|grad phi|`` for outward (beta > 0) and inward (beta < 0) motion."""
    dxm, dxp, dym, dyp = _one_sided(phi, h)
    grow = np.sqrt(
        np.maximum(dxm, 0) ** 2 + np.minimum(dxp, 0) ** 2
        + np.maximum(dym, 0) ** 2 + np.minimum(dyp, 0) ** 2
    )
    shrink = np.sqrt(
        np.minimum(dxm, 0) ** 2 + np.maximum(dxp, 0) ** 2
        + np.minimum(dym, 0) ** 2 + np.maximum(dyp, 0) ** 2
    )
    return grow, shrink


def evolve_step(ls: LevelSetFunction, speed, dt: float, cfl: float = 0.5) -> LevelSetFunction:
    """One explicit upwind step of ``phi_t + beta |grad phi| = 0`` (motion ``beta N``)."""
    beta = np.asarray(speed, dtype=float)
    if beta.shape != ls.grid.shape:
        raise ValueError(f"speed shape {beta.shape} != grid {ls.grid.shape}")
    if not np.all(np.isfinite(beta)):
        raise ValueError("speed contains non-finite values")
    if cfl > 0.5:
        raise ValueError("CFL number must not exceed 0.5")
    h = ls.grid.spacing
    bmax = float(np.abs(beta).max(initial=0.0))
    if dt < 0 or dt * bmax > cfl * h * (1 + 1e-12):
        raise ValueError(f"dt={dt} violates CFL: need dt <= {cfl} * h / max|beta| = {cfl * h / max(bmax, 1e-300):.6g}")
    grow, shrink = godunov_norms(ls.values, h)
    phi = ls.values - dt * (np.maximum(beta, 0.0) * grow + np.minimum(beta, 0.0) * shrink)
    return LevelSetFunction(ScalarField(ls.grid, phi), ls.steps_since_reinit + 1)


@numba.njit(cache=True)
def _fast_sweep(d, fixed, h, max_iter):
    ny, nx = d.shape
    for _ in range(max_iter):
        change = 0.0
        for sweep in range(4):
            if sweep == 0:
                j0, j1, dj, i0, i1, di = 0, ny, 1, 0, nx, 1
            elif sweep == 1:
                j0, j1, dj, i0, i1, di = 0, ny, 1, nx - 1, -1, -1
            elif sweep == 2:
                j0, j1, dj, i0, i1, di = ny - 1, -1, -1, nx - 1, -1, -1
            else:
                j0, j1, dj, i0, i1, di = ny - 1, -1, -1, 0, nx, 1
            for j in range(j0, j1, dj):
                for i in range(i0, i1, di):
                    if fixed[j, i]:
                        continue
                    a = _FAR
                    if i > 0:
                        a = d[j, i - 1]
                    if i < nx - 1 and d[j, i + 1] < a:
                        a = d[j, i + 1]
                    b = _FAR
                    if j > 0:
                        b = d[j - 1, i]
                    if j < ny - 1 and d[j + 1, i] < b:
                        b = d[j + 1, i]
                    if a >= _FAR and b >= _FAR:
                        continue
                    if abs(a - b) >= h:
                        cand = min(a, b) + h
                    else:
                        cand = 0.5 * (a + b + np.sqrt(2.0 * h * h - (a - b) ** 2))
                    if cand < d[j, i]:
                        change = max(change, d[j, i] - cand)
                        d[j, i] = cand
        if change < 1e-12 * h:
            break
    return d


def _interface_distances(ls: LevelSetFunction):
    """Exact distance from nodes next to a sign change to the interpolated zero set."""
    phi = ls.values
    inside = phi < 0
    near = np.zeros(phi.shape, dtype=bool)
    cx = inside[:, :-1] != inside[:, 1:]
    cy = inside[:-1, :] != inside[1:, :]
    near[:, :-1] |= cx
    near[:, 1:] |= cx
    near[:-1, :] |= cy
    near[1:, :] |= cy
    a, b = [], []
    for c in extract_curves(ls, with_normals=False):
        v = c.vertices
        a.append(v if c.closed else v[:-1])
        b.append(np.roll(v, -1, axis=0) if c.closed else v[1:])
    d = np.full(phi.shape, _FAR)
    if not a:
        return d, np.zeros(phi.shape, dtype=bool)
    a = np.vstack(a)
    b = np.vstack(b)
    h = ls.grid.spacing
    js, is_ = np.nonzero(near)
    pts = np.stack([is_ * h, js * h], axis=1)
    tree = cKDTree(0.5 * (a + b))
    k = min(8, len(a))
    _, idx = tree.query(pts, k=k)
    idx = idx.reshape(len(pts), k)
    sa, sb = a[idx], b[idx]
    ab = sb - sa
    L2 = np.einsum("pkj,pkj->pk", ab, ab)
    t = np.clip(np.einsum("pkj,pkj->pk", pts[:, None, :] - sa, ab) / np.where(L2 > 0, L2, 1.0), 0.0, 1.0)
    diff = pts[:, None, :] - (sa + t[..., None] * ab)
    dist = np.sqrt(np.einsum("pkj,pkj->pk", diff, diff).min(axis=1))
    d[js, is_] = _keep_crossings(phi, near, js, is_, dist)
    return d, near


def _keep_crossings(phi, near, js, is_, dist, weight: float = 1e4):
    """Adjust pinned distances so every edge crossing stays where it was.

    The chord polyline sits slightly inside a curved zero set, so raw
    distances would drift the interface a little on every reinitialisation.
    Solves ``min |d - dist|^2 + weight * sum_edges ((1-t) d_a - t d_b)^2``.
    """
    n = len(js)
    index = np.full(phi.shape, -1)
    index[js, is_] = np.arange(n)
    inside = phi < 0
    rows, cols, vals = [], [], []
    r = 0
    for sl_a, sl_b in (((slice(None), slice(None, -1)), (slice(None), slice(1, None))),
                       ((slice(None, -1), slice(None)), (slice(1, None), slice(None)))):
        pa, pb = phi[sl_a], phi[sl_b]
        cross = inside[sl_a] != inside[sl_b]
        ia, ib = index[sl_a][cross], index[sl_b][cross]
        va, vb = pa[cross], pb[cross]
        tt = va / (va - vb)
        m = len(ia)
        e = np.arange(r, r + m)
        rows += [e, e]
        cols += [ia, ib]
        vals += [(1 - tt), -tt]
        r += m
    if r == 0:
        return dist
    C = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(r, n))
    A = sparse.identity(n, format="csr") + weight * (C.T @ C)
    out = spsolve(A.tocsc(), dist)
    return np.maximum(out, 0.0)


def reinitialize(ls: LevelSetFunction, max_iter: int = 8) -> LevelSetFunction:
    """Replace phi by the signed distance to its own zero set.

    Nodes adjacent to a sign change are pinned at their distance to the
    linearly interpolated interface; the rest is filled by Gauss-Seidel fast
    sweeping of the Eikonal equation. Raises CurveVanished if there is no zero
    crossing.
    """
    phi = ls.values
    if not ls.has_zero_set():
        raise CurveVanished("level set has no zero crossing")
    h = ls.grid.spacing
    d, fixed = _interface_distances(ls)
    d = _fast_sweep(d.copy(), fixed, h, max_iter)
    out = np.where(phi < 0, -d, d)
    return LevelSetFunction(ScalarField(ls.grid, out), 0)


# ---------------------------------------------------------------------------
# zero-set extraction


def extract_curves(ls: LevelSetFunction, with_normals: bool = True) -> list[CurvePolyline]:
    """Marching squares on the zero level; one polyline per contour component.

    Cells with four crossings are resolved by the sign of the cell-centre
    average. Contours touching the domain border come out with ``closed=False``.
    """
    phi = ls.values
    grid = ls.grid
    h = grid.spacing
    ny, nx = phi.shape
    inside = phi < 0
    if not inside.any() or inside.all():
        return []

    # crossing points on horizontal edges (i,j)-(i+1,j) and vertical edges (i,j)-(i,j+1)
    hx = inside[:, :-1] != inside[:, 1:]
    vx = inside[:-1, :] != inside[1:, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        th = phi[:, :-1] / (phi[:, :-1] - phi[:, 1:])
        tv = phi[:-1, :] / (phi[:-1, :] - phi[1:, :])
    nh = ny * (nx - 1)

    def h_id(i, j):
        return j * (nx - 1) + i

    def v_id(i, j):
        return nh + j * nx + i

    # cells with mixed corner signs
    c00 = inside[:-1, :-1]
    c10 = inside[:-1, 1:]
    c11 = inside[1:, 1:]
    c01 = inside[1:, :-1]
    code = c00.astype(np.int8) + 2 * c10 + 4 * c11 + 8 * c01
    js, is_ = np.nonzero((code != 0) & (code != 15))

    nxt = {}
    for j, i in zip(js.tolist(), is_.tolist()):
        # cell boundary traversed counter-clockwise: bottom, right, top, left
        corners = (inside[j, i], inside[j, i + 1], inside[j + 1, i + 1], inside[j + 1, i])
        edges = (h_id(i, j), v_id(i + 1, j), h_id(i, j + 1), v_id(i, j))
        # crossings in traversal order, flagged when leaving an inside corner
        order = []
        for k in range(4):
            a, b = corners[k], corners[(k + 1) % 4]
            if a != b:
                order.append((edges[k], a))
        if len(order) == 2:
            (e0, a0), (e1, _) = order
            if a0:
                nxt[e0] = e1
            else:
                nxt[e1] = e0
        else:
            centre_inside = (phi[j, i] + phi[j, i + 1] + phi[j + 1, i + 1] + phi[j + 1, i]) < 0
            for k, (e, a) in enumerate(order):
                if not a:
                    continue
                # start crossing: pair with next (centre inside) or previous (centre outside)
                partner = order[(k + 1) % 4] if centre_inside else order[(k - 1) % 4]
                nxt[e] = partner[0]

    def point(e):
        if e < nh:
            j, i = divmod(e, nx - 1)
            t = th[j, i]
            return ((i + t) * h, j * h)
        e -= nh
        j, i = divmod(e, nx)
        t = tv[j, i]
        return (i * h, (j + t) * h)

    targets = set(nxt.values())
    heads = [e for e in nxt if e not in targets]
    visited = set()
    chains = []
    for e in sorted(heads):
        chain = [e]
        visited.add(e)
        while chain[-1] in nxt:
            n = nxt[chain[-1]]
            chain.append(n)
            visited.add(n)
        chains.append((chain, False))
    for e in sorted(nxt):
        if e in visited:
            continue
        chain = [e]
        visited.add(e)
        n = nxt[e]
        while n != e:
            chain.append(n)
            visited.add(n)
            n = nxt[n]
        chains.append((chain, True))

    gphi = gradient(ls.phi) if with_normals else None
    curves = []
    for chain, closed in chains:
        pts = np.array([point(e) for e in chain])
        # drop repeated points produced by exact zeros at nodes
        keep = np.ones(len(pts), dtype=bool)
        keep[1:] = np.any(np.abs(np.diff(pts, axis=0)) > 1e-12 * h, axis=1)
        pts = pts[keep]
        if closed and len(pts) > 1 and np.allclose(pts[0], pts[-1], atol=1e-12 * h):
            pts = pts[:-1]
        if len(pts) < 3:
            continue
        normals = None
        if gphi is not None:
            gx, gy = sample_vectors(gphi, pts[:, 0], pts[:, 1])
            normals = np.stack([gx, gy], axis=1)
            bad = np.hypot(gx, gy) < 1e-12
            if bad.any():
                normals[bad] = polygon_normals(pts, closed)[bad]
        curves.append(CurvePolyline(pts, closed, normals))
    return curves


def total_length(curves) -> float:
    return float(sum(segment_lengths(c.vertices, c.closed).sum() for c in curves))
