"""Stability of converged curves: the normal-normal Jacobian criterion and the
experiments that check it numerically.

``J_nn = N^T J[F] N`` on a converged curve decides the fate of a small normal
perturbation: under ``C_t = <F, N> N`` it evolves like ``eta_t = J_nn eta``,
so a forward Euler step of size ``dt`` multiplies it by ``1 + dt J_nn``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .field import (
    ScalarField,
    VectorField,
    gradient,
    hessians_at,
    jacobians_at,
    sample_vectors,
)
from .flows import FlowKind, FlowSpec, Rotation, effective_field, prepare_field
from .levelset import LevelSetFunction
from .marker import MarkerCurve, distance_to_curves, evolve_markers, marker_step, resample


class Classification(str, enum.Enum):
    STABLE = "Stable"
    MARGINALLY_STABLE = "MarginallyStable"
    UNSTABLE = "Unstable"


def classify(mean: float, min_: float, max_: float, marginal_tol: float) -> Classification:
    """Unstable if mean > tol; Stable if mean < -tol and max < tol; otherwise marginal."""
    if mean > marginal_tol:
        return Classification.UNSTABLE
    if mean < -marginal_tol and max_ < marginal_tol:
        return Classification.STABLE
    return Classification.MARGINALLY_STABLE


@dataclass
class StabilityReport:
    samples: np.ndarray
    points: np.ndarray
    mean: float
    min: float
    max: float
    classification: Classification
    marginal_tol: float
    clipped: int = 0

    def header(self) -> dict:
        return {
            "mean": self.mean,
            "min": self.min,
            "max": self.max,
            "classification": self.classification.value,
            "marginal_tol": self.marginal_tol,
            "clipped": self.clipped,
            "n": int(len(self.samples)),
        }


@dataclass
class PerturbationTrace:
    eta_norms: np.ndarray
    fitted_factor: float
    predicted_factor: float
    jnn_mean: float
    eta_marker: np.ndarray = field(default_factory=lambda: np.zeros(0))
    marker_factor: float = float("nan")


@dataclass
class BoundReport:
    lipschitz_L: float
    mu: float
    times: np.ndarray
    divergence: np.ndarray
    bound: np.ndarray
    initial_separation: float = 0.0
    completed_steps: int = 0

    def holds(self) -> bool:
        return bool(np.all(self.divergence <= self.bound))


def gronwall_bound(t, d0: float, L: float, mu: float):
    """``d0 e^{L t} + (mu / L)(e^{L t} - 1)``."""
    t = np.asarray(t, dtype=float)
    return d0 * np.exp(L * t) + (mu / L) * np.expm1(L * t)


def _interior(points: np.ndarray, grid, margin: float) -> np.ndarray:
    return grid.contains(points[:, 0], points[:, 1], margin)


def _vertices_normals(c):
    # MarkerCurve and CurvePolyline both carry vertices and unit normals
    return c.vertices, c.normals


def _report(samples, pts, J, marginal_tol, tol_fraction, clipped) -> StabilityReport:
    if marginal_tol is None:
        marginal_tol = tol_fraction * float(np.abs(J).sum(axis=2).max())
    mean, lo, hi = float(samples.mean()), float(samples.min()), float(samples.max())
    return StabilityReport(samples, pts, mean, lo, hi, classify(mean, lo, hi, marginal_tol),
                           marginal_tol, clipped)


def jnn_along_curve(F: VectorField, c, marginal_tol: float | None = None,
                    tol_fraction: float = 0.05) -> StabilityReport:
    """``N^T J[F] N`` at every vertex, plus the three-way classification.

    Vertices within one cell of the border are dropped and counted in
    ``clipped``. The default ``marginal_tol`` is ``tol_fraction`` times the
    largest infinity-norm of ``J[F]`` seen on the curve.
    """
    pts, N = _vertices_normals(c)
    if len(pts) == 0:
        raise ValueError("empty curve")
    ok = _interior(pts, F.grid, F.grid.spacing)
    if not ok.any():
        raise ValueError("no curve vertex lies inside the differentiable region")
    pts, N = pts[ok], N[ok]
    J = jacobians_at(F, pts[:, 0], pts[:, 1])
    samples = np.einsum("pi,pij,pj->p", N, J, N)
    return _report(samples, pts, J, marginal_tol, tol_fraction, int((~ok).sum()))


@dataclass
class MarginalityResult:
    value: float
    report: StabilityReport | None
    skipped: int

    def __float__(self):
        return self.value


def _along_curve_derivative(pts: np.ndarray, values: np.ndarray, closed: bool) -> np.ndarray:
    """Central difference of ``values`` with respect to arc length along a polyline."""
    if closed:
        ds = np.linalg.norm(np.roll(pts, -1, 0) - np.roll(pts, 1, 0), axis=1)
        dv = np.roll(values, -1) - np.roll(values, 1)
        return dv / np.where(ds > 0, ds, np.inf)
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
    return np.gradient(values, s) if len(pts) > 1 else np.zeros(len(pts))


def ef_marginality_check(g: ScalarField, c_star, normalize: bool = True,
                         rotation: Rotation = Rotation.CCW, floor: float = 1e-6,
                         marginal_tol: float | None = None) -> MarginalityResult:
    """Mean ``|J_nn|`` of the rotated (optionally normalised) gradient field of ``g``.

    On a curve whose normal is parallel to ``grad g`` the normal-normal
    Jacobian entry of ``R W`` equals the arc-length derivative of ``+-|W|``
    (``W`` the prepared gradient field, one sign for the whole curve); that is what
    is measured here. The field is normalised after sampling so the direction
    flip across a ridge does not leak into the magnitude. Vertices where
    ``|grad g|`` is below ``floor * max |grad g|`` (or outside the
    differentiable region) are skipped, together with their neighbours'
    differences.
    """
    G = gradient(g)
    gmax = float(G.magnitude().max(initial=0.0))
    pts, N = _vertices_normals(c_star)
    closed = getattr(c_star, "closed", True)
    n = len(pts)
    if gmax == 0.0 or n < 3:
        return MarginalityResult(float("nan"), None, n)
    inside = _interior(pts, g.grid, g.grid.spacing)
    u = np.zeros(n)
    v = np.zeros(n)
    u[inside], v[inside] = sample_vectors(G, pts[inside, 0], pts[inside, 1])
    mag = np.hypot(u, v)
    valid = inside & (mag > floor * gmax)
    w = np.where(valid, 1.0, 0.0) if normalize else mag
    # one orientation for the whole curve: N = +-grad g / |grad g|
    sign = 1.0 if np.sum((u * N[:, 0] + v * N[:, 1])[valid]) >= 0 else -1.0
    J = _along_curve_derivative(pts, sign * w, closed)
    ok = valid.copy()
    if closed:
        ok &= np.roll(valid, 1) & np.roll(valid, -1)
    else:
        ok[1:] &= valid[:-1]
        ok[:-1] &= valid[1:]
    skipped = int((~ok).sum())
    if not ok.any():
        return MarginalityResult(float("nan"), None, skipped)
    samples = J[ok]
    jac = rotation.matrix() @ hessians_at(g, pts[ok, 0], pts[ok, 1])
    if normalize:
        jac = jac / mag[ok, None, None]
    report = _report(samples, pts[ok], jac, marginal_tol, 0.05, 0)
    return MarginalityResult(float(np.abs(samples).mean()), report, skipped)


def hessian_sign_check(g: ScalarField, c_star) -> float:
    """Largest ``<hess(g) N, N>`` over the curve; non-positive at a gradient-flow limit."""
    pts, N = _vertices_normals(c_star)
    ok = _interior(pts, g.grid, g.grid.spacing)
    if not ok.any():
        raise ValueError("no curve vertex lies inside the differentiable region")
    H = hessians_at(g, pts[ok, 0], pts[ok, 1])
    return float(np.einsum("pi,pij,pj->p", N[ok], H, N[ok]).max())


def distance_hessian_residual(ls: LevelSetFunction, band: float = 3.0) -> np.ndarray:
    """``|hess(phi) grad(phi)|`` at the nodes within ``band`` cells of the zero set.

    Zero for an exact signed distance function, since differentiating
    ``|grad phi|^2 = 1`` gives ``hess(phi) grad(phi) = 0``. Nodes closer than
    two cells to the border are left out.
    """
    grid = ls.grid
    h = grid.spacing
    X, Y = grid.coords()
    near = (np.abs(ls.values) <= band * h) & grid.contains(X, Y, 2 * h)
    x, y = X[near], Y[near]
    H = hessians_at(ls.phi, x, y)
    G = np.stack(sample_vectors(gradient(ls.phi), x, y), axis=-1)
    return np.linalg.norm(np.einsum("pij,pj->pi", H, G), axis=1)


def _fit_factor(eta: np.ndarray) -> float:
    """Least-squares geometric ratio of a positive sequence."""
    pos = eta > 0
    k = np.arange(len(eta))[pos]
    if len(k) < 2:
        return float("nan")
    slope = np.polyfit(k, np.log(eta[pos]), 1)[0]
    return float(math.exp(slope))


def flow_speed_at(spec: FlowSpec, P: VectorField, c: MarkerCurve) -> np.ndarray:
    """Normal speed of ``spec`` at marker vertices, ``P`` being the prepared field."""
    u, v = sample_vectors(P, c.vertices[:, 0], c.vertices[:, 1])
    N = c.normals
    gd = u * N[:, 0] + v * N[:, 1]
    if spec.kind is FlowKind.GRADIENT_DESCENT:
        return gd
    ru, rv = spec.rotation_sign.apply(u, v)
    rot = ru * N[:, 0] + rv * N[:, 1]
    if spec.kind is FlowKind.EQUILIBRIUM or spec.epsilon == 0:
        return rot
    return rot + spec.epsilon * gd


def perturbation_decay(
    F: VectorField,
    c_star,
    amplitude: float,
    dt: float,
    iters: int,
    spec: FlowSpec = FlowSpec(),
) -> PerturbationTrace:
    """Push ``c_star`` out by ``amplitude`` along its normals and watch the gap.

    The perturbed curve evolves as a marker polygon under ``spec`` (no
    resampling, so vertex identity is kept). ``eta_norms[k]`` is the mean
    distance from the k-th curve's vertices to ``c_star``; ``eta_marker`` the
    mean per-vertex displacement from the matching reference vertex.
    """
    h = F.grid.spacing
    if amplitude > 2 * h:
        raise ValueError("amplitude must not exceed two grid cells")
    ref = c_star if isinstance(c_star, MarkerCurve) else MarkerCurve.from_polyline(c_star)
    ref = resample(ref, h, log_reset=False)
    start = MarkerCurve(ref.vertices + amplitude * ref.normals)
    if not np.all(_interior(start.vertices, F.grid, h)):
        raise ValueError("perturbed curve leaves the domain")
    P = prepare_field(spec, F)
    report = jnn_along_curve(effective_field(spec, F), ref)

    eta = [float(distance_to_curves(start.vertices, ref).mean())]
    eta_m = [float(np.linalg.norm(start.vertices - ref.vertices, axis=1).mean())]

    def record(_, c):
        if not np.all(_interior(c.vertices, F.grid, h)):
            raise ValueError("perturbed curve leaves the domain")
        eta.append(float(distance_to_curves(c.vertices, ref).mean()))
        eta_m.append(float(np.linalg.norm(c.vertices - ref.vertices, axis=1).mean()))

    evolve_markers(start, lambda c: (0.0, flow_speed_at(spec, P, c)), dt, iters,
                   allow_resample=False, check_every=0, callback=record)
    eta = np.array(eta)
    eta_m = np.array(eta_m)
    # time runs backwards towards the limit in the linearisation: d_tau = -dt
    predicted = abs(1.0 - (-dt) * report.mean)
    return PerturbationTrace(eta, _fit_factor(eta), predicted, report.mean, eta_m, _fit_factor(eta_m))


def divergence_bound_check(
    F: VectorField,
    G_eps: float,
    c0: MarkerCurve,
    dt: float,
    steps: int,
    rotation: Rotation = Rotation.CCW,
    L_floor: float = 1e-6,
) -> BoundReport:
    """Run the equilibrium flow ``C`` and its ``eps``-modified twin ``S`` side by side.

    ``S`` receives the extra velocity ``G = eps <F, N> N``. ``mu`` is the
    largest ``|G|`` seen; ``L`` the largest ratio
    ``|v_C(C(p)) - v_C(S(p))| / |C(p) - S(p)|`` over vertices and steps, where
    ``v_C`` is the unmodified velocity evaluated with each curve's own normals.
    Vertex pairing is kept by never resampling; a step-size violation ends the
    run early and the report covers the completed steps.
    """
    spec_c = FlowSpec(FlowKind.EQUILIBRIUM, rotation)
    C = S = c0
    times = [0.0]
    div = [0.0]
    L = 0.0
    mu = 0.0
    done = 0
    for k in range(steps):
        NC, NS = C.normals, S.normals
        vc = flow_speed_at(spec_c, F, C)[:, None] * NC
        vs_base = flow_speed_at(spec_c, F, S)[:, None] * NS
        bs = flow_speed_at(FlowSpec(), F, S)
        G = G_eps * bs[:, None] * NS
        sep = np.linalg.norm(C.vertices - S.vertices, axis=1)
        moved = sep > 1e-14
        if moved.any():
            q = np.linalg.norm(vc - vs_base, axis=1)[moved] / sep[moved]
            L = max(L, float(q.max()))
        mu = max(mu, float(np.linalg.norm(G, axis=1).max()))
        try:
            C, S = (
                marker_step(C, 0.0, np.einsum("ij,ij->i", vc, NC), dt),
                marker_step(S, 0.0, np.einsum("ij,ij->i", vs_base + G, NS), dt),
            )
        except ValueError:
            break
        done = k + 1
        times.append(done * dt)
        div.append(float(np.linalg.norm(C.vertices - S.vertices, axis=1).max()))
    L = max(L, L_floor)
    t = np.array(times)
    d0 = 0.0  # both curves start from the same vertices
    return BoundReport(L, mu, t, np.array(div), gronwall_bound(t, d0, L, mu), d0, done)
