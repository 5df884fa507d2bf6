import math

import numpy as np
import pytest

from curvestab.field import GridSpec, ScalarField, gradient, sample_scalars
from curvestab.levelset import (
    CurvePolyline,
    CurveVanished,
    LevelSetFunction,
    curve_length,
    enclosed_area,
    evolve_step,
    extract_curves,
    init_circle,
    init_multi_circle,
    reinitialize,
)
from curvestab.marker import hausdorff


@pytest.fixture(scope="module")
def grid():
    return GridSpec(96, 96, 1.0)


def mean_radius(curves, cx, cy):
    v = np.vstack([c.vertices for c in curves])
    return float(np.hypot(v[:, 0] - cx, v[:, 1] - cy).mean())


def test_init_circle_values(grid):
    ls = init_circle(grid, 48, 40, 20)
    assert ls.values[40, 48] == -20.0
    assert ls.values[40, 68] == pytest.approx(0.0, abs=1e-12)
    assert ls.steps_since_reinit == 0


def test_init_circle_unit_gradient_away_from_center(grid):
    ls = init_circle(grid, 48.3, 47.6, 20)
    G = gradient(ls.phi)
    X, Y = grid.coords()
    r = np.hypot(X - 48.3, Y - 47.6)
    inner = (r > 10) & grid.contains(X, Y, 1)  # error scales like (h / r)^2
    assert np.abs(G.magnitude()[inner] - 1).max() < 5e-3


def test_multi_circle_components(grid):
    single = init_multi_circle(grid, [(48, 48, 15)])
    assert np.array_equal(single.values, init_circle(grid, 48, 48, 15).values)
    two = init_multi_circle(grid, [(25, 25, 10), (70, 70, 12)])
    assert len(extract_curves(two)) == 2
    merged = init_multi_circle(grid, [(40, 48, 12), (56, 48, 12)])
    assert len(extract_curves(merged)) == 1


def test_evolve_zero_speed_keeps_phi(grid):
    ls = init_circle(grid, 48, 48, 20)
    out = evolve_step(ls, np.zeros(grid.shape), 0.4)
    assert np.array_equal(out.values, ls.values)
    assert out.steps_since_reinit == 1


@pytest.mark.parametrize("beta", [1.0, -1.0])
def test_evolve_uniform_speed_moves_radius(grid, beta):
    ls = init_circle(grid, 48, 48, 20)
    r0 = mean_radius(extract_curves(ls), 48, 48)
    out = evolve_step(ls, np.full(grid.shape, beta), 0.4)
    r1 = mean_radius(extract_curves(out), 48, 48)
    assert (r1 - r0) == pytest.approx(beta * 0.4, rel=0.1)


def test_evolve_cfl_violation(grid):
    ls = init_circle(grid, 48, 48, 20)
    with pytest.raises(ValueError):
        evolve_step(ls, np.full(grid.shape, 2.0), 0.3)


def test_shrinking_area_strictly_decreases(grid):
    ls = init_circle(grid, 48, 48, 8)
    areas = []
    with pytest.raises(CurveVanished):
        for k in range(200):
            curves = extract_curves(ls)
            if not curves:
                raise CurveVanished
            areas.append(sum(enclosed_area(c) for c in curves))
            ls = evolve_step(ls, np.full(grid.shape, -1.0), 0.45)
            if ls.steps_since_reinit >= 2:
                ls = reinitialize(ls)
    assert np.all(np.diff(areas) < 0)


def test_reinit_keeps_exact_sdf(grid):
    ls = init_circle(grid, 47.3, 49.1, 20.5)
    out = reinitialize(ls)
    band = np.abs(ls.values) <= 5
    assert np.abs(out.values - ls.values)[band].max() < 0.1
    assert out.steps_since_reinit == 0


def test_reinit_recovers_scaled_sdf(grid):
    base = init_circle(grid, 47.3, 49.1, 20.5)
    scaled = LevelSetFunction(ScalarField(grid, 3 * base.values))
    out = reinitialize(scaled)
    band = np.abs(base.values) <= 5
    assert np.abs(out.values - base.values)[band].max() < 0.1
    assert hausdorff(extract_curves(scaled), extract_curves(out)) <= 0.5


def test_reinit_unit_gradient_band(grid):
    # an anisotropically distorted phi, then reinitialized
    X, Y = grid.coords()
    phi = np.hypot((X - 48) / 1.5, Y - 45) - 14
    out = reinitialize(LevelSetFunction(ScalarField(grid, phi)))
    G = gradient(out.phi).magnitude()
    band = (np.abs(out.values) <= 5) & grid.contains(X, Y, 1)
    assert np.mean(np.abs(G[band] - 1) <= 0.1) >= 0.95


def test_reinit_without_zero_set(grid):
    with pytest.raises(CurveVanished):
        reinitialize(LevelSetFunction(ScalarField(grid, np.ones(grid.shape))))


def test_extract_circle_length_and_normals(grid):
    cx, cy = 48.2, 47.7
    curves = extract_curves(init_circle(grid, cx, cy, 20))
    assert len(curves) == 1
    c = curves[0]
    assert c.closed
    assert curve_length(c) == pytest.approx(2 * math.pi * 20, rel=0.02)
    assert enclosed_area(c) == pytest.approx(math.pi * 400, rel=0.02)
    radial = (c.vertices - [cx, cy]) / np.hypot(*(c.vertices - [cx, cy]).T)[:, None]
    angle = np.degrees(np.arccos(np.clip(np.einsum("ij,ij->i", radial, c.normals), -1, 1)))
    assert angle.max() < 2.0
    dist = np.abs(np.hypot(*(c.vertices - [cx, cy]).T) - 20)
    assert dist.max() <= 0.5


def test_extracted_frame_is_orthonormal_and_outward(grid):
    ls = init_multi_circle(grid, [(30, 30, 12), (66, 60, 18)])
    curves = extract_curves(ls)
    assert len(curves) == 2
    for c in curves:
        N, T = c.normals, c.tangents
        assert np.allclose(np.linalg.norm(N, axis=1), 1, atol=1e-9)
        assert np.allclose(np.linalg.norm(T, axis=1), 1, atol=1e-9)
        assert np.allclose(np.einsum("ij,ij->i", N, T), 0, atol=1e-9)
        d = 0.3
        out = sample_scalars(ls.phi, *(c.vertices + d * N).T)
        inn = sample_scalars(ls.phi, *(c.vertices - d * N).T)
        assert np.all(out >= inn)
        # interior on the left: positive shoelace area
        assert enclosed_area(c) > 0


def test_extract_empty(grid):
    assert extract_curves(LevelSetFunction(ScalarField(grid, np.ones(grid.shape)))) == []


def test_length_area_translation_invariant():
    t = np.linspace(0, 2 * np.pi, 50, endpoint=False)
    v = np.stack([10 * np.cos(t), 6 * np.sin(t)], axis=1)
    a, b = CurvePolyline(v, True), CurvePolyline(v + [13.5, -4.25], True)
    assert curve_length(a) == pytest.approx(curve_length(b), rel=1e-12)
    assert abs(enclosed_area(a)) == pytest.approx(abs(enclosed_area(b)), rel=1e-12)


def test_degenerate_polyline_rejected():
    with pytest.raises(ValueError):
        enclosed_area(CurvePolyline(np.array([[0.0, 0.0], [1.0, 0.0]]), True))
