"""Normal-speed laws and the alternating gradient-descent / equilibrium scheme.

All three laws move the curve along its outward normal ``N`` with speed

* gradient descent:      ``<F, N>``
* equilibrium:           ``<R F, N>``
* modified equilibrium:  ``<R F, N> + eps <F, N>``

where ``R`` is a fixed quarter turn.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .field import ScalarField, VectorField, sample_scalars
from .levelset import (
    CurveVanished,
    LevelSetFunction,
    evolve_step,
    extract_curves,
    reinitialize,
    total_length,
    enclosed_area,
)
from .marker import hausdorff

log = logging.getLogger(__name__)


class FlowKind(str, enum.Enum):
    GRADIENT_DESCENT = "GradientDescent"
    EQUILIBRIUM = "Equilibrium"
    MODIFIED_EQUILIBRIUM = "ModifiedEquilibrium"


class Rotation(str, enum.Enum):
    CCW = "CCW"
    CW = "CW"

    def matrix(self) -> np.ndarray:
        s = 1.0 if self is Rotation.CCW else -1.0
        return np.array([[0.0, -s], [s, 0.0]])

    def apply(self, u, v):
        if self is Rotation.CCW:
            return -v, u
        return v, -u


@dataclass(frozen=True)
class FlowSpec:
    kind: FlowKind = FlowKind.GRADIENT_DESCENT
    rotation_sign: Rotation = Rotation.CCW
    epsilon: float = 0.0
    normalize_field: bool = False
    norm_floor: float = 1e-6  # relative to max |F|

    def __post_init__(self):
        object.__setattr__(self, "kind", FlowKind(self.kind))
        object.__setattr__(self, "rotation_sign", Rotation(self.rotation_sign))
        if self.epsilon < 0 or not math.isfinite(self.epsilon):
            raise ValueError(f"epsilon must be finite and >= 0, got {self.epsilon}")

    def gradient_phase(self) -> FlowSpec:
        """The gradient-descent partner of this spec (same field preparation)."""
        return replace(self, kind=FlowKind.GRADIENT_DESCENT, epsilon=0.0)


@dataclass(frozen=True)
class AlternationConfig:
    length_window: int = 10
    length_rel_tol: float = 1e-3
    max_outer_cycles: int = 20
    max_steps_per_phase: int = 2000
    speed_tol: float = 1e-2  # relative to max |F| of the prepared field
    reinit_interval: int = 2
    cfl: float = 0.45

    def __post_init__(self):
        for name in ("length_window", "max_outer_cycles", "max_steps_per_phase", "reinit_interval"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.length_rel_tol < 1:
            raise ValueError("length_rel_tol must lie in (0, 1)")
        if self.speed_tol <= 0:
            raise ValueError("speed_tol must be positive")
        if not 0 < self.cfl <= 0.5:
            raise ValueError("cfl must lie in (0, 0.5]")


class PhaseRecords(list):
    """Per-phase records of an alternation run plus the run-level outcome."""

    outcome: str = "budget"


@dataclass
class ConvergenceRecord:
    phase: str
    steps: list[int] = field(default_factory=list)
    length: list[float] = field(default_factory=list)
    area: list[float] = field(default_factory=list)
    max_speed: list[float] = field(default_factory=list)
    components: list[int] = field(default_factory=list)
    outcome: str = "budget"
    flat_nodes: int = 0

    def rows(self):
        for k in range(len(self.steps)):
            yield (self.steps[k], self.length[k], self.area[k], self.max_speed[k], self.phase, self.outcome)


# ---------------------------------------------------------------------------
# speeds


def prepare_field(spec: FlowSpec, F: VectorField) -> VectorField:
    """Apply the optional normalisation ``F / |F|`` (zero below the floor)."""
    if not spec.normalize_field:
        return F
    mag = F.magnitude()
    floor = spec.norm_floor * float(mag.max(initial=0.0))
    ok = (mag > floor) & (mag > 0)
    safe = np.where(ok, mag, 1.0)
    return VectorField(F.grid, np.where(ok, F.u / safe, 0.0), np.where(ok, F.v / safe, 0.0))


def effective_field(spec: FlowSpec, F: VectorField) -> VectorField:
    """The field ``W`` with speed ``<W, N>`` for this law (used for Jacobian analysis)."""
    P = prepare_field(spec, F)
    if spec.kind is FlowKind.GRADIENT_DESCENT:
        return P
    ru, rv = spec.rotation_sign.apply(P.u, P.v)
    if spec.kind is FlowKind.EQUILIBRIUM or spec.epsilon == 0:
        return VectorField(F.grid, ru, rv)
    return VectorField(F.grid, ru + spec.epsilon * P.u, rv + spec.epsilon * P.v)


def level_set_normals(ls: LevelSetFunction, floor: float = 1e-8):
    """``grad(phi) / |grad(phi)|`` at nodes; zero where the gradient is below ``floor``."""
    gy, gx = np.gradient(ls.values, ls.grid.spacing)
    mag = np.hypot(gx, gy)
    flat = mag < floor
    safe = np.where(flat, 1.0, mag)
    return np.where(flat, 0.0, gx / safe), np.where(flat, 0.0, gy / safe), flat


def speeds_from_normals(spec: FlowSpec, P: VectorField, nx, ny) -> np.ndarray:
    gd = P.u * nx + P.v * ny
    if spec.kind is FlowKind.GRADIENT_DESCENT:
        return gd
    ru, rv = spec.rotation_sign.apply(P.u, P.v)
    rot = ru * nx + rv * ny
    if spec.kind is FlowKind.EQUILIBRIUM or spec.epsilon == 0:
        return rot
    return rot + spec.epsilon * gd


def speed_field(spec: FlowSpec, F: VectorField, ls: LevelSetFunction) -> np.ndarray:
    """Normal speed at every grid node for the given law."""
    nx, ny, flat = level_set_normals(ls)
    if flat.any():
        log.debug("speed_field: %d nodes with vanishing grad(phi) get zero speed", int(flat.sum()))
    return speeds_from_normals(spec, prepare_field(spec, F), nx, ny)


# ---------------------------------------------------------------------------
# drivers


def _measure(ls: LevelSetFunction, beta: np.ndarray):
    curves = extract_curves(ls, with_normals=False)
    if not curves:
        return None
    pts = np.vstack([c.vertices for c in curves])
    b = sample_scalars(ScalarField(ls.grid, beta), pts[:, 0], pts[:, 1])
    area = sum(enclosed_area(c) for c in curves if c.closed)
    return curves, total_length(curves), area, float(np.abs(b).max())


def run_flow(
    spec: FlowSpec,
    F: VectorField,
    ls0: LevelSetFunction,
    config: AlternationConfig = AlternationConfig(),
    stop_rule: str = "speed",
    phase: str | None = None,
    step_offset: int = 0,
    on_step=None,
) -> tuple[LevelSetFunction, ConvergenceRecord]:
    """Evolve ``ls0`` under one law until it settles, vanishes or runs out of steps.

    ``stop_rule="speed"``: max |beta| on the zero set stays below the speed
    tolerance for ``length_window`` consecutive steps. ``stop_rule="length"``:
    in addition, the mean curve length over the last ``length_window`` steps
    differs from the mean over the window before by less than
    ``length_rel_tol`` (relative), and has done so for ``length_window``
    consecutive steps. Averaging and persistence keep step-to-step chatter
    from masking or faking a stall.
    """
    if stop_rule not in ("speed", "length"):
        raise ValueError(f"unknown stop rule {stop_rule!r}")
    P = prepare_field(spec, F)
    tol = config.speed_tol * float(P.magnitude().max(initial=0.0))
    record = ConvergenceRecord(phase or spec.kind.value)
    h = ls0.grid.spacing
    ls = ls0
    calm = still = 0
    for k in range(config.max_steps_per_phase + 1):
        nx, ny, flat = level_set_normals(ls)
        record.flat_nodes += int(flat.sum())
        beta = speeds_from_normals(spec, P, nx, ny)
        m = _measure(ls, beta)
        if m is None:
            record.outcome = "vanished"
            break
        curves, length, area, vmax = m
        record.steps.append(step_offset + k)
        record.length.append(length)
        record.area.append(area)
        record.max_speed.append(vmax)
        record.components.append(len(curves))
        if on_step is not None:
            on_step(step_offset + k, ls, curves)
        calm = calm + 1 if vmax <= tol else 0
        if calm >= config.length_window:
            record.outcome = "converged"
            break
        w = config.length_window
        if stop_rule == "length" and k >= 2 * w - 1:
            now = float(np.mean(record.length[-w:]))
            before = float(np.mean(record.length[-2 * w:-w]))
            still = still + 1 if abs(now - before) < config.length_rel_tol * before else 0
            if still >= w:
                record.outcome = "converged"
                break
        if k == config.max_steps_per_phase:
            break
        bmax = float(np.abs(beta).max(initial=0.0))
        if bmax == 0.0:
            ls = LevelSetFunction(ls.phi, ls.steps_since_reinit + 1)
        else:
            ls = evolve_step(ls, beta, config.cfl * h / bmax, cfl=config.cfl)
        if ls.steps_since_reinit >= config.reinit_interval:
            try:
                ls = reinitialize(ls)
            except CurveVanished:
                record.outcome = "vanished"
                break
    return ls, record


def run_geosnakes(
    F: VectorField,
    ls0: LevelSetFunction,
    spec_ef: FlowSpec,
    config: AlternationConfig = AlternationConfig(),
    on_step=None,
    on_phase=None,
) -> tuple[LevelSetFunction, PhaseRecords]:
    """Alternate gradient descent and an equilibrium-type phase.

    Each phase ends when total curve length stalls. The outer loop stops once
    a whole cycle moves the zero set by less than one grid cell (Hausdorff),
    when the curve vanishes, or after ``max_outer_cycles`` cycles.
    """
    if spec_ef.kind is FlowKind.GRADIENT_DESCENT:
        raise ValueError("spec_ef must be Equilibrium or ModifiedEquilibrium")
    spec_gd = spec_ef.gradient_phase()
    h = ls0.grid.spacing
    records = PhaseRecords()
    ls = ls0
    step = 0
    for cycle in range(1, config.max_outer_cycles + 1):
        start = extract_curves(ls, with_normals=False)
        if not start:
            records.outcome = "vanished"
            break
        vanished = False
        for spec, label in ((spec_gd, f"GD{cycle}"), (spec_ef, f"EF{cycle}")):
            ls, rec = run_flow(spec, F, ls, config, stop_rule="length", phase=label,
                               step_offset=step, on_step=on_step)
            records.append(rec)
            step = (rec.steps[-1] + 1) if rec.steps else step
            if on_phase is not None:
                on_phase(label, ls, rec)
            if rec.outcome == "vanished":
                vanished = True
                break
        if vanished:
            records.outcome = "vanished"
            break
        end = extract_curves(ls, with_normals=False)
        moved = hausdorff(start, end)
        log.info("cycle %d: zero set moved %.4g", cycle, moved)
        if moved < h:
            records.outcome = "converged"
            break
    if records.outcome != "vanished":
        # settle with a last gradient-descent phase so the result is a GD fixed point
        ls, rec = run_flow(spec_gd, F, ls, config, stop_rule="length", phase="GDfinal",
                           step_offset=step, on_step=on_step)
        records.append(rec)
        if on_phase is not None:
            on_phase("GDfinal", ls, rec)
        if rec.outcome == "vanished":
            records.outcome = "vanished"
    return ls, records
