"""Experiment configuration: one JSON document per run.

Every field has a default; the resolved config (all fields, defaults
included) is written next to the results so a run directory describes
itself.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .flows import AlternationConfig, FlowKind, FlowSpec, Rotation

DEFAULT_DISKS = [[32.0, 32.0, 15.0], [96.0, 40.0, 15.0], [64.0, 96.0, 15.0]]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    # input: "disks" (synthetic pattern), "blob" (real-photo stand-in) or a PGM path
    input: str = "disks"
    width: int = 128
    height: int = 128
    spacing: float = 1.0
    disks: list = field(default_factory=lambda: [list(d) for d in DEFAULT_DISKS])
    ramp: list = field(default_factory=lambda: [0.002, 0.001])
    blur_sigma: float = 2.0
    # GVF extension of grad g
    gvf: bool = True
    gvf_mu: float = 0.2
    gvf_iterations: int = 2000
    gvf_tol: float = 1e-4
    # flow law
    kind: str = FlowKind.MODIFIED_EQUILIBRIUM.value
    epsilon: float = 0.1
    rotation_sign: str = Rotation.CCW.value
    normalize_field: bool = True
    norm_floor: float = 1e-6
    # alternation / numerics
    length_window: int = 10
    length_rel_tol: float = 1e-3
    max_outer_cycles: int = 20
    max_steps_per_phase: int = 2000
    speed_tol: float = 1e-2
    reinit_interval: int = 2
    cfl: float = 0.45
    # initial curves: [cx, cy, r]; empty means one circle per disk
    init_circles: list = field(default_factory=list)
    init_radius: float = 20.0
    init_jitter: float = 0.0
    seed: int = 0
    output: str = "run"
    frames: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.width >= 3 and self.height >= 3, "width and height must be at least 3")
        need(self.spacing > 0, "spacing must be positive")
        need(self.blur_sigma >= 0, "blur_sigma must be >= 0")
        need(self.gvf_mu > 0, "gvf_mu must be positive")
        need(self.gvf_iterations >= 0, "gvf_iterations must be >= 0")
        need(self.init_radius > 0, "init_radius must be positive")
        need(self.init_jitter >= 0, "init_jitter must be >= 0")
        need(len(self.ramp) == 2, "ramp must have two components")
        for d in self.disks:
            need(len(d) == 3 and d[2] > 0, f"bad disk {d!r}; expected [cx, cy, r>0]")
        for c in self.init_circles:
            need(len(c) == 3 and c[2] > 0, f"bad init circle {c!r}; expected [cx, cy, r>0]")
        try:
            self.flow_spec()
            self.alternation()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def flow_spec(self) -> FlowSpec:
        return FlowSpec(FlowKind(self.kind), Rotation(self.rotation_sign), self.epsilon,
                        self.normalize_field, self.norm_floor)

    def alternation(self) -> AlternationConfig:
        return AlternationConfig(self.length_window, self.length_rel_tol, self.max_outer_cycles,
                                 self.max_steps_per_phase, self.speed_tol, self.reinit_interval, self.cfl)

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def save(self, path):
        Path(path).write_text(self.dumps())
