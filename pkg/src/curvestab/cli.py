"""Command-line harness: pattern generation, alternation runs and post-hoc analysis.

Exit codes: 0 success (a vanished curve is a result, not a failure),
2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import fields
from importlib import metadata
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, ExperimentConfig
from .field import (
    GridSpec,
    ScalarField,
    VectorField,
    edge_indicator,
    gaussian_smooth,
    gradient,
    gvf_extend,
    make_blob_pattern,
    make_disk_pattern,
    sample_scalars,
)
from .flows import FlowKind, FlowSpec, Rotation, run_geosnakes
from .levelset import extract_curves, init_multi_circle
from .marker import MarkerCurve
from .stability import divergence_bound_check, jnn_along_curve, perturbation_decay

log = logging.getLogger("curvestab")

EXIT_CONFIG = 2
EXIT_IO = 3


# ---------------------------------------------------------------------------
# experiment pieces


def build_image(cfg: ExperimentConfig) -> ScalarField:
    if cfg.input == "disks":
        grid = GridSpec(cfg.width, cfg.height, cfg.spacing)
        return make_disk_pattern(grid, [tuple(d) for d in cfg.disks], cfg.blur_sigma, tuple(cfg.ramp))
    if cfg.input == "blob":
        return make_blob_pattern(GridSpec(cfg.width, cfg.height, cfg.spacing), cfg.blur_sigma)
    path = Path(cfg.input)
    if not path.exists():
        raise ConfigError(f"input {cfg.input!r} is neither 'disks', 'blob' nor an existing PGM file")
    return gaussian_smooth(io.read_pgm(path, cfg.spacing), cfg.blur_sigma)


def build_field(cfg: ExperimentConfig, g: ScalarField) -> VectorField:
    F = gradient(g)
    if cfg.gvf:
        F = gvf_extend(F, mu=cfg.gvf_mu, iterations=cfg.gvf_iterations, tol=cfg.gvf_tol)
    return F


def initial_circles(cfg: ExperimentConfig, grid: GridSpec) -> list[tuple[float, float, float]]:
    if cfg.init_circles:
        circles = [tuple(map(float, c)) for c in cfg.init_circles]
    elif cfg.input == "disks" and cfg.disks:
        circles = [(float(d[0]), float(d[1]), cfg.init_radius) for d in cfg.disks]
    else:
        circles = [(0.5 * grid.x_max, 0.5 * grid.y_max, cfg.init_radius)]
    if cfg.init_jitter > 0:
        rng = np.random.default_rng(cfg.seed)
        shift = rng.normal(0.0, cfg.init_jitter, size=(len(circles), 2))
        circles = [(x + dx, y + dy, r) for (x, y, r), (dx, dy) in zip(circles, shift)]
    return circles


def mean_edge_strength(g: ScalarField, curves) -> float | None:
    """Mean ``|grad g|`` over the vertices of ``curves`` (None when there are none)."""
    if not curves:
        return None
    pts = np.vstack([c.vertices for c in curves])
    G = gradient(g)
    return float(np.mean(sample_scalars(ScalarField(g.grid, G.magnitude()), pts[:, 0], pts[:, 1])))


def _versions() -> dict:
    out = {}
    for pkg in ("artifact", "numpy", "scipy", "numba"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def _write_resolved(cfg: ExperimentConfig, out: Path):
    cfg.save(out / "config.json")
    (out / "versions.json").write_text(json.dumps(_versions(), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_gen_pattern(cfg: ExperimentConfig) -> dict:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    image = build_image(cfg)
    g = edge_indicator(image)
    F = build_field(cfg, g)
    io.write_pgm(out / "image.pgm", image)
    io.write_scalar_csv(out / "g.csv", g)
    io.write_pgm(out / "g.pgm", g)
    io.write_vector_csv(out / "field.csv", F)
    _write_resolved(cfg, out)
    return {"image": str(out / "image.pgm"), "g": str(out / "g.csv"), "field": str(out / "field.csv")}


def cmd_run(cfg: ExperimentConfig) -> dict:
    t0 = time.perf_counter()
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    image = build_image(cfg)
    g = edge_indicator(image)
    F = build_field(cfg, g)
    grid = image.grid
    ls0 = init_multi_circle(grid, initial_circles(cfg, grid))

    snapshots = {"init": extract_curves(ls0)}

    def on_phase(label, ls, rec):
        if label == "GD1":
            snapshots["post_gd"] = extract_curves(ls)
        elif label == "EF1":
            snapshots["post_ef"] = extract_curves(ls)

    on_step = None
    if cfg.frames:
        frames = out / "frames"
        frames.mkdir(exist_ok=True)

        def on_step(k, ls, curves):
            io.write_ppm(frames / f"step_{k:05d}.ppm", io.overlay_image(image, curves))

    ls, records = run_geosnakes(F, ls0, cfg.flow_spec(), cfg.alternation(), on_step=on_step, on_phase=on_phase)
    final = extract_curves(ls) if records.outcome != "vanished" else []
    snapshots["final"] = final
    snapshots.setdefault("post_gd", final)
    snapshots.setdefault("post_ef", final)

    for name in ("init", "post_gd", "post_ef", "final"):
        io.write_curves_csv(out / f"curves_{name}.csv", snapshots[name])
        io.write_ppm(out / f"overlay_{name}.ppm", io.overlay_image(image, snapshots[name]))
    io.write_records_csv(out / "records.csv", records)
    _write_resolved(cfg, out)
    summary = {
        "outcome": records.outcome,
        "components": len(final),
        "mean_grad_g": mean_edge_strength(g, final),
        "phases": [r.phase for r in records],
        "wall_clock_s": round(time.perf_counter() - t0, 3),
    }
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True) + "\n")
    return summary


def _load_curve(path, index: int):
    curves = io.read_curves_csv(path)
    if not curves:
        raise ConfigError(f"{path}: no curves")
    if not -len(curves) <= index < len(curves):
        raise ConfigError(f"{path}: curve index {index} out of range ({len(curves)} curves)")
    return curves[index]


def cmd_analyze(curve_path, field_path, out_path=None, index: int = 0, marginal_tol=None):
    F = io.read_vector_csv(field_path)
    c = _load_curve(curve_path, index)
    report = jnn_along_curve(F, c, marginal_tol=marginal_tol)
    if out_path is not None:
        header = report.header() | {"curve": str(curve_path), "field": str(field_path), "index": index}
        rows = ((float(x), float(y), float(s)) for (x, y), s in zip(report.points, report.samples))
        io.write_table_csv(out_path, header, ["x", "y", "jnn"], rows)
    return report


def cmd_perturb(curve_path, field_path, out_path=None, index=0, amplitude=1.0, dt=0.2, iters=50,
                spec: FlowSpec = FlowSpec()):
    F = io.read_vector_csv(field_path)
    c = _load_curve(curve_path, index)
    trace = perturbation_decay(F, c, amplitude, dt, iters, spec)
    if out_path is not None:
        header = {"amplitude": amplitude, "dt": dt, "iters": iters, "kind": spec.kind.value,
                  "fitted_factor": trace.fitted_factor, "predicted_factor": trace.predicted_factor,
                  "jnn_mean": trace.jnn_mean}
        rows = ((k, float(e), float(m)) for k, (e, m) in enumerate(zip(trace.eta_norms, trace.eta_marker)))
        io.write_table_csv(out_path, header, ["iter", "eta", "eta_marker"], rows)
    return trace


def cmd_bound(curve_path, field_path, out_path=None, index=0, epsilon=0.1, dt=0.05, steps=200,
              rotation: Rotation = Rotation.CCW):
    F = io.read_vector_csv(field_path)
    c = MarkerCurve.from_polyline(_load_curve(curve_path, index))
    rep = divergence_bound_check(F, epsilon, c, dt, steps, rotation)
    if out_path is not None:
        header = {"epsilon": epsilon, "dt": dt, "steps": steps, "L": rep.lipschitz_L, "mu": rep.mu,
                  "completed_steps": rep.completed_steps, "holds": rep.holds()}
        rows = ((float(t), float(d), float(b)) for t, d, b in zip(rep.times, rep.divergence, rep.bound))
        io.write_table_csv(out_path, header, ["t", "divergence", "bound"], rows)
    return rep


# ---------------------------------------------------------------------------
# argument parsing


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _parse_json_list(text: str) -> list:
    try:
        value = json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"expected a JSON list, got {text!r}") from exc
    if not isinstance(value, list):
        raise argparse.ArgumentTypeError(f"expected a JSON list, got {text!r}")
    return value


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file; flags below override it")
    defaults = ExperimentConfig()
    for f in fields(ExperimentConfig):
        default = getattr(defaults, f.name)
        flag = "--" + f.name.replace("_", "-")
        if isinstance(default, bool):
            p.add_argument(flag, type=_parse_bool, default=None, metavar="BOOL")
        elif isinstance(default, list):
            p.add_argument(flag, type=_parse_json_list, default=None, metavar="JSON")
        else:
            p.add_argument(flag, type=type(default), default=None)


def _config_from_args(args) -> ExperimentConfig:
    data = ExperimentConfig.load(args.config).to_dict() if args.config else {}
    for f in fields(ExperimentConfig):
        value = getattr(args, f.name)
        if value is not None:
            data[f.name] = value
    return ExperimentConfig.from_dict(data)


def _add_curve_args(p: argparse.ArgumentParser):
    p.add_argument("--curve", required=True, help="curve CSV (curve,index,x,y,nx,ny,tx,ty)")
    p.add_argument("--field", required=True, help="vector field CSV (x,y,u,v)")
    p.add_argument("--index", type=int, default=0, help="which curve of the file")
    p.add_argument("--out", help="report CSV path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="curvestab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_config_flags(sub.add_parser("gen-pattern", help="write the test image, edge map and vector field"))
    _add_config_flags(sub.add_parser("run", help="run the alternating flow and write snapshots"))

    p = sub.add_parser("analyze", help="classify a stored curve in a stored field")
    _add_curve_args(p)
    p.add_argument("--marginal-tol", type=float)

    p = sub.add_parser("perturb", help="measure decay of a normal perturbation")
    _add_curve_args(p)
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--dt", type=float, default=0.2)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--kind", default=FlowKind.GRADIENT_DESCENT.value, choices=[k.value for k in FlowKind])
    p.add_argument("--epsilon", type=float, default=0.0)

    p = sub.add_parser("bound", help="compare equilibrium and modified runs against the growth bound")
    _add_curve_args(p)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--dt", type=float, default=0.05)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--rotation-sign", default="CCW", choices=[r.value for r in Rotation])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in ("gen-pattern", "run"):
            cfg = _config_from_args(args)
            if args.command == "gen-pattern":
                print(json.dumps(cmd_gen_pattern(cfg), sort_keys=True))
            else:
                print(json.dumps(cmd_run(cfg), sort_keys=True))
        elif args.command == "analyze":
            report = cmd_analyze(args.curve, args.field, args.out, args.index, args.marginal_tol)
            print(report.classification.value)
        elif args.command == "perturb":
            spec = FlowSpec(FlowKind(args.kind), epsilon=args.epsilon)
            trace = cmd_perturb(args.curve, args.field, args.out, args.index, args.amplitude, args.dt,
                                args.iters, spec)
            print(json.dumps({"fitted_factor": trace.fitted_factor,
                              "predicted_factor": trace.predicted_factor}))
        elif args.command == "bound":
            rep = cmd_bound(args.curve, args.field, args.out, args.index, args.epsilon, args.dt, args.steps,
                            Rotation(args.rotation_sign))
            print(json.dumps({"holds": rep.holds(), "L": rep.lipschitz_L, "mu": rep.mu,
                              "completed_steps": rep.completed_steps}))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # bad numerical inputs (curve outside the field, oversize step, ...)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
