import json
import subprocess
import sys

import numpy as np
import pytest

from curvestab import io
from curvestab.cli import main
from curvestab.field import GridSpec, VectorField, edge_indicator, make_disk_pattern
from curvestab.marker import MarkerCurve

SMALL = {"width": 64, "height": 64, "disks": [[32, 32, 12]], "max_outer_cycles": 1,
         "max_steps_per_phase": 60, "init_radius": 16, "init_jitter": 1.5, "seed": 7}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL))
    return path


def test_gen_pattern_outputs(tmp_path, capsys):
    out = tmp_path / "pat"
    assert main(["gen-pattern", "--output", str(out), "--gvf", "false"]) == 0
    for name in ("image.pgm", "g.csv", "g.pgm", "field.csv", "config.json", "versions.json"):
        assert (out / name).exists()
    printed = json.loads(capsys.readouterr().out)
    assert printed["field"].endswith("field.csv")
    F = io.read_vector_csv(out / "field.csv")
    assert F.grid == GridSpec(128, 128, 1.0)
    g = io.read_scalar_csv(out / "g.csv")
    expected = edge_indicator(make_disk_pattern(GridSpec(128, 128, 1.0),
                                                [(32, 32, 15), (96, 40, 15), (64, 96, 15)], 2.0, (0.002, 0.001)))
    assert np.array_equal(g.values, expected.values)
    # one edge ring per disk: g peaks on every disk boundary
    for cx, cy in [(32, 32), (96, 40), (64, 96)]:
        assert g.values[cy, cx + 15] > 10 * g.values[cy, cx]


def test_gen_pattern_without_disks_is_ramp(tmp_path):
    out = tmp_path / "ramp"
    assert main(["gen-pattern", "--output", str(out), "--disks", "[]", "--gvf", "false",
                 "--width", "32", "--height", "32"]) == 0
    img = io.read_pgm(out / "image.pgm")
    # min-max scaled ramp 0.002 x + 0.001 y: affine in the pixel indices
    # away from the border, where smoothing sees the reflected boundary
    inner = img.values[6:-6, 6:-6]
    assert np.allclose(np.diff(inner, 2, axis=1), 0, atol=2 / 255)
    assert np.allclose(np.diff(inner, 2, axis=0), 0, atol=2 / 255)
    assert np.all(np.diff(img.values[5], axis=0) >= 0)


def test_run_writes_snapshots_and_is_deterministic(tmp_path, small_config):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["run", "--config", str(small_config), "--output", str(out)]) == 0
    files = ["curves_init.csv", "curves_post_gd.csv", "curves_post_ef.csv", "curves_final.csv",
             "overlay_init.ppm", "overlay_final.ppm", "records.csv"]
    for name in files:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name
    summary = json.loads((outs[0] / "summary.json").read_text())
    assert summary["phases"][0] == "GD1"
    assert summary["outcome"] in ("converged", "budget", "vanished")
    cfg = json.loads((outs[0] / "config.json").read_text())
    assert cfg["seed"] == 7 and cfg["epsilon"] == 0.1


def test_flags_override_config(tmp_path, small_config):
    out = tmp_path / "o"
    assert main(["run", "--config", str(small_config), "--output", str(out), "--epsilon", "0.3"]) == 0
    assert json.loads((out / "config.json").read_text())["epsilon"] == 0.3


def test_run_frames(tmp_path, small_config):
    out = tmp_path / "f"
    assert main(["run", "--config", str(small_config), "--output", str(out), "--frames", "true",
                 "--max-steps-per-phase", "5"]) == 0
    assert len(list((out / "frames").glob("step_*.ppm"))) > 0


@pytest.fixture
def ring_files(tmp_path, ring_grad):
    field = tmp_path / "field.csv"
    io.write_vector_csv(field, ring_grad)
    curve = tmp_path / "curve.csv"
    io.write_curves_csv(curve, [MarkerCurve.circle(64, 64, 25).to_polyline()])
    neg = tmp_path / "neg.csv"
    io.write_vector_csv(neg, VectorField(ring_grad.grid, -ring_grad.u, -ring_grad.v))
    flat = tmp_path / "flat.csv"
    io.write_vector_csv(flat, VectorField(ring_grad.grid, np.ones(ring_grad.grid.shape),
                                          np.zeros(ring_grad.grid.shape)))
    return {"field": field, "curve": curve, "neg": neg, "flat": flat}


@pytest.mark.parametrize("which,label", [("field", "Stable"), ("neg", "Unstable"), ("flat", "MarginallyStable")])
def test_analyze_classifies(ring_files, tmp_path, capsys, which, label):
    report = tmp_path / "rep.csv"
    assert main(["analyze", "--curve", str(ring_files["curve"]), "--field", str(ring_files[which]),
                 "--out", str(report)]) == 0
    assert capsys.readouterr().out.strip() == label
    header, cols, rows = io.read_table_csv(report)
    assert header["classification"] == label
    assert cols == ["x", "y", "jnn"]
    assert len(rows) == header["n"]


def test_perturb_and_bound_commands(ring_files, tmp_path, capsys):
    assert main(["perturb", "--curve", str(ring_files["curve"]), "--field", str(ring_files["field"]),
                 "--iters", "20", "--out", str(tmp_path / "p.csv")]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["fitted_factor"] < 1
    assert main(["bound", "--curve", str(ring_files["curve"]), "--field", str(ring_files["field"]),
                 "--steps", "20", "--out", str(tmp_path / "b.csv")]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["holds"] is True
    header, cols, rows = io.read_table_csv(tmp_path / "b.csv")
    assert cols == ["t", "divergence", "bound"] and len(rows) == 21


def test_config_error_exit_code(tmp_path):
    assert main(["run", "--epsilon", "-1", "--output", str(tmp_path / "x")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"colour": "red"}')
    assert main(["run", "--config", str(bad), "--output", str(tmp_path / "x")]) == 2


def test_io_error_exit_code(tmp_path):
    assert main(["analyze", "--curve", str(tmp_path / "none.csv"), "--field", str(tmp_path / "none.csv")]) == 3


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "curvestab.cli", "run", "--kind", "Sideways",
                           "--output", str(tmp_path / "x")], capture_output=True, text=True)
    assert proc.returncode == 2
    assert "config error" in proc.stderr
