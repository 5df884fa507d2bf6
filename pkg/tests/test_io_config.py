import json

import numpy as np
import pytest

from curvestab import io
from curvestab.config import ConfigError, ExperimentConfig
from curvestab.field import GridSpec, ScalarField, VectorField
from curvestab.flows import FlowKind, run_geosnakes
from curvestab.levelset import CurvePolyline, extract_curves, init_multi_circle


@pytest.fixture
def grid():
    return GridSpec(7, 5, 0.5)


@pytest.mark.parametrize("binary", [True, False])
@pytest.mark.parametrize("maxval", [255, 1000])
def test_pgm_roundtrip(tmp_path, grid, binary, maxval):
    px = np.arange(35).reshape(5, 7) % 11
    f = ScalarField(grid, px / 10.0)
    path = tmp_path / "a.pgm"
    io.write_pgm(path, f, binary=binary, maxval=maxval)
    back = io.read_pgm(path, spacing=0.5)
    assert back.grid == grid
    assert np.allclose(back.values, f.values, atol=0.5 / maxval)


def test_pgm_header_comments(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_text("P2\n# made by hand\n3 3\n# max\n4\n0 1 2\n3 4 0\n1 1 1\n")
    f = io.read_pgm(path)
    assert np.array_equal(f.values, np.array([[0, 1, 2], [3, 4, 0], [1, 1, 1]]) / 4)


def test_pgm_errors(tmp_path):
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
    with pytest.raises(ValueError):
        io.read_pgm(bad)
    short = tmp_path / "short.pgm"
    short.write_bytes(b"P5\n4 4\n255\n\x00\x01")
    with pytest.raises(ValueError):
        io.read_pgm(short)
    with pytest.raises(ValueError):
        io.write_pgm(tmp_path / "x.pgm", np.zeros((2, 2)), maxval=0)


def test_constant_field_writes_zero_image(tmp_path):
    io.write_pgm(tmp_path / "k.pgm", np.full((3, 3), 7.0))
    assert np.all(io.read_pgm(tmp_path / "k.pgm").values == 0)


def test_ppm_overlay_roundtrip(tmp_path):
    g = GridSpec(40, 30, 1.0)
    bg = ScalarField(g, np.zeros(g.shape))
    curves = extract_curves(init_multi_circle(g, [(20, 15, 8)]))
    rgb = io.overlay_image(bg, curves)
    assert rgb.shape == (30, 40, 3)
    assert (rgb[..., 0] == 255).sum() > 30
    io.write_ppm(tmp_path / "o.ppm", rgb)
    assert np.array_equal(io.read_ppm(tmp_path / "o.ppm"), rgb)


def test_scalar_csv_roundtrip_exact(tmp_path, grid):
    rng = np.random.default_rng(0)
    f = ScalarField(grid, rng.normal(size=grid.shape))
    io.write_scalar_csv(tmp_path / "s.csv", f)
    back = io.read_scalar_csv(tmp_path / "s.csv", spacing=0.5)
    assert np.array_equal(back.values, f.values)


def test_vector_csv_roundtrip_exact(tmp_path, grid):
    rng = np.random.default_rng(1)
    F = VectorField(grid, rng.normal(size=grid.shape), rng.normal(size=grid.shape))
    io.write_vector_csv(tmp_path / "v.csv", F)
    back = io.read_vector_csv(tmp_path / "v.csv")
    assert back.grid == grid
    assert np.array_equal(back.u, F.u) and np.array_equal(back.v, F.v)
    io.write_vector_csv_pair(tmp_path / "u.csv", tmp_path / "w.csv", F)
    pair = io.read_vector_csv_pair(tmp_path / "u.csv", tmp_path / "w.csv", spacing=0.5)
    assert np.array_equal(pair.u, F.u) and np.array_equal(pair.v, F.v)


def test_vector_csv_rejects_partial_grid(tmp_path):
    (tmp_path / "p.csv").write_text("x,y,u,v\n0,0,1,1\n1,0,1,1\n0,1,1,1\n")
    with pytest.raises(ValueError):
        io.read_vector_csv(tmp_path / "p.csv")


def test_curves_csv_roundtrip(tmp_path):
    g = GridSpec(64, 64, 1.0)
    curves = extract_curves(init_multi_circle(g, [(20, 20, 8), (44, 40, 10)]))
    t = np.linspace(0, 1, 5)
    curves.append(CurvePolyline(np.stack([t, t], axis=1), False))
    io.write_curves_csv(tmp_path / "c.csv", curves)
    header = (tmp_path / "c.csv").read_text().splitlines()[0]
    assert header == "curve,index,x,y,nx,ny,tx,ty"
    back = io.read_curves_csv(tmp_path / "c.csv")
    assert [c.closed for c in back] == [True, True, False]
    for a, b in zip(curves[:2], back):
        assert np.array_equal(a.vertices, b.vertices)
        assert np.allclose(a.normals, b.normals, rtol=0, atol=1e-15)  # renormalised on load
    assert np.array_equal(back[2].vertices, curves[2].vertices)


def test_empty_curves_csv(tmp_path):
    io.write_curves_csv(tmp_path / "e.csv", [])
    assert io.read_curves_csv(tmp_path / "e.csv") == []


def test_records_csv(tmp_path):
    g = GridSpec(32, 32, 1.0)
    F = VectorField(g, np.zeros(g.shape), np.zeros(g.shape))
    _, records = run_geosnakes(F, init_multi_circle(g, [(16, 16, 8)]), ExperimentConfig().flow_spec())
    io.write_records_csv(tmp_path / "r.csv", records)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "step,length,area,max_speed,phase,outcome"
    assert len(lines) - 1 == sum(len(r.steps) for r in records)
    assert lines[1].split(",")[4] == "GD1"


def test_table_roundtrip(tmp_path):
    io.write_table_csv(tmp_path / "t.csv", {"b": 1, "a": "x"}, ["k", "v"], [(0, 0.5), (1, np.float64(0.25))])
    header, cols, rows = io.read_table_csv(tmp_path / "t.csv")
    assert header == {"a": "x", "b": 1}
    assert cols == ["k", "v"]
    assert rows == [["0", "0.5"], ["1", "0.25"]]
    (tmp_path / "n.csv").write_text("k,v\n")
    with pytest.raises(ValueError):
        io.read_table_csv(tmp_path / "n.csv")


def test_config_roundtrip(tmp_path):
    cfg = ExperimentConfig(width=64, epsilon=0.3, init_circles=[[10, 10, 5]])
    cfg.save(tmp_path / "c.json")
    back = ExperimentConfig.load(tmp_path / "c.json")
    assert back == cfg
    assert json.loads(cfg.dumps())["epsilon"] == 0.3


def test_config_defaults_resolve():
    cfg = ExperimentConfig()
    spec = cfg.flow_spec()
    assert spec.kind is FlowKind.MODIFIED_EQUILIBRIUM
    assert spec.epsilon == 0.1
    assert cfg.alternation().length_window == 10


@pytest.mark.parametrize(
    "bad",
    [
        {"epsilon": -1.0},
        {"kind": "Sideways"},
        {"rotation_sign": "up"},
        {"width": 2},
        {"disks": [[1, 2]]},
        {"cfl": 0.9},
        {"ramp": [0.1]},
        {"colour": "red"},
    ],
)
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(bad)


def test_config_load_errors(tmp_path):
    (tmp_path / "a.json").write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "a.json")
    (tmp_path / "b.json").write_text("[1, 2]")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "b.json")
