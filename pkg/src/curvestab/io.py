"""Plain-text and netpbm serialisation for fields, curves and run records.

Images are PGM (grey) or PPM (colour overlays). A real-valued field written
as PGM is scaled linearly so that its minimum maps to 0 and its maximum to
``maxval``; reading a PGM returns values in ``[0, 1]`` (``pixel / maxval``).
Row 0 of an image is grid row ``j = 0`` (no vertical flip).
"""

from __future__ import annotations

import csv
import json
import re
from pathlib import Path

import numpy as np

from .field import GridSpec, ScalarField, VectorField
from .levelset import CurvePolyline, polygon_normals


def _fmt(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# netpbm


def _to_bytes(values: np.ndarray, maxval: int) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        scaled = (values - lo) / (hi - lo)
    else:
        scaled = np.zeros_like(values)
    return np.rint(scaled * maxval).astype(np.uint16 if maxval > 255 else np.uint8)


def write_pgm(path, field: ScalarField | np.ndarray, binary: bool = True, maxval: int = 255):
    """Write a field as PGM (P5 when ``binary``, else P2), min-max scaled."""
    values = field.values if isinstance(field, ScalarField) else np.asarray(field, dtype=float)
    if not 0 < maxval < 65536:
        raise ValueError("maxval must lie in 1..65535")
    px = _to_bytes(values, maxval)
    rows, cols = px.shape
    path = Path(path)
    if binary:
        header = f"P5\n{cols} {rows}\n{maxval}\n".encode()
        data = px.astype(">u2").tobytes() if maxval > 255 else px.tobytes()
        path.write_bytes(header + data)
    else:
        lines = [f"P2\n{cols} {rows}\n{maxval}"]
        lines += [" ".join(str(int(p)) for p in row) for row in px]
        path.write_text("\n".join(lines) + "\n")


def _tokens(data: bytes, count: int):
    """First ``count`` whitespace-separated header tokens (comments skipped) and the offset after them."""
    out = []
    pos = 0
    tok = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)")
    while len(out) < count:
        m = tok.match(data, pos)
        if m is None:
            raise ValueError("truncated netpbm header")
        out.append(m.group(2))
        pos = m.end()
    return out, pos


def read_pgm(path, spacing: float = 1.0) -> ScalarField:
    """Read a P2 or P5 file; values are ``pixel / maxval``."""
    data = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _tokens(data, 4)
    w, h, maxval = int(w), int(h), int(maxval)
    if magic == b"P5":
        pos += 1  # single whitespace after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
        n = w * h * dtype.itemsize
        if len(data) < pos + n:
            raise ValueError("truncated P5 raster")
        px = np.frombuffer(data[pos:pos + n], dtype=dtype).reshape(h, w)
    elif magic == b"P2":
        px = np.array(data[pos:].split(), dtype=np.int64)
        if px.size < w * h:
            raise ValueError("truncated P2 raster")
        px = px[: w * h].reshape(h, w)
    else:
        raise ValueError(f"not a PGM file (magic {magic!r})")
    grid = GridSpec(w, h, spacing)
    return ScalarField(grid, px.astype(float) / maxval)


CURVE_COLOURS = [(255, 40, 40), (40, 200, 40), (60, 90, 255), (255, 200, 0), (200, 0, 200), (0, 200, 200)]


def overlay_image(background: ScalarField, curves, colours=CURVE_COLOURS) -> np.ndarray:
    """RGB array: grey background with each curve drawn in its own colour."""
    grey = _to_bytes(background.values, 255).astype(np.uint8)
    rgb = np.repeat(grey[..., None], 3, axis=2)
    h = background.grid.spacing
    rows, cols = grey.shape
    for k, c in enumerate(curves):
        v = c.vertices / h
        seg_end = np.roll(v, -1, axis=0) if c.closed else v[1:]
        seg_start = v if c.closed else v[:-1]
        for a, b in zip(seg_start, seg_end):
            n = int(np.ceil(np.abs(b - a).max() * 2)) + 1
            t = np.linspace(0.0, 1.0, n)[:, None]
            p = np.rint(a + t * (b - a)).astype(int)
            ok = (p[:, 0] >= 0) & (p[:, 0] < cols) & (p[:, 1] >= 0) & (p[:, 1] < rows)
            rgb[p[ok, 1], p[ok, 0]] = colours[k % len(colours)]
    return rgb


def write_ppm(path, rgb: np.ndarray):
    rgb = np.asarray(rgb, dtype=np.uint8)
    rows, cols, _ = rgb.shape
    Path(path).write_bytes(f"P6\n{cols} {rows}\n255\n".encode() + rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _tokens(data, 4)
    if magic != b"P6" or int(maxval) != 255:
        raise ValueError("only 8-bit P6 files are supported")
    w, h = int(w), int(h)
    pos += 1
    return np.frombuffer(data[pos:pos + 3 * w * h], dtype=np.uint8).reshape(h, w, 3).copy()


# ---------------------------------------------------------------------------
# CSV


def write_scalar_csv(path, field: ScalarField):
    """One CSV row per grid row, full float precision."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in field.values:
            w.writerow([_fmt(x) for x in row])


def read_scalar_csv(path, spacing: float = 1.0) -> ScalarField:
    values = np.loadtxt(path, delimiter=",", ndmin=2)
    rows, cols = values.shape
    return ScalarField(GridSpec(cols, rows, spacing), values)


def write_vector_csv(path, F: VectorField):
    """Single table with columns x,y,u,v in row-major node order."""
    X, Y = F.grid.coords()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "u", "v"])
        for x, y, u, v in zip(X.ravel(), Y.ravel(), F.u.ravel(), F.v.ravel()):
            w.writerow([_fmt(x), _fmt(y), _fmt(u), _fmt(v)])


def read_vector_csv(path) -> VectorField:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    xs, ys = np.unique(data[:, 0]), np.unique(data[:, 1])
    cols, rows = len(xs), len(ys)
    if cols * rows != len(data):
        raise ValueError("vector CSV is not a full grid")
    spacing = float(xs[1] - xs[0]) if cols > 1 else (float(ys[1] - ys[0]) if rows > 1 else 1.0)
    order = np.lexsort((data[:, 0], data[:, 1]))
    data = data[order]
    grid = GridSpec(cols, rows, spacing)
    return VectorField(grid, data[:, 2].reshape(rows, cols), data[:, 3].reshape(rows, cols))


def write_vector_csv_pair(path_u, path_v, F: VectorField):
    write_scalar_csv(path_u, ScalarField(F.grid, F.u))
    write_scalar_csv(path_v, ScalarField(F.grid, F.v))


def read_vector_csv_pair(path_u, path_v, spacing: float = 1.0) -> VectorField:
    u = read_scalar_csv(path_u, spacing)
    v = read_scalar_csv(path_v, spacing)
    if u.values.shape != v.values.shape:
        raise ValueError("u and v tables differ in shape")
    return VectorField(u.grid, u.values, v.values)


CURVE_COLUMNS = ["curve", "index", "x", "y", "nx", "ny", "tx", "ty"]


def write_curves_csv(path, curves):
    """Polylines as rows ``curve,index,x,y,nx,ny,tx,ty``; ``curve`` numbers the components.

    Open polylines get a negative component number (``-1 - k``).
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for k, c in enumerate(curves):
            closed = getattr(c, "closed", True)
            N = c.normals if c.normals is not None else polygon_normals(c.vertices, closed)
            tag = k if closed else -1 - k
            for i, ((x, y), (nx, ny)) in enumerate(zip(c.vertices, N)):
                w.writerow([tag, i, _fmt(x), _fmt(y), _fmt(nx), _fmt(ny), _fmt(-ny), _fmt(nx)])


def read_curves_csv(path) -> list[CurvePolyline]:
    with open(path) as fh:
        lines = fh.read().splitlines()[1:]
    out = []
    if not any(line.strip() for line in lines):
        return out
    data = np.loadtxt(lines, delimiter=",", ndmin=2)
    tags = data[:, 0].astype(int)
    for tag in dict.fromkeys(tags.tolist()):
        rows = data[tags == tag]
        rows = rows[np.argsort(rows[:, 1], kind="stable")]
        out.append(CurvePolyline(rows[:, 2:4].copy(), tag >= 0, rows[:, 4:6].copy()))
    return out


def write_records_csv(path, records):
    """Convergence records as ``step,length,area,max_speed,phase,outcome``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "length", "area", "max_speed", "phase", "outcome"])
        for rec in records:
            for step, length, area, vmax, phase, outcome in rec.rows():
                w.writerow([step, _fmt(length), _fmt(area), _fmt(vmax), phase, outcome])


def write_table_csv(path, header: dict, columns: list[str], rows):
    """CSV preceded by a one-line JSON header (prefixed with ``#``)."""
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(x) if isinstance(x, (float, np.floating)) else x for x in row])


def read_table_csv(path):
    """Inverse of ``write_table_csv``: ``(header, columns, rows as strings)``."""
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ValueError("missing JSON header line")
        header = json.loads(first[2:])
        reader = csv.reader(fh)
        columns = next(reader)
        return header, columns, [row for row in reader]
