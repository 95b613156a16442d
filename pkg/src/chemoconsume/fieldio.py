"""Field snapshots (CSV and raw binary) and solver checkpoints.

CSV snapshot layout::

    geometry,resolution,time
    annulus(1;2),64x128,0.5
    <row 0 values, comma separated>
    ...

Rows run over the first axis, so a 1D field is written as a single row.
Values use 17 significant digits and round-trip exactly.

Binary snapshot: a fixed 32-byte little-endian header followed by the
row-major float64 values::

    offset  size  field
    0       4     magic b"CKSF"
    4       2     format version (1)
    6       2     geometry code (1 interval, 2 rectangle, 3 annulus)
    8       4     n0 (uint32)
    12      4     n1 (uint32, 1 for an interval)
    16      8     time (float64)
    24      4     first geometry parameter (float32, L | Lx | r0)
    28      4     second geometry parameter (float32, 0 | Ly | r1)
"""

from __future__ import annotations

import csv
import io
import struct
from pathlib import Path

import numpy as np

from .grid import Annulus, Grid, Interval, Rectangle

MAGIC = b"CKSF"
VERSION = 1
HEADER = struct.Struct("<4sHHIIdff")
assert HEADER.size == 32

_GEOM_CODE = {Interval: 1, Rectangle: 2, Annulus: 3}

CHECKPOINT_COLUMNS = [
    "t",
    "steps",
    "int_gradv_sq",
    "int_consumption",
    "int_u_minus_mu",
    "int_fisher_u",
    "int_hess_v_sq",
    "int_weighted_gradv",
    "clipped_mass",
]


def _fmt(x: float) -> str:
    return repr(float(x))


def write_field_csv(path, grid: Grid, values: np.ndarray, time: float) -> None:
    values = np.asarray(values, dtype=float).reshape(grid.shape)
    rows = values.reshape(grid.shape[0], -1) if grid.ndim == 2 else values[None, :]
    buf = io.StringIO()
    buf.write("geometry,resolution,time\n")
    buf.write(f"{grid.label()},{grid.resolution_label()},{_fmt(time)}\n")
    for row in rows:
        buf.write(",".join(_fmt(x) for x in row))
        buf.write("\n")
    Path(path).write_text(buf.getvalue())


def read_field_csv(path) -> tuple[dict, np.ndarray]:
    """Return ``(meta, values)``; meta has ``geometry``, ``resolution``, ``time``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["geometry", "resolution", "time"]:
            raise ValueError(f"{path}: bad snapshot header {header}")
        geom, res, t = next(reader)
        shape = tuple(int(n) for n in res.split("x"))
        rows = [[float(x) for x in row] for row in reader if row]
    values = np.array(rows, dtype=float).reshape(shape)
    return {"geometry": geom, "resolution": shape, "time": float(t)}, values


def _geom_params(grid: Grid) -> tuple[float, float]:
    g = grid.geometry
    if isinstance(g, Interval):
        return g.L, 0.0
    if isinstance(g, Rectangle):
        return g.Lx, g.Ly
    return g.r0, g.r1


def write_field_bin(path, grid: Grid, values: np.ndarray, time: float) -> None:
    values = np.ascontiguousarray(values, dtype="<f8").reshape(grid.shape)
    n0 = grid.shape[0]
    n1 = grid.shape[1] if grid.ndim == 2 else 1
    a, b = _geom_params(grid)
    head = HEADER.pack(MAGIC, VERSION, _GEOM_CODE[type(grid.geometry)], n0, n1, float(time), a, b)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(values.tobytes(order="C"))


def read_field_bin(path) -> tuple[dict, np.ndarray]:
    raw = Path(path).read_bytes()
    magic, version, code, n0, n1, t, a, b = HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a field snapshot (magic {magic!r})")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    values = np.frombuffer(raw, dtype="<f8", offset=HEADER.size)
    if values.size != n0 * n1:
        raise ValueError(f"{path}: expected {n0 * n1} values, found {values.size}")
    shape = (n0,) if code == 1 else (n0, n1)
    meta = {"geometry_code": code, "resolution": shape, "time": t, "params": (a, b)}
    return meta, values.reshape(shape).copy()


def write_checkpoint(directory, grid: Grid, state) -> None:
    """Write ``u.bin``, ``v.bin`` and ``integrals.csv`` for a SimState."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_field_bin(d / "u.bin", grid, state.u, state.t)
    write_field_bin(d / "v.bin", grid, state.v, state.t)
    row = [state.t, state.steps, *[state.cumulative[k] for k in CHECKPOINT_COLUMNS[2:-1]], state.clipped_mass]
    (d / "integrals.csv").write_text(",".join(CHECKPOINT_COLUMNS) + "\n" + ",".join(_fmt(x) for x in row) + "\n")


def read_checkpoint(directory, grid: Grid):
    from .solver import EXTRA_CUMULATIVE_KEYS, SimState

    d = Path(directory)
    mu_meta, u = read_field_bin(d / "u.bin")
    _, v = read_field_bin(d / "v.bin")
    if tuple(mu_meta["resolution"]) != grid.shape:
        raise ValueError(f"checkpoint resolution {mu_meta['resolution']} does not match grid {grid.shape}")
    lines = (d / "integrals.csv").read_text().splitlines()
    cols = lines[0].split(",")
    vals = [float(x) for x in lines[1].split(",")]
    rec = dict(zip(cols, vals))
    cumulative = {k: rec[k] for k in CHECKPOINT_COLUMNS[2:-1]}
    cumulative.update({k: 0.0 for k in EXTRA_CUMULATIVE_KEYS})
    return SimState(
        t=rec["t"],
        u=u,
        v=v,
        cumulative=cumulative,
        steps=int(rec["steps"]),
        clipped_mass=rec["clipped_mass"],
    )
