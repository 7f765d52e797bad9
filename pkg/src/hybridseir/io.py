"""CSV and VTK readers/writers.

Floats are written with ``repr`` so files round-trip exactly and identical
runs produce identical bytes.
"""
from __future__ import annotations

import csv
import io
import os
from pathlib import Path

import numpy as np

from .mesh import Mesh
from .seir import SeirState, Trajectory


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def rows_to_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def write_rows(path, columns, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(rows_to_csv(columns, rows))
    return path


def write_trajectory_csv(traj: Trajectory, path) -> Path:
    return write_rows(path, traj.columns, traj.rows)


def read_table(path) -> dict:
    """Numeric CSV as ``{column: array}``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        data = [row for row in reader if row and not row[0].startswith("#")]
    out = {}
    for j, name in enumerate(header):
        try:
            out[name] = np.array([float(r[j]) for r in data])
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path}: column {name!r}: {exc}") from None
    return out


def _require(table, path, names):
    missing = [c for c in names if c not in table]
    if missing:
        raise ValueError(f"{path}: missing column(s) {missing}")


def read_province_csv(path):
    """Rows ``subdomain_id,population,infectious,removed`` sorted by id."""
    t = read_table(path)
    _require(t, path, ("subdomain_id", "population", "infectious", "removed"))
    order = np.argsort(t["subdomain_id"], kind="stable")
    ids = t["subdomain_id"][order].astype(int)
    if not np.array_equal(ids, np.arange(1, len(ids) + 1)):
        raise ValueError(f"{path}: subdomain ids must be 1..L, got {ids.tolist()}")
    return t["population"][order], t["infectious"][order], t["removed"][order]


def write_province_csv(path, population, infectious, removed) -> Path:
    rows = [dict(subdomain_id=k + 1, population=float(p), infectious=float(i), removed=float(r))
            for k, (p, i, r) in enumerate(zip(population, infectious, removed))]
    return write_rows(path, ("subdomain_id", "population", "infectious", "removed"), rows)


def read_points_csv(path):
    """Rows ``x,y,status``; returns ``(points (P, 2), statuses)``."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"x", "y", "status"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns x,y,status")
        pts, st = [], []
        for k, row in enumerate(reader, start=2):
            try:
                pts.append((float(row["x"]), float(row["y"])))
            except (TypeError, ValueError):
                raise ValueError(f"{path}:{k}: bad coordinates") from None
            st.append(row["status"].strip())
    return np.array(pts).reshape(-1, 2), st


def write_points_csv(path, points, statuses) -> Path:
    rows = [dict(x=float(x), y=float(y), status=s) for (x, y), s in zip(points, statuses)]
    return write_rows(path, ("x", "y", "status"), rows)


def read_targets_csv(path):
    """Rows ``time,I_1,...,I_L``; returns ``(times (K,), targets (K, L))``."""
    t = read_table(path)
    _require(t, path, ("time",))
    cols = sorted((c for c in t if c.startswith("I_")), key=lambda c: int(c[2:]))
    if not cols:
        raise ValueError(f"{path}: no I_<l> columns")
    return t["time"], np.column_stack([t[c] for c in cols])


def write_targets_csv(path, times, targets) -> Path:
    targets = np.atleast_2d(targets)
    cols = ["time"] + [f"I_{l + 1}" for l in range(targets.shape[1])]
    rows = [dict(zip(cols, [float(t), *map(float, row)])) for t, row in zip(times, targets)]
    return write_rows(path, cols, rows)


def vtk_text(mesh: Mesh, state: SeirState, title="seir") -> str:
    """Legacy ASCII unstructured grid with point fields s, e, i, r, n and i*n."""
    V, T = mesh.vertex_count, mesh.triangle_count
    out = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
           "DATASET UNSTRUCTURED_GRID", f"POINTS {V} double"]
    out += [f"{_fmt(x)} {_fmt(y)} 0.0" for x, y in mesh.vertices]
    out.append(f"CELLS {T} {4 * T}")
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    out.append(f"CELL_TYPES {T}")
    out += ["5"] * T
    out.append(f"CELL_DATA {T}")
    out += ["SCALARS label int 1", "LOOKUP_TABLE default"]
    out += [str(int(l)) for l in mesh.triangle_labels]
    out.append(f"POINT_DATA {V}")
    fields = dict(s=state.s, e=state.e, i=state.i, r=state.r, n=state.n, infectious_density=state.i * state.n)
    for name, values in fields.items():
        out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        out += [_fmt(v) for v in values]
    return "\n".join(out) + "\n"


def write_vtk(mesh: Mesh, state: SeirState, path, title="seir") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(vtk_text(mesh, state, title))
    return path


def write_snapshots(mesh: Mesh, snapshots, directory, stem="snapshot") -> list[Path]:
    directory = Path(directory)
    return [write_vtk(mesh, st, directory / f"{stem}_{k:05d}.vtk", title=f"t={t!r}")
            for k, (t, st) in enumerate(snapshots)]


def output_dir(default, env="HYBRIDSEIR_OUTPUT_DIR") -> Path:
    """Output directory, overridable through the environment."""
    return Path(os.environ.get(env) or default)
