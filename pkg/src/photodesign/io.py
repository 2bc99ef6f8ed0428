"""File formats: CSV traces, observed data with JSON sidecar, JSON reports, legacy VTK."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import AlignmentError, ConfigurationError
from .geometry import REGION_NAMES, StructuredGrid, TriMesh
from .objective import ObservedData

FLOAT_FMT = "%.12e"
VTK_FMT = "%.8e"


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, float) and not np.isfinite(x):
        return str(x)
    return x


def write_json(path, obj):
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def write_traces_csv(path, times, values, nodes):
    """Long format, one row per (time level, node)."""
    times, values, nodes = np.asarray(times), np.asarray(values), np.asarray(nodes)
    if values.shape != (times.size, nodes.size):
        raise AlignmentError("trace array does not match times x nodes")
    n_t, n_n = values.shape
    table = np.column_stack([np.repeat(times, n_n), np.tile(nodes, n_t), values.ravel()])
    path = Path(path)
    np.savetxt(path, table, fmt=[FLOAT_FMT, "%d", FLOAT_FMT], delimiter=",",
               header="t,node,value", comments="")
    return path


def read_traces_csv(path):
    """Inverse of ``write_traces_csv``: (times, values, nodes)."""
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if table.shape[1] != 3:
        raise ConfigurationError(f"{path}: expected columns t,node,value")
    times = np.unique(table[:, 0])
    nodes = table[: len(table) // len(times), 1].astype(np.int64)
    if len(times) * len(nodes) != len(table):
        raise ConfigurationError(f"{path}: trace table is not a full time x node grid")
    return times, table[:, 2].reshape(len(times), len(nodes)), nodes


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_observed(path, obs: ObservedData):
    """CSV traces plus ``<name>.json`` carrying layout and run metadata."""
    path = write_traces_csv(path, obs.times, obs.values, obs.nodes)
    write_json(sidecar_path(path), {"meta": obs.meta, "side": obs.side, "weights": obs.weights})
    return path


def load_observed(path, expect_hash=None) -> ObservedData:
    """Load observed data; refuse it when its geometry hash differs from ``expect_hash``."""
    path = Path(path)
    side = sidecar_path(path)
    if not path.exists() or not side.exists():
        raise ConfigurationError(f"observed data {path} or its sidecar {side.name} is missing")
    info = json.loads(side.read_text())
    meta = info.get("meta", {})
    if expect_hash is not None and meta.get("geometry_hash") != expect_hash:
        raise AlignmentError(
            f"observed data geometry hash {meta.get('geometry_hash')} does not match "
            f"the run geometry {expect_hash}")
    times, values, nodes = read_traces_csv(path)
    return ObservedData(times, values, nodes, np.asarray(info["side"], dtype=np.int64),
                        np.asarray(info["weights"], dtype=float), meta)


def write_eps_csv(path, tri: TriMesh, eps):
    c = tri.centroids
    table = np.column_stack([np.arange(tri.n_elements), c, tri.region, np.asarray(eps)])
    np.savetxt(path, table, fmt=["%d", FLOAT_FMT, FLOAT_FMT, "%d", FLOAT_FMT], delimiter=",",
               header="cell,x,y,region,eps", comments="")
    return Path(path)


def write_spectrum_csv(path, freqs, columns: dict):
    names = list(columns)
    table = np.column_stack([freqs] + [np.asarray(columns[n]) for n in names])
    np.savetxt(path, table, fmt=FLOAT_FMT, delimiter=",", header=",".join(["f", *names]),
               comments="")
    return Path(path)


def _vtk_array_block(name, data, lines):
    data = np.asarray(data)
    if data.dtype.kind in "iub":
        lines.append(f"SCALARS {name} int 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(str(int(v)) for v in data)
    else:
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(VTK_FMT % v for v in data)


def write_vtk_triangles(path, tri: TriMesh, cell_data=None, point_data=None, title="fields"):
    """Legacy ASCII unstructured grid of triangles (VTK cell type 5)."""
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {tri.n_vertices} double"]
    lines.extend(f"{VTK_FMT % x} {VTK_FMT % y} {VTK_FMT % 0.0}" for x, y in tri.vertices)
    lines.append(f"CELLS {tri.n_elements} {4 * tri.n_elements}")
    lines.extend(f"3 {a} {b} {c}" for a, b, c in tri.triangles)
    lines.append(f"CELL_TYPES {tri.n_elements}")
    lines.extend(["5"] * tri.n_elements)
    cell_data = {"region": tri.region, **(cell_data or {})}
    lines.append(f"CELL_DATA {tri.n_elements}")
    for name, data in cell_data.items():
        if len(data) != tri.n_elements:
            raise AlignmentError(f"cell field {name} has the wrong length")
        _vtk_array_block(name, data, lines)
    if point_data:
        lines.append(f"POINT_DATA {tri.n_vertices}")
        for name, data in point_data.items():
            if len(data) != tri.n_vertices:
                raise AlignmentError(f"point field {name} has the wrong length")
            _vtk_array_block(name, data, lines)
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def write_vtk_grid(path, grid: StructuredGrid, fields: dict, title="fields"):
    """Legacy ASCII structured-points file; each field has shape (ny, nx)."""
    ny, nx = grid.shape
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET STRUCTURED_POINTS",
             f"DIMENSIONS {nx} {ny} 1",
             f"ORIGIN {VTK_FMT % grid.x0} {VTK_FMT % grid.y0} {VTK_FMT % 0.0}",
             f"SPACING {VTK_FMT % grid.h} {VTK_FMT % grid.h} {VTK_FMT % 1.0}",
             f"POINT_DATA {nx * ny}"]
    for name, data in fields.items():
        data = np.asarray(data)
        if data.shape != (ny, nx):
            raise AlignmentError(f"grid field {name} has shape {data.shape}, expected {(ny, nx)}")
        _vtk_array_block(name, data.ravel(), lines)
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def region_legend():
    return {str(k): v for k, v in REGION_NAMES.items()}
