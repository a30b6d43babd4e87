"""Legacy ASCII VTK output for structured quad meshes, with atomic writes."""

from __future__ import annotations

import os
import tempfile

import numpy as np

from .mesh import Mesh


def atomic_write(path, text: str):
    """Write text to path via a temp file and rename; never leaves a stub."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _format_scalars(name: str, values: np.ndarray) -> list[str]:
    lines = [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
    lines.extend(f"{float(v)!r}" for v in np.asarray(values, dtype=float))
    return lines


def _format_vectors(name: str, values: np.ndarray) -> list[str]:
    vals = np.asarray(values, dtype=float).reshape(-1, 2)
    lines = [f"VECTORS {name} double"]
    lines.extend(f"{float(v[0])!r} {float(v[1])!r} 0.0" for v in vals)
    return lines


def write_vtk(path, mesh: Mesh, point_data: dict = None, cell_data: dict = None,
              title: str = "simpopt output"):
    """Write a legacy ASCII VTK structured grid.

    point_data values are per-node: (n_nodes,) scalars or (2*n_nodes,) flat
    vectors; cell_data values are per-element scalars.
    """
    lines = ["# vtk DataFile Version 3.0", title, "ASCII",
             "DATASET STRUCTURED_GRID",
             f"DIMENSIONS {mesh.nx + 1} {mesh.ny + 1} 1",
             f"POINTS {mesh.n_nodes} double"]
    lines.extend(f"{float(x)!r} {float(y)!r} 0.0" for x, y in mesh.node_coords)

    if point_data:
        lines.append(f"POINT_DATA {mesh.n_nodes}")
        for name, values in point_data.items():
            arr = np.asarray(values, dtype=float)
            if arr.size == 2 * mesh.n_nodes:
                lines.extend(_format_vectors(name, arr))
            elif arr.size == mesh.n_nodes:
                lines.extend(_format_scalars(name, arr))
            else:
                raise ValueError(f"point data {name!r} has size {arr.size}, "
                                 f"expected {mesh.n_nodes} or {2 * mesh.n_nodes}")
    if cell_data:
        lines.append(f"CELL_DATA {mesh.n_elements}")
        for name, values in cell_data.items():
            arr = np.asarray(values, dtype=float)
            if arr.size != mesh.n_elements:
                raise ValueError(f"cell data {name!r} has size {arr.size}, "
                                 f"expected {mesh.n_elements}")
            lines.extend(_format_scalars(name, arr))
    atomic_write(path, "\n".join(lines) + "\n")
