import os

import numpy as np
import pytest

from simpopt.mesh import BoundarySegment, Domain, build_mesh
from simpopt.vtkio import atomic_write, write_vtk


def small_mesh():
    dom = Domain(1.0, 1.0, (BoundarySegment("left"),))
    return build_mesh(dom, 2, 2)


def test_atomic_write_no_leftover_temp(tmp_path):
    path = tmp_path / "out.txt"
    atomic_write(path, "hello\n")
    assert path.read_text() == "hello\n"
    leftovers = [f for f in os.listdir(tmp_path) if f.startswith(".tmp-")]
    assert leftovers == []
    # overwrite is atomic too
    atomic_write(path, "second\n")
    assert path.read_text() == "second\n"


def test_vtk_structure(tmp_path):
    mesh = small_mesh()
    path = tmp_path / "field.vtk"
    rng = np.random.default_rng(0)
    u = rng.standard_normal(2 * mesh.n_nodes)
    rho = rng.uniform(size=mesh.n_elements)
    pointwise = rng.uniform(size=mesh.n_nodes)
    write_vtk(path, mesh, point_data={"displacement": u, "phi": pointwise},
              cell_data={"density": rho})
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# vtk DataFile")
    assert "ASCII" in lines
    assert "DATASET STRUCTURED_GRID" in lines
    assert f"DIMENSIONS {mesh.nx + 1} {mesh.ny + 1} 1" in lines
    assert f"POINTS {mesh.n_nodes} double" in lines
    assert f"POINT_DATA {mesh.n_nodes}" in lines
    assert f"CELL_DATA {mesh.n_elements}" in lines
    assert "VECTORS displacement double" in lines
    assert "SCALARS density double 1" in lines
    # full-precision round trip of cell data
    i = lines.index("SCALARS density double 1") + 2
    back = np.array([float(s) for s in lines[i:i + mesh.n_elements]])
    np.testing.assert_array_equal(back, rho)


def test_vtk_size_validation(tmp_path):
    mesh = small_mesh()
    with pytest.raises(ValueError):
        write_vtk(tmp_path / "bad.vtk", mesh,
                  point_data={"u": np.zeros(3)})
    with pytest.raises(ValueError):
        write_vtk(tmp_path / "bad.vtk", mesh,
                  cell_data={"rho": np.zeros(5)})
