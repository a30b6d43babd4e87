import numpy as np
import pytest

from simpopt.filtering import (FilterSpec, build_filter, check_assumptions)
from simpopt.mesh import BoundarySegment, Domain, build_mesh, refine


def unit_mesh(nx=16, ny=16):
    dom = Domain(1.0, 1.0, (BoundarySegment("left"),),
                 (BoundarySegment("right"),))
    return build_mesh(dom, nx, ny)


def test_spec_validation():
    with pytest.raises(ValueError):
        FilterSpec(radius=-0.1)
    with pytest.raises(ValueError):
        FilterSpec(boundary_policy="Reflect")
    with pytest.raises(ValueError):
        FilterSpec(kind="Gaussian")


def test_kernel_unit_mass():
    # int of c (1 - |z| / r) over the disk of radius r is
    # c * 2 pi (r^2/2 - r^2/3) = c pi r^2 / 3 = 1 for c = 3 / (pi r^2)
    spec = FilterSpec(radius=0.37)
    c = spec.kernel_constant
    assert c * np.pi * spec.radius ** 2 / 3.0 == pytest.approx(1.0, rel=1e-15)
    assert spec.kernel(np.array([0.0, 0.0])) == pytest.approx(c)
    assert spec.kernel(np.array([spec.radius, 0.0])) == 0.0


@pytest.mark.parametrize("space", ["DG0", "Q1"])
def test_truncate_row_sums(space):
    mesh = unit_mesh(20, 20)
    op = build_filter(mesh, space, FilterSpec(radius=0.15))
    sums = op.row_sums()
    assert np.max(sums) <= 1.0 + 1e-12
    # rows whose kernel support stays inside the domain sum to exactly 1
    pts = mesh.element_centers() if space == "DG0" else mesh.node_coords
    interior = np.all((pts >= 0.15) & (pts <= 1.0 - 0.15), axis=1)
    assert interior.any()
    np.testing.assert_allclose(sums[interior], 1.0, atol=1e-12)
    # truncated boundary rows lose mass
    assert sums.min() < 0.5


@pytest.mark.parametrize("space", ["DG0", "Q1"])
def test_renormalize_row_sums(space):
    mesh = unit_mesh(20, 20)
    op = build_filter(mesh, space, FilterSpec(radius=0.15,
                                              boundary_policy="Renormalize"))
    np.testing.assert_allclose(op.row_sums(), 1.0, atol=1e-13)
    # constants are reproduced exactly
    n = mesh.n_elements if space == "DG0" else mesh.n_nodes
    np.testing.assert_allclose(op.apply(np.full(n, 0.42)), 0.42, atol=1e-13)


def test_box_preservation():
    mesh = unit_mesh(16, 16)
    rng = np.random.default_rng(0)
    for policy in ("Truncate", "Renormalize"):
        op = build_filter(mesh, "DG0", FilterSpec(radius=0.2,
                                                  boundary_policy=policy))
        for _ in range(10):
            rho = rng.uniform(0.0, 1.0, size=mesh.n_elements)
            out = op.apply(rho)
            assert out.min() >= -1e-12 and out.max() <= 1.0 + 1e-12


def test_adjoint_is_transpose():
    mesh = unit_mesh(10, 10)
    op = build_filter(mesh, "DG0", FilterSpec(radius=0.2))
    rng = np.random.default_rng(1)
    x = rng.standard_normal(mesh.n_elements)
    y = rng.standard_normal(mesh.n_elements)
    assert y @ op.apply(x) == pytest.approx(op.apply_adjoint(y) @ x, rel=1e-13)


def test_smoothing_reduces_oscillation():
    mesh = unit_mesh(16, 16)
    op = build_filter(mesh, "DG0", FilterSpec(radius=0.2))
    ii, jj = np.meshgrid(np.arange(mesh.nx), np.arange(mesh.ny))
    checker = ((ii + jj) % 2).astype(float).ravel()
    out = op.apply(checker)
    # filtered checkerboard is nearly the mean 0.5 away from the boundary
    assert np.std(out) < 0.25 * np.std(checker)


def test_output_space_q1_from_dg0():
    mesh = unit_mesh(12, 12)
    spec = FilterSpec(radius=0.2)
    op = build_filter(mesh, "DG0", spec, output_space="Q1")
    assert op.matrix.shape == (mesh.n_nodes, mesh.n_elements)
    rho = np.random.default_rng(2).uniform(size=mesh.n_elements)
    out = op.apply(rho)
    assert out.shape == (mesh.n_nodes,)
    assert out.min() >= -1e-12 and out.max() <= 1 + 1e-12


def test_under_resolved_radius_warns():
    mesh = unit_mesh(4, 4)
    with pytest.warns(UserWarning):
        build_filter(mesh, "DG0", FilterSpec(radius=0.4))
    # a radius below the quadrature spacing cannot be normalized at all
    with pytest.raises(ValueError):
        with pytest.warns(UserWarning):
            build_filter(mesh, "DG0", FilterSpec(radius=0.05))


def test_export_coo_round_trip(tmp_path):
    mesh = unit_mesh(6, 6)
    op = build_filter(mesh, "DG0", FilterSpec(radius=0.3))
    path = tmp_path / "filter.coo"
    op.export_coo(path)
    rows, cols, vals = [], [], []
    for line in path.read_text().splitlines():
        r, c, v = line.split()
        rows.append(int(r)); cols.append(int(c)); vals.append(float(v))
    import scipy.sparse as sp
    back = sp.csr_matrix((vals, (rows, cols)), shape=op.matrix.shape)
    assert (back != op.matrix).nnz == 0


@pytest.mark.parametrize("space", ["DG0", "Q1"])
def test_check_assumptions_passes(space):
    meshes = [unit_mesh(8, 8)]
    for _ in range(2):
        meshes.append(refine(meshes[-1]))
    report = check_assumptions(meshes, FilterSpec(radius=0.2), space=space,
                               n_random=20, seed=0)
    assert report.passed, report.failures
    assert max(report.box_violation) <= 1e-12
    assert max(report.linearity_error) <= 1e-13
    for p, orders in report.interpolation_orders.items():
        assert min(orders) >= 0.9
    assert max(report.sup_gradient) <= 1.1 * report.gradient_bound
    # oscillation response decreases under refinement ((F4) surrogate)
    osc = report.oscillation_errors
    assert all(osc[i + 1] <= osc[i] for i in range(len(osc) - 1))


def test_check_assumptions_needs_three_levels():
    meshes = [unit_mesh(8, 8)]
    meshes.append(refine(meshes[0]))
    with pytest.raises(ValueError):
        check_assumptions(meshes, FilterSpec(radius=0.2))
