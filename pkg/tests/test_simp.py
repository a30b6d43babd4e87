import numpy as np
import pytest

from simpopt import fem, simp
from simpopt.fem import (DisplacementField, MaterialModel, Traction,
                         assemble_load, assemble_system, solve_displacement)
from simpopt.mesh import BoundarySegment, Domain, build_mesh
from simpopt.simp import (DensityField, RegularizerSpec, mass_weights,
                          regularizer_gradient, regularizer_value)

MAT = MaterialModel(mu=0.4, lam=0.6)


def unit_mesh(nx=4, ny=4):
    dom = Domain(1.0, 1.0, (BoundarySegment("left"),),
                 (BoundarySegment("right"),))
    return build_mesh(dom, nx, ny)


def test_density_field_validation():
    mesh = unit_mesh()
    with pytest.raises(ValueError):
        DensityField(mesh, "DG1", np.zeros(mesh.n_elements), 0.5)
    with pytest.raises(ValueError):
        DensityField(mesh, "DG0", np.zeros(mesh.n_nodes), 0.5)
    with pytest.raises(ValueError):
        DensityField.uniform(mesh, "DG0", 1.5)


def test_mass_weights_partition_area():
    mesh = unit_mesh(5, 3)
    for space in ("DG0", "Q1"):
        assert mass_weights(mesh, space).sum() == pytest.approx(
            mesh.domain.area, rel=1e-14)


def test_w1p_value_on_linear_field():
    # rho = x on the unit square: |grad rho| = 1, so R = eps / p
    mesh = unit_mesh(6, 6)
    for p in (1.5, 2.0, 3.0):
        spec = RegularizerSpec("W1p", epsilon=0.25, p=p)
        rho = DensityField(mesh, "Q1", mesh.node_coords[:, 0], 0.5)
        assert regularizer_value(rho, spec) == pytest.approx(0.25 / p, rel=1e-12)


def test_w1p_rejects_dg0():
    mesh = unit_mesh()
    spec = RegularizerSpec("W1p", epsilon=1.0, p=2.0)
    rho = DensityField.uniform(mesh, "DG0", 0.5)
    with pytest.raises(ValueError):
        regularizer_value(rho, spec)
    with pytest.raises(ValueError):
        regularizer_gradient(rho, spec)


def test_ginzburg_landau_value():
    # constant rho = c: gradient term 0, lower-order term |Omega| c(1-c)/(2 eps)
    mesh = unit_mesh(5, 5)
    spec = RegularizerSpec("GinzburgLandau", epsilon=0.1)
    c = 0.3
    rho = DensityField.uniform(mesh, "Q1", 0.5).with_coeffs(
        np.full(mesh.n_nodes, c))
    assert regularizer_value(rho, spec) == pytest.approx(
        c * (1 - c) / (2 * 0.1), rel=1e-12)


def test_tikhonov_value_and_gradient():
    mesh = unit_mesh(4, 3)
    spec = RegularizerSpec("TikhonovL2", epsilon=0.4)
    rng = np.random.default_rng(0)
    coeffs = rng.uniform(size=mesh.n_elements)
    rho = DensityField(mesh, "DG0", coeffs, 0.5)
    m = mass_weights(mesh, "DG0")
    assert regularizer_value(rho, spec) == pytest.approx(
        0.2 * float(m @ coeffs ** 2), rel=1e-14)
    np.testing.assert_allclose(regularizer_gradient(rho, spec),
                               0.4 * m * coeffs, atol=1e-15)


@pytest.mark.parametrize("kind,p", [("W1p", 1.5), ("W1p", 2.0), ("W1p", 3.0),
                                    ("GinzburgLandau", 2.0)])
def test_regularizer_gradient_finite_difference(kind, p):
    mesh = unit_mesh(5, 4)
    spec = RegularizerSpec(kind, epsilon=0.2, p=p)
    rng = np.random.default_rng(3)
    coeffs = rng.uniform(0.2, 0.8, size=mesh.n_nodes)
    rho = DensityField(mesh, "Q1", coeffs, 0.5)
    g = regularizer_gradient(rho, spec)
    d = rng.standard_normal(mesh.n_nodes)
    t = 1e-6
    fd = (regularizer_value(rho.with_coeffs(coeffs + t * d), spec)
          - regularizer_value(rho.with_coeffs(coeffs - t * d), spec)) / (2 * t)
    assert g @ d == pytest.approx(fd, rel=1e-6)


def state_solution(mesh, space, coeffs, filter_op=None):
    rho = DensityField(mesh, space, coeffs, 0.5)
    phys = simp.physical_density(rho, filter_op)
    rho_q = fem.density_at_quadrature(mesh, space, phys)
    K = assemble_system(mesh, rho_q, MAT)
    F = assemble_load(mesh, Traction(mesh, func=lambda x, y: (0.0, -1.0)))
    return rho, solve_displacement(K, F, mesh), F


def test_adjoint_identity():
    # compliance is self-adjoint: the adjoint state is -u, i.e. the
    # Lagrangian with u_a = -u equals the reduced objective
    mesh = unit_mesh(4, 4)
    rng = np.random.default_rng(1)
    coeffs = rng.uniform(0.3, 0.9, size=mesh.n_elements)
    rho, u, F = state_solution(mesh, "DG0", coeffs)
    u_a = DisplacementField(mesh, -u.coeffs)
    L = simp.lagrangian_value(u, rho, u_a, F, MAT, None, None)
    assert L == pytest.approx(simp.objective(u, rho, F, None), rel=1e-12)


def test_lagrangian_stationary_in_adjoint():
    # at the state solution, the Lagrangian is independent of u_a
    mesh = unit_mesh(4, 3)
    rng = np.random.default_rng(2)
    coeffs = rng.uniform(0.3, 0.9, size=mesh.n_elements)
    rho, u, F = state_solution(mesh, "DG0", coeffs)
    base = simp.objective(u, rho, F, None)
    for seed in range(3):
        pert = np.random.default_rng(seed).standard_normal(2 * mesh.n_nodes)
        pert[mesh.dirichlet_dof_mask] = 0.0
        u_a = DisplacementField(mesh, pert)
        L = simp.lagrangian_value(u, rho, u_a, F, MAT, None, None)
        assert L == pytest.approx(base, rel=1e-9)


@pytest.mark.parametrize("space", ["DG0", "Q1"])
def test_reduced_gradient_finite_difference(space):
    mesh = unit_mesh(4, 4)
    rng = np.random.default_rng(4)
    n = mesh.n_elements if space == "DG0" else mesh.n_nodes
    coeffs = rng.uniform(0.3, 0.8, size=n)

    def J(c):
        rho, u, F = state_solution(mesh, space, c)
        return simp.objective(u, rho, F, None)

    rho, u, F = state_solution(mesh, space, coeffs)
    g = simp.reduced_gradient(u, rho, None, MAT, None)
    d = rng.standard_normal(n)
    t = 1e-6
    fd = (J(coeffs + t * d) - J(coeffs - t * d)) / (2 * t)
    assert g @ d == pytest.approx(fd, rel=1e-5)


def test_variable_thickness_convexity():
    # with p_s = 1 the compliance is convex in rho: midpoint value is below
    # the chord for random density pairs
    mesh = unit_mesh(4, 3)
    mat = MaterialModel(mu=0.4, lam=0.6, p_s=1.0)
    F = assemble_load(mesh, Traction(mesh, func=lambda x, y: (0.0, -1.0)))
    rng = np.random.default_rng(6)

    def comp(c):
        K = assemble_system(mesh, c, mat)
        u = solve_displacement(K, F, mesh)
        return fem.compliance(u, F)

    for _ in range(5):
        a = rng.uniform(0.1, 1.0, size=mesh.n_elements)
        b = rng.uniform(0.1, 1.0, size=mesh.n_elements)
        assert comp(0.5 * (a + b)) <= 0.5 * (comp(a) + comp(b)) + 1e-12
