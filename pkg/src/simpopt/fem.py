"""Vector-Q1 elasticity on structured quad meshes.

The bilinear form integrand is k(rho) * (2 mu D(u):D(v) + lambda div u div v),
integrated with a 2x2 Gauss rule per element.  Densities enter through their
values at the quadrature points, so DG0 densities are integrated exactly and
Q1 densities commit a standard O(h^2) variational crime.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh

# 2x2 Gauss points on [-1,1]^2, tensor order (xi fast)
_G = 1.0 / np.sqrt(3.0)
GAUSS_PTS = np.array([[-_G, -_G], [_G, -_G], [-_G, _G], [_G, _G]])
N_QP = 4

# Q1 shape functions and reference gradients at the quadrature points
def _shape(xi, eta):
    return 0.25 * np.array([(1 - xi) * (1 - eta), (1 + xi) * (1 - eta),
                            (1 + xi) * (1 + eta), (1 - xi) * (1 + eta)])


def _shape_grad(xi, eta):
    dxi = 0.25 * np.array([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)])
    deta = 0.25 * np.array([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)])
    return np.stack([dxi, deta])  # (2, 4)


SHAPE_AT_QP = np.array([_shape(*p) for p in GAUSS_PTS])          # (4 qp, 4 nodes)
SHAPE_GRAD_AT_QP = np.array([_shape_grad(*p) for p in GAUSS_PTS])  # (4 qp, 2, 4)

# Direct-solver threshold; above this the solve falls back to CG
DIRECT_SOLVE_LIMIT = 200_000


class SolverError(RuntimeError):
    """Linear solve failed (stagnation or indefinite system)."""


@dataclass(frozen=True)
class MaterialModel:
    """Lame coefficients plus the SIMP interpolation parameters."""

    mu: float
    lam: float
    eps_simp: float = 1e-3
    p_s: float = 3.0

    def __post_init__(self):
        if self.mu <= 0.0 or self.lam < 0.0:
            raise ValueError("require mu > 0 and lam >= 0")
        if not 0.0 < self.eps_simp < 1.0:
            raise ValueError("eps_simp must lie in (0, 1)")
        if self.p_s < 1.0:
            raise ValueError("SIMP exponent must be >= 1")

    @classmethod
    def from_youngs(cls, E: float, nu: float, eps_simp: float = 1e-3,
                    p_s: float = 3.0) -> "MaterialModel":
        """Plane-strain conversion from Young's modulus and Poisson ratio."""
        mu = E / (2.0 * (1.0 + nu))
        lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
        return cls(mu=mu, lam=lam, eps_simp=eps_simp, p_s=p_s)

    @property
    def elasticity_matrix(self) -> np.ndarray:
        """3x3 matrix C with strain (exx, eyy, gxy): e.C.e = 2 mu |D|^2 + lam div^2."""
        mu, lam = self.mu, self.lam
        return np.array([[2 * mu + lam, lam, 0.0],
                         [lam, 2 * mu + lam, 0.0],
                         [0.0, 0.0, mu]])


def simp_stiffness(rho_tilde, mat: MaterialModel):
    """SIMP interpolation k(rho) = eps + (1 - eps) rho^p and its derivative."""
    r = np.asarray(rho_tilde, dtype=float)
    if np.any(r < -1e-12) or np.any(r > 1.0 + 1e-12):
        raise ValueError("physical density outside [0, 1]")
    r = np.clip(r, 0.0, 1.0)
    k = mat.eps_simp + (1.0 - mat.eps_simp) * r ** mat.p_s
    dk = (1.0 - mat.eps_simp) * mat.p_s * r ** (mat.p_s - 1.0)
    return k, dk


@dataclass
class DisplacementField:
    """Vector-Q1 field; coefficients vanish on constrained Dirichlet dofs."""

    mesh: Mesh
    coeffs: np.ndarray  # (2 * n_nodes,)

    def __post_init__(self):
        if self.coeffs.shape != (2 * self.mesh.n_nodes,):
            raise ValueError("coefficient vector size mismatch")

    def nodal(self) -> np.ndarray:
        return self.coeffs.reshape(-1, 2)


@dataclass
class Traction:
    """Boundary load on the Neumann edges of a mesh.

    Either a closed-form ``func(x, y) -> (fx, fy)`` evaluated at edge
    quadrature points, or constant per-edge 2-vectors aligned with
    ``mesh.neumann_edges``.
    """

    mesh: Mesh
    func: Optional[Callable] = None
    edge_values: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.func is None) == (self.edge_values is None):
            raise ValueError("provide exactly one of func or edge_values")
        if self.edge_values is not None:
            self.edge_values = np.asarray(self.edge_values, dtype=float)
            if self.edge_values.shape != (len(self.mesh.neumann_edges), 2):
                raise ValueError("edge_values must be (n_neumann_edges, 2)")


def element_dof_matrix(mesh: Mesh) -> np.ndarray:
    """(n_elements, 8) global dof indices, interleaved (ux, uy) per node."""
    key = "dofmat"
    if key not in mesh._cache:
        nodes = mesh.elements
        dofs = np.empty((mesh.n_elements, 8), dtype=int)
        dofs[:, 0::2] = 2 * nodes
        dofs[:, 1::2] = 2 * nodes + 1
        mesh._cache[key] = dofs
    return mesh._cache[key]


def strain_matrices(mesh: Mesh) -> np.ndarray:
    """(4 qp, 3, 8) strain-displacement matrices, shared by all elements."""
    key = "bmats"
    if key not in mesh._cache:
        B = np.zeros((N_QP, 3, 8))
        for q in range(N_QP):
            dN = SHAPE_GRAD_AT_QP[q].copy()
            dN[0] *= 2.0 / mesh.dx
            dN[1] *= 2.0 / mesh.dy
            B[q, 0, 0::2] = dN[0]
            B[q, 1, 1::2] = dN[1]
            B[q, 2, 0::2] = dN[1]
            B[q, 2, 1::2] = dN[0]
        mesh._cache[key] = B
    return mesh._cache[key]


def quadrature_points(mesh: Mesh) -> np.ndarray:
    """(n_elements, 4, 2) physical Gauss point coordinates."""
    key = "qpts"
    if key not in mesh._cache:
        centers = mesh.element_centers()
        offsets = GAUSS_PTS * np.array([mesh.dx / 2.0, mesh.dy / 2.0])
        mesh._cache[key] = centers[:, None, :] + offsets[None, :, :]
    return mesh._cache[key]


def quadrature_weight(mesh: Mesh) -> float:
    """Weight of each of the 4 Gauss points (uniform: congruent rectangles)."""
    return mesh.element_area / 4.0


def density_at_quadrature(mesh: Mesh, space: str, coeffs: np.ndarray) -> np.ndarray:
    """Evaluate a DG0 or Q1 scalar field at the element quadrature points."""
    if space == "DG0":
        return np.broadcast_to(coeffs[:, None], (mesh.n_elements, N_QP))
    if space == "Q1":
        return coeffs[mesh.elements] @ SHAPE_AT_QP.T
    raise ValueError(f"unknown density space {space!r}")


def scatter_quadrature_to_coeffs(mesh: Mesh, space: str, vals: np.ndarray) -> np.ndarray:
    """Adjoint of density_at_quadrature: (n_elements, 4) -> coefficient vector."""
    if space == "DG0":
        return vals.sum(axis=1)
    if space == "Q1":
        out = np.zeros(mesh.n_nodes)
        np.add.at(out, mesh.elements, vals @ SHAPE_AT_QP)
        return out
    raise ValueError(f"unknown density space {space!r}")


def quadrature_basis_matrix(mesh: Mesh, space: str) -> sp.csr_matrix:
    """Sparse map from field coefficients to values at all (element, qp) pairs."""
    ne = mesh.n_elements
    rows = np.repeat(np.arange(ne * N_QP), 1)
    if space == "DG0":
        rows = np.arange(ne * N_QP)
        cols = np.repeat(np.arange(ne), N_QP)
        data = np.ones(ne * N_QP)
        return sp.csr_matrix((data, (rows, cols)), shape=(ne * N_QP, ne))
    if space == "Q1":
        rows = np.repeat(np.arange(ne * N_QP), 4)
        cols = np.repeat(mesh.elements, N_QP, axis=0).ravel()
        data = np.tile(SHAPE_AT_QP, (ne, 1)).ravel()
        return sp.csr_matrix((data, (rows, cols)), shape=(ne * N_QP, mesh.n_nodes))
    raise ValueError(f"unknown density space {space!r}")


def _qp_element_matrices(mesh: Mesh, mat: MaterialModel) -> np.ndarray:
    """(4 qp, 8, 8) unweighted per-quadrature-point element matrices B^T C B."""
    B = strain_matrices(mesh)
    C = mat.elasticity_matrix
    return np.einsum("qai,ab,qbj->qij", B, C, B)


def assemble_system(mesh: Mesh, physical_density: np.ndarray,
                    mat: MaterialModel) -> sp.csr_matrix:
    """Assemble the SIMP-weighted stiffness matrix (no BCs applied).

    physical_density: per-element scalar (DG0) or (n_elements, 4) quadrature
    values of the physical density in [0, 1].
    """
    if mesh.dirichlet_nodes.size == 0:
        raise ValueError("empty Dirichlet set: system would be singular")
    rho_q = np.asarray(physical_density, dtype=float)
    if rho_q.ndim == 1:
        rho_q = np.broadcast_to(rho_q[:, None], (mesh.n_elements, N_QP))
    k, _ = simp_stiffness(rho_q, mat)

    Eq = _qp_element_matrices(mesh, mat)
    w = quadrature_weight(mesh)
    Ke = np.einsum("eq,qij->eij", w * k, Eq)

    dofs = element_dof_matrix(mesh)
    rows = np.repeat(dofs, 8, axis=1).ravel()
    cols = np.tile(dofs, (1, 8)).ravel()
    n = 2 * mesh.n_nodes
    K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return K


def _edge_nodes(mesh: Mesh, elem: int, local_edge: int) -> tuple[int, int]:
    conn = mesh.elements[elem]
    return int(conn[local_edge]), int(conn[(local_edge + 1) % 4])


def edge_length(mesh: Mesh, local_edge: int) -> float:
    return mesh.dx if local_edge in (0, 2) else mesh.dy


def assemble_load(mesh: Mesh, traction: Traction) -> np.ndarray:
    """Edge-wise 2-point Gauss quadrature of f . v over the Neumann boundary."""
    F = np.zeros(2 * mesh.n_nodes)
    g = 1.0 / np.sqrt(3.0)
    for idx, (elem, ledge) in enumerate(mesh.neumann_edges):
        a, b = _edge_nodes(mesh, elem, ledge)
        xa, xb = mesh.node_coords[a], mesh.node_coords[b]
        le = edge_length(mesh, ledge)
        for s in (-g, g):
            # linear trace basis along the edge, parameter s in [-1, 1]
            na, nb = 0.5 * (1 - s), 0.5 * (1 + s)
            x = na * xa + nb * xb
            if traction.func is not None:
                fx, fy = traction.func(x[0], x[1])
            else:
                fx, fy = traction.edge_values[idx]
            wq = le / 2.0
            F[2 * a] += wq * na * fx
            F[2 * a + 1] += wq * na * fy
            F[2 * b] += wq * nb * fx
            F[2 * b + 1] += wq * nb * fy
    F[mesh.dirichlet_dof_mask] = 0.0
    return F


def solve_displacement(K: sp.spmatrix, F: np.ndarray, mesh: Mesh,
                       tol: float = 1e-10) -> DisplacementField:
    """Solve K u = F on the free dofs; Dirichlet entries are exactly zero."""
    free = ~mesh.dirichlet_dof_mask
    if not mesh.dirichlet_dof_mask.any():
        raise ValueError("empty Dirichlet set: system is singular")
    Kff = K[free][:, free].tocsc()
    Ff = F[free]
    u = np.zeros(2 * mesh.n_nodes)
    if Ff.shape[0] == 0:
        return DisplacementField(mesh, u)

    nf = Kff.shape[0]
    if nf <= DIRECT_SOLVE_LIMIT:
        try:
            uf = spla.splu(Kff).solve(Ff)
        except RuntimeError as exc:  # singular factorization
            raise SolverError(f"sparse factorization failed: {exc}") from exc
    else:
        M = spla.LinearOperator((nf, nf), matvec=lambda x: x / Kff.diagonal())
        uf, info = spla.cg(Kff, Ff, rtol=tol * 1e-2, maxiter=20 * nf, M=M)
        if info != 0:
            res = np.linalg.norm(Kff @ uf - Ff)
            raise SolverError(f"CG stagnated (info={info}, residual={res:.3e})")

    normF = np.linalg.norm(Ff)
    res = np.linalg.norm(Kff @ uf - Ff)
    if normF > 0 and res > tol * normF:
        raise SolverError(f"residual {res:.3e} exceeds {tol:.1e} * ||F||")
    u[free] = uf
    return DisplacementField(mesh, u)


def element_energy_density(u: DisplacementField, mat: MaterialModel) -> np.ndarray:
    """|E u|^2 = 2 mu |D(u)|^2 + lam (div u)^2 at each (element, qp)."""
    mesh = u.mesh
    B = strain_matrices(mesh)
    C = mat.elasticity_matrix
    U = u.coeffs[element_dof_matrix(mesh)]           # (ne, 8)
    eps = np.einsum("qab,eb->eqa", B, U)             # (ne, 4, 3)
    dens = np.einsum("eqa,ab,eqb->eq", eps, C, eps)
    return np.maximum(dens, 0.0)


def compliance(u: DisplacementField, F: np.ndarray) -> float:
    """F . u; equals u^T K u at a converged solve."""
    return float(F @ u.coeffs)
