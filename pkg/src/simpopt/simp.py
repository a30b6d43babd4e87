"""Density fields, regularization functionals, and the reduced gradient.

The reduced objective is J(rho) = F . u(rho) + R(rho) where u solves the
SIMP-weighted elasticity system at the physical (filtered) density.  Its
gradient uses the self-adjoint structure of compliance (the adjoint state is
-u), so no extra solve is needed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import fem
from .fem import (DisplacementField, MaterialModel, N_QP, SHAPE_AT_QP,
                  SHAPE_GRAD_AT_QP, density_at_quadrature,
                  element_energy_density, quadrature_weight,
                  scatter_quadrature_to_coeffs)
from .mesh import Mesh

# smoothing of the degenerate p-Laplacian weight for p < 2
PLAP_DELTA = 1e-8

VOLUME_TOL = 1e-10


@dataclass
class DensityField:
    """Scalar design field in [0, 1] with a volume budget gamma * |Omega|."""

    mesh: Mesh
    space: str  # "DG0" | "Q1"
    coeffs: np.ndarray
    gamma: float

    def __post_init__(self):
        if self.space not in ("DG0", "Q1"):
            raise ValueError(f"unknown density space {self.space!r}")
        n = self.mesh.n_elements if self.space == "DG0" else self.mesh.n_nodes
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (n,):
            raise ValueError("coefficient vector size mismatch")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("volume fraction must lie in (0, 1)")

    @classmethod
    def uniform(cls, mesh: Mesh, space: str, gamma: float) -> "DensityField":
        n = mesh.n_elements if space == "DG0" else mesh.n_nodes
        return cls(mesh, space, np.full(n, gamma), gamma)

    def with_coeffs(self, coeffs: np.ndarray) -> "DensityField":
        return DensityField(self.mesh, self.space, coeffs, self.gamma)


@dataclass(frozen=True)
class RegularizerSpec:
    """Choice of restriction functional added to the compliance."""

    kind: str  # "W1p" | "GinzburgLandau" | "TikhonovL2"
    epsilon: float
    p: float = 2.0

    def __post_init__(self):
        if self.kind not in ("W1p", "GinzburgLandau", "TikhonovL2"):
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if self.epsilon <= 0.0:
            raise ValueError("regularizer weight must be positive")
        if self.kind == "W1p" and not 1.0 < self.p < np.inf:
            raise ValueError("W1p exponent must lie in (1, inf)")


def mass_weights(mesh: Mesh, space: str) -> np.ndarray:
    """Lumped quadrature weights: exact for DG0, trapezoidal for Q1."""
    if space == "DG0":
        return np.full(mesh.n_elements, mesh.element_area)
    m = np.zeros(mesh.n_nodes)
    np.add.at(m, mesh.elements, mesh.element_area / 4.0)
    return m


def _gradient_at_quadrature(mesh: Mesh, coeffs: np.ndarray) -> np.ndarray:
    """(n_elements, 4, 2) gradients of a Q1 field at the Gauss points."""
    dN = SHAPE_GRAD_AT_QP.copy()  # (4 qp, 2, 4)
    dN[:, 0, :] *= 2.0 / mesh.dx
    dN[:, 1, :] *= 2.0 / mesh.dy
    vals = coeffs[mesh.elements]  # (ne, 4)
    return np.einsum("qda,ea->eqd", dN, vals)


def _require_q1(rho: DensityField, kind: str):
    if rho.space != "Q1":
        raise ValueError(f"{kind} regularization needs a W^(1,p)-conforming "
                         "(Q1) density space; DG0 has no weak gradient")


def regularizer_value(rho: DensityField, spec: Optional[RegularizerSpec]) -> float:
    if spec is None:
        return 0.0
    mesh = rho.mesh
    if spec.kind == "TikhonovL2":
        m = mass_weights(mesh, rho.space)
        return 0.5 * spec.epsilon * float(m @ rho.coeffs ** 2)
    _require_q1(rho, spec.kind)
    grad = _gradient_at_quadrature(mesh, rho.coeffs)
    g2 = np.einsum("eqd,eqd->eq", grad, grad)
    w = quadrature_weight(mesh)
    if spec.kind == "W1p":
        p = spec.p
        return spec.epsilon / p * float(w * np.sum(g2 ** (p / 2.0)))
    # Ginzburg-Landau: eps/2 |grad rho|^2 + 1/(2 eps) int rho (1 - rho),
    # lower-order term with lumped nodal quadrature
    m = mass_weights(mesh, "Q1")
    lower = float(m @ (rho.coeffs * (1.0 - rho.coeffs)))
    return 0.5 * spec.epsilon * float(w * g2.sum()) + lower / (2.0 * spec.epsilon)


def _plap_scatter(mesh: Mesh, grad: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Assemble sum_q w_q weight_q grad_q . grad(phi_i) into nodal vector."""
    dN = SHAPE_GRAD_AT_QP.copy()
    dN[:, 0, :] *= 2.0 / mesh.dx
    dN[:, 1, :] *= 2.0 / mesh.dy
    w = quadrature_weight(mesh)
    local = np.einsum("eqd,qda->ea", w * weight[:, :, None] * grad, dN)
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.elements, local)
    return out


def regularizer_gradient(rho: DensityField, spec: Optional[RegularizerSpec]) -> np.ndarray:
    """Coefficient vector g with g . eta the directional derivative at rho."""
    if spec is None:
        return np.zeros_like(rho.coeffs)
    mesh = rho.mesh
    if spec.kind == "TikhonovL2":
        m = mass_weights(mesh, rho.space)
        return spec.epsilon * m * rho.coeffs
    _require_q1(rho, spec.kind)
    grad = _gradient_at_quadrature(mesh, rho.coeffs)
    g2 = np.einsum("eqd,eqd->eq", grad, grad)
    if spec.kind == "W1p":
        p = spec.p
        if p >= 2.0:
            weight = g2 ** ((p - 2.0) / 2.0) if p != 2.0 else np.ones_like(g2)
        else:
            weight = (g2 + PLAP_DELTA ** 2) ** ((p - 2.0) / 2.0)
        return spec.epsilon * _plap_scatter(mesh, grad, weight)
    m = mass_weights(mesh, "Q1")
    grad_part = spec.epsilon * _plap_scatter(mesh, grad, np.ones_like(g2))
    return grad_part + m * (1.0 - 2.0 * rho.coeffs) / (2.0 * spec.epsilon)


def objective(u: DisplacementField, rho: DensityField, load: np.ndarray,
              spec: Optional[RegularizerSpec]) -> float:
    """Discretized objective: compliance plus regularization."""
    return fem.compliance(u, load) + regularizer_value(rho, spec)


def physical_density(rho: DensityField, filter_op) -> np.ndarray:
    """Coefficients of the filtered density (identity when no filter)."""
    if filter_op is None:
        return rho.coeffs
    return filter_op.apply(rho.coeffs)


def reduced_gradient(u: DisplacementField, rho: DensityField, filter_op,
                     mat: MaterialModel,
                     spec: Optional[RegularizerSpec]) -> np.ndarray:
    """Gradient of the reduced objective through the state equation.

    g = -F_h^T [ k'(F_h rho) |E u|^2 tested against the density basis ]
        + R'(rho); the minus sign comes from the adjoint identity u_a = -u.
    """
    mesh = rho.mesh
    phys = physical_density(rho, filter_op)
    rho_q = density_at_quadrature(mesh, rho.space, phys)
    _, dk = fem.simp_stiffness(rho_q, mat)
    edens = element_energy_density(u, mat)
    w = quadrature_weight(mesh)
    q = scatter_quadrature_to_coeffs(mesh, rho.space, w * dk * edens)
    if filter_op is not None:
        q = filter_op.apply_adjoint(q)
    return -q + regularizer_gradient(rho, spec)


def lagrangian_value(u: DisplacementField, rho: DensityField,
                     u_a: DisplacementField, load: np.ndarray,
                     mat: MaterialModel, spec: Optional[RegularizerSpec],
                     filter_op) -> float:
    """F.u + a(u, u_a; rho) - F.u_a + R(rho)."""
    mesh = rho.mesh
    phys = physical_density(rho, filter_op)
    rho_q = density_at_quadrature(mesh, rho.space, phys)
    K = fem.assemble_system(mesh, rho_q, mat)
    return (float(load @ u.coeffs) + float(u_a.coeffs @ (K @ u.coeffs))
            - float(load @ u_a.coeffs) + regularizer_value(rho, spec))
