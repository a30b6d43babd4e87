"""Discrete convolution density filter with cone kernel.

The continuous filter is F(rho)(x) = int_Omega f(x - y) rho(y) dy with the
unit-mass cone kernel f(z) = c max(0, 1 - |z|/r), c = 3 / (pi r^2).  The
discrete operator composes element quadrature in y with nodal interpolation
of the result (element midpoints for DG0, mesh nodes for Q1), giving a sparse
nonnegative matrix W acting on density coefficients.

With the "truncate" boundary policy the kernel keeps its global
normalization, so rows near the boundary sum to less than one.  The discrete
normalization constant is computed from the same quadrature lattice extended
periodically, which pins interior row sums to one and keeps every row sum
<= 1 up to roundoff; it agrees with 3 / (pi r^2) to O(h^2).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from . import fem
from .mesh import Mesh, prolong_scalar

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class FilterSpec:
    kind: str = "Cone"  # "Cone"
    radius: float = 0.1
    boundary_policy: str = "Truncate"  # "Truncate" | "Renormalize"

    def __post_init__(self):
        if self.kind != "Cone":
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if self.radius <= 0.0:
            raise ValueError("filter radius must be positive")
        if self.boundary_policy not in ("Truncate", "Renormalize"):
            raise ValueError(f"unknown boundary policy {self.boundary_policy!r}")

    @property
    def kernel_constant(self) -> float:
        """Continuous normalization: c = 3 / (pi r^2) gives unit L1 mass."""
        return 3.0 / (np.pi * self.radius ** 2)

    def kernel(self, z: np.ndarray) -> np.ndarray:
        """Evaluate the cone kernel at displacement vectors z (..., 2)."""
        d = np.linalg.norm(np.asarray(z, dtype=float), axis=-1)
        return self.kernel_constant * np.maximum(0.0, 1.0 - d / self.radius)


@dataclass
class FilterOperator:
    """Sparse realization of the projected filter and its adjoint."""

    matrix: sp.csr_matrix
    mesh: Mesh
    space: str
    spec: FilterSpec

    def apply(self, coeffs: np.ndarray) -> np.ndarray:
        return self.matrix @ coeffs

    def apply_adjoint(self, coeffs: np.ndarray) -> np.ndarray:
        return self.matrix.T @ coeffs

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def export_coo(self, path):
        """Write (row, col, value) triplets, one per line."""
        coo = self.matrix.tocoo()
        with open(path, "w") as fh:
            for r, c, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")


def _evaluation_points(mesh: Mesh, space: str) -> np.ndarray:
    if space == "DG0":
        return mesh.element_centers()
    if space == "Q1":
        return mesh.node_coords
    raise ValueError(f"unknown density space {space!r}")


def _unnormalized_cone(dists: np.ndarray, r: float) -> np.ndarray:
    return np.maximum(0.0, 1.0 - dists / r)


def _lattice_normalization(mesh: Mesh, space: str, r: float) -> float:
    """Discrete kernel mass over the infinite quadrature lattice.

    Gauss points of the uniform mesh form a lattice that is translation
    invariant per evaluation-point class (element midpoints vs nodes), so the
    constant is computed once around a single virtual point.
    """
    dx, dy = mesh.dx, mesh.dy
    g = dx / (2.0 * np.sqrt(3.0)), dy / (2.0 * np.sqrt(3.0))
    nix = int(np.ceil(r / dx)) + 1
    niy = int(np.ceil(r / dy)) + 1
    # element-center offsets relative to the evaluation point
    if space == "DG0":
        cx = np.arange(-nix, nix + 1) * dx
        cy = np.arange(-niy, niy + 1) * dy
    else:
        cx = (np.arange(-nix, nix + 1) + 0.5) * dx
        cy = (np.arange(-niy, niy + 1) + 0.5) * dy
    ox = (cx[:, None] + np.array([-g[0], g[0]])[None, :]).ravel()
    oy = (cy[:, None] + np.array([-g[1], g[1]])[None, :]).ravel()
    X, Y = np.meshgrid(ox, oy)
    d = np.hypot(X, Y).ravel()
    w = fem.quadrature_weight(mesh)
    return float(w * _unnormalized_cone(d, r).sum())


def build_filter(mesh: Mesh, density_space: str, spec: FilterSpec,
                 output_space: str = None) -> FilterOperator:
    """Assemble W with W_ij = f(x_i - y_j) w_j composed with the density basis.

    ``output_space`` selects the evaluation points for the filtered field
    (defaults to the density space); ``output_space="Q1"`` on a DG0 density
    yields the conforming nodal representation of the filtered field.
    """
    r = spec.radius
    if output_space is None:
        output_space = density_space
    if r < 2.0 * mesh.h:
        warnings.warn(f"filter radius {r:.3g} < 2h = {2 * mesh.h:.3g}: "
                      "filter is under-resolved", stacklevel=2)

    qpts = fem.quadrature_points(mesh).reshape(-1, 2)
    w = fem.quadrature_weight(mesh)
    xpts = _evaluation_points(mesh, output_space)

    tree = cKDTree(qpts)
    neighbor_lists = tree.query_ball_point(xpts, r)
    rows = np.repeat(np.arange(len(xpts)), [len(nb) for nb in neighbor_lists])
    cols = np.concatenate([np.asarray(nb, dtype=int) for nb in neighbor_lists]) \
        if len(rows) else np.empty(0, dtype=int)
    dists = np.linalg.norm(xpts[rows] - qpts[cols], axis=1)
    data = w * _unnormalized_cone(dists, r)

    nq = qpts.shape[0]
    kernel_mat = sp.csr_matrix((data, (rows, cols)), shape=(len(xpts), nq))
    basis = fem.quadrature_basis_matrix(mesh, density_space)
    W = (kernel_mat @ basis).tocsr()

    sums = np.asarray(W.sum(axis=1)).ravel()
    if spec.boundary_policy == "Renormalize":
        if np.any(sums <= 0.0):
            raise ValueError("filter row with zero mass; radius too small")
        W = sp.diags(1.0 / sums) @ W
    else:
        norm = _lattice_normalization(mesh, output_space, r)
        if norm <= 0.0:
            raise ValueError(f"filter radius {r:.3g} smaller than the "
                             "quadrature spacing; no mass in any row")
        W = W / norm
    return FilterOperator(matrix=W.tocsr(), mesh=mesh, space=density_space, spec=spec)


def _apply_filter_matrix_free(mesh: Mesh, spec: FilterSpec, output_space: str,
                              values_at_qp: np.ndarray,
                              chunk: int = 512) -> np.ndarray:
    """Filter a quadrature-point field without assembling the sparse matrix.

    Same quadrature and normalization as build_filter; used for reference
    meshes where the assembled operator would be too large.
    """
    r = spec.radius
    qpts = fem.quadrature_points(mesh).reshape(-1, 2)
    w = fem.quadrature_weight(mesh)
    xpts = _evaluation_points(mesh, output_space)
    tree = cKDTree(qpts)
    out = np.empty(len(xpts))
    if spec.boundary_policy == "Truncate":
        norm = _lattice_normalization(mesh, output_space, r)
    for i0 in range(0, len(xpts), chunk):
        pts = xpts[i0:i0 + chunk]
        neighbor_lists = tree.query_ball_point(pts, r)
        for k, nb in enumerate(neighbor_lists):
            idx = np.asarray(nb, dtype=int)
            kv = w * _unnormalized_cone(
                np.linalg.norm(qpts[idx] - pts[k], axis=1), r)
            if spec.boundary_policy == "Renormalize":
                out[i0 + k] = (kv @ values_at_qp[idx]) / kv.sum()
            else:
                out[i0 + k] = (kv @ values_at_qp[idx]) / norm
    return out


# ---------------------------------------------------------------------------
# numerical checkers for the filter assumptions
# ---------------------------------------------------------------------------

@dataclass
class FilterCheckReport:
    """Per-assumption surrogate quantities across a nested mesh family."""

    levels: list = field(default_factory=list)          # h per level
    sup_value: list = field(default_factory=list)       # (F1)/(F6): max |F rho|
    sup_gradient: list = field(default_factory=list)    # (F1)/(F6): max grad magnitude
    gradient_bound: float = 0.0                          # analytic bound 3 / r
    box_violation: list = field(default_factory=list)   # (F2)
    linearity_error: list = field(default_factory=list)  # (F7)
    interpolation_errors: dict = field(default_factory=dict)  # (F8): p -> [err per level]
    interpolation_orders: dict = field(default_factory=dict)  # (F8): p -> [slopes]
    oscillation_errors: list = field(default_factory=list)    # (F4) surrogate
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def _discrete_max_gradient(mesh: Mesh, space: str, coeffs: np.ndarray) -> float:
    if space == "Q1":
        from .simp import _gradient_at_quadrature
        grad = _gradient_at_quadrature(mesh, coeffs)
        return float(np.max(np.linalg.norm(grad, axis=-1)))
    grid = coeffs.reshape(mesh.ny, mesh.nx)
    gx = np.abs(np.diff(grid, axis=1)) / mesh.dx
    gy = np.abs(np.diff(grid, axis=0)) / mesh.dy
    mx = gx.max() if gx.size else 0.0
    my = gy.max() if gy.size else 0.0
    return float(max(mx, my))


def _lp_norm_dg0(mesh: Mesh, values: np.ndarray, p: float) -> float:
    if np.isinf(p):
        return float(np.max(np.abs(values)))
    return float((mesh.element_area * np.sum(np.abs(values) ** p)) ** (1.0 / p))


def check_assumptions(meshes: list[Mesh], spec: FilterSpec, space: str = "Q1",
                      n_random: int = 50, seed: int = 0) -> FilterCheckReport:
    """Run the (F1)-(F8) numerical surrogates on a nested mesh family."""
    if len(meshes) < 3:
        raise ValueError("need at least 3 nested meshes")
    rng = np.random.default_rng(seed)
    report = FilterCheckReport(gradient_bound=3.0 / spec.radius)

    # reference for (F8): the filtered smooth field on a mesh one level
    # finer than the finest tested level stands in for F(eta); computed
    # matrix-free because the reference operator would not fit in memory
    from .mesh import refine
    ref_mesh = refine(meshes[-1])

    def smooth(x, y):
        Lx, Ly = ref_mesh.domain.width, ref_mesh.domain.height
        return np.clip(np.sin(np.pi * x / Lx) * np.sin(np.pi * y / Ly), 0.0, 1.0)

    ref_qp = fem.quadrature_points(ref_mesh).reshape(-1, 2)
    eta_qp = smooth(ref_qp[:, 0], ref_qp[:, 1])
    f_ref = _apply_filter_matrix_free(ref_mesh, spec, "Q1", eta_qp)

    ps = (1.0, 2.0, np.inf)
    for p in ps:
        report.interpolation_errors[p] = []

    for mesh in meshes:
        op = build_filter(mesh, space, spec)
        report.levels.append(mesh.h)
        n = mesh.n_elements if space == "DG0" else mesh.n_nodes

        sup_v = 0.0
        sup_g = 0.0
        box_bad = 0.0
        for _ in range(n_random):
            rho = rng.uniform(0.0, 1.0, size=n)
            fr = op.apply(rho)
            sup_v = max(sup_v, float(np.max(np.abs(fr))))
            sup_g = max(sup_g, _discrete_max_gradient(mesh, space, fr))
            box_bad = max(box_bad, float(max(0.0, fr.max() - 1.0, -fr.min())))
        report.sup_value.append(sup_v)
        report.sup_gradient.append(sup_g)
        report.box_violation.append(box_bad)
        if box_bad > ROW_SUM_TOL:
            report.failures.append(f"(F2) box violation {box_bad:.3e} at h={mesh.h:.4g}")
        if sup_g > report.gradient_bound * 1.1:
            report.failures.append(
                f"(F1)/(F6) gradient {sup_g:.3e} exceeds bound "
                f"{report.gradient_bound:.3e} at h={mesh.h:.4g}")

        # (F7) linearity of the matrix action
        x1 = rng.uniform(0.0, 1.0, size=n)
        x2 = rng.uniform(0.0, 1.0, size=n)
        a, b = 0.7, -1.3
        lin = np.max(np.abs(op.apply(a * x1 + b * x2)
                            - a * op.apply(x1) - b * op.apply(x2)))
        report.linearity_error.append(float(lin))
        if lin > 1e-13:
            report.failures.append(f"(F7) linearity error {lin:.3e} at h={mesh.h:.4g}")

        # (F8) interpolation error against the fine reference; coarse sample
        # points are nodes of the reference mesh because the family is nested
        diff, weights = _interpolation_residual(mesh, ref_mesh, f_ref, space)
        for p in ps:
            if np.isinf(p):
                err = float(np.max(np.abs(diff)))
            else:
                err = float((weights @ np.abs(diff) ** p) ** (1.0 / p))
            report.interpolation_errors[p].append(err)

        # (F4) surrogate: mesh-frequency oscillation around its mean
        osc = _checkerboard_values(mesh, space)
        err_osc = _lp_filtered_oscillation(mesh, op, osc, space)
        report.oscillation_errors.append(err_osc)

    for p in ps:
        errs = report.interpolation_errors[p]
        orders = [float(np.log2(errs[i] / errs[i + 1]))
                  for i in range(len(errs) - 1) if errs[i + 1] > 0]
        report.interpolation_orders[p] = orders
        if orders and min(orders) < 0.9:
            report.failures.append(f"(F8) observed order {min(orders):.2f} < 0.9 for p={p}")

    for i in range(len(report.oscillation_errors) - 1):
        if report.oscillation_errors[i + 1] > report.oscillation_errors[i]:
            report.failures.append("(F4) oscillation response not decreasing under refinement")
            break
    return report


def _interpolation_residual(mesh: Mesh, ref_mesh: Mesh, f_ref: np.ndarray,
                            space: str):
    """Pi_h f_ref minus f_ref on the reference mesh, with Lp quadrature weights.

    Q1: nodal interpolation, residual at reference nodes.  DG0: element
    midpoint values, residual at reference element centers.
    """
    from .simp import mass_weights
    sx = ref_mesh.nx // mesh.nx
    sy = ref_mesh.ny // mesh.ny
    grid = f_ref.reshape(ref_mesh.ny + 1, ref_mesh.nx + 1)
    if space == "Q1":
        sampled = grid[::sy, ::sx].ravel()
        interp = prolong_scalar(mesh, sampled, "Q1", ref_mesh)
        return interp - f_ref, mass_weights(ref_mesh, "Q1")
    # DG0: coarse midpoints are reference nodes when the ratio is even
    if sx % 2 or sy % 2:
        raise ValueError("DG0 interpolation check needs an even refinement ratio")
    sampled = grid[sy // 2::sy, sx // 2::sx].ravel()
    interp = prolong_scalar(mesh, sampled, "DG0", ref_mesh)
    # reference field at reference element centers (bilinear midpoint value)
    centers = 0.25 * (grid[:-1, :-1] + grid[:-1, 1:] + grid[1:, :-1] + grid[1:, 1:])
    return interp - centers.ravel(), mass_weights(ref_mesh, "DG0")


def _checkerboard_values(mesh: Mesh, space: str) -> np.ndarray:
    if space == "DG0":
        ii, jj = np.meshgrid(np.arange(mesh.nx), np.arange(mesh.ny))
        return ((ii + jj) % 2).astype(float).ravel()
    ii, jj = np.meshgrid(np.arange(mesh.nx + 1), np.arange(mesh.ny + 1))
    return ((ii + jj) % 2).astype(float).ravel()


def _lp_filtered_oscillation(mesh: Mesh, op: FilterOperator, osc: np.ndarray,
                             space: str) -> float:
    """L2 norm of F_h applied to the zero-mean oscillation."""
    centered = osc - osc.mean()
    out = op.apply(centered)
    if space == "DG0":
        return _lp_norm_dg0(mesh, out, 2.0)
    from .simp import mass_weights
    m = mass_weights(mesh, "Q1")
    return float(np.sqrt(m @ out ** 2))
