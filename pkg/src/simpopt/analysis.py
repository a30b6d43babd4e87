"""Norms, inter-mesh errors, refinement studies, and inequality checks.

Convergence is measured against the finest level of a nested family: fields
are prolonged exactly (the spaces are nested) and the error is a norm on the
finest mesh.  The study records observed Richardson slopes but only asserts
qualitative decrease; the checkerboard index quantifies the element-scale
oscillation the restriction methods are supposed to remove.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import fem
from .fem import DisplacementField, density_at_quadrature, quadrature_weight
from .filtering import build_filter
from .mesh import Mesh, prolong_scalar, prolong_vector, refine
from .optimizer import OptimizerOptions, Problem, TrustBall, optimize
from .simp import DensityField, _gradient_at_quadrature, mass_weights

NORM_KINDS = ("Lp", "W1p-semi", "W1p", "H1")


def _magnitude_at_quadrature(mesh: Mesh, values: np.ndarray, space: str) -> np.ndarray:
    """(ne, 4) pointwise Euclidean magnitude at the Gauss points."""
    if space == "Q1v":
        comps = values.reshape(-1, 2)
        vx = density_at_quadrature(mesh, "Q1", comps[:, 0])
        vy = density_at_quadrature(mesh, "Q1", comps[:, 1])
        return np.hypot(vx, vy)
    return np.abs(density_at_quadrature(mesh, space, values))


def _grad_magnitude_at_quadrature(mesh: Mesh, values: np.ndarray,
                                  space: str) -> np.ndarray:
    if space == "DG0":
        raise ValueError("DG0 fields have no weak gradient")
    if space == "Q1v":
        comps = values.reshape(-1, 2)
        gx = _gradient_at_quadrature(mesh, comps[:, 0])
        gy = _gradient_at_quadrature(mesh, comps[:, 1])
        g2 = np.einsum("eqd,eqd->eq", gx, gx) + np.einsum("eqd,eqd->eq", gy, gy)
        return np.sqrt(g2)
    g = _gradient_at_quadrature(mesh, values)
    return np.sqrt(np.einsum("eqd,eqd->eq", g, g))


def _nodal_magnitude(values: np.ndarray, space: str) -> np.ndarray:
    if space == "Q1v":
        comps = values.reshape(-1, 2)
        return np.hypot(comps[:, 0], comps[:, 1])
    return np.abs(values)


def norm(mesh: Mesh, values: np.ndarray, space: str, kind: str = "Lp",
         p: float = 2.0) -> float:
    """Lp / W1p-seminorm / full W1p / H1 norm of a DG0, Q1 or vector-Q1 field.

    ``space`` is "DG0", "Q1", or "Q1v" (flat vector with 2 dofs per node).
    Finite p uses element 2x2 Gauss quadrature; p = inf takes the nodal
    (or elementwise) maximum.
    """
    if kind not in NORM_KINDS:
        raise ValueError(f"unknown norm kind {kind!r}")
    if space not in ("DG0", "Q1", "Q1v"):
        raise ValueError(f"unknown space {space!r}")
    values = np.asarray(values, dtype=float)
    if not 1.0 <= p:
        raise ValueError("norm exponent must satisfy p >= 1")
    w = quadrature_weight(mesh)

    if kind == "H1":
        l2 = norm(mesh, values, space, "Lp", 2.0)
        semi = norm(mesh, values, space, "W1p-semi", 2.0)
        return float(np.hypot(l2, semi))

    if kind == "W1p":
        if np.isinf(p):
            return max(norm(mesh, values, space, "Lp", p),
                       norm(mesh, values, space, "W1p-semi", p))
        lp = norm(mesh, values, space, "Lp", p)
        semi = norm(mesh, values, space, "W1p-semi", p)
        return float((lp ** p + semi ** p) ** (1.0 / p))

    if kind == "W1p-semi":
        g = _grad_magnitude_at_quadrature(mesh, values, space)
        if np.isinf(p):
            return float(g.max()) if g.size else 0.0
        return float((w * np.sum(g ** p)) ** (1.0 / p))

    # Lp
    if np.isinf(p):
        return float(np.max(_nodal_magnitude(values, space)))
    mags = _magnitude_at_quadrature(mesh, values, space)
    return float((w * np.sum(mags ** p)) ** (1.0 / p))


def error_between(source_mesh: Mesh, source_values: np.ndarray,
                  target_mesh: Mesh, target_values: np.ndarray,
                  space: str, kind: str = "Lp", p: float = 2.0) -> float:
    """norm(prolong(source) - target) on the (nested, finer) target mesh."""
    if space == "Q1v":
        pro = prolong_vector(source_mesh, source_values, target_mesh)
    else:
        pro = prolong_scalar(source_mesh, source_values, space, target_mesh)
    return norm(target_mesh, pro - np.asarray(target_values, dtype=float),
                space, kind, p)


def checkerboard_index(rho: DensityField) -> float:
    """Mean interior deviation of the density from its 4-neighbor average.

    A constant field scores 0, the exact 0/1 checkerboard scores 1, and any
    field with a bounded gradient scores O(h).
    """
    mesh = rho.mesh
    if rho.space == "Q1":
        vals = rho.coeffs[mesh.elements].mean(axis=1)  # element midpoint values
    else:
        vals = rho.coeffs
    grid = vals.reshape(mesh.ny, mesh.nx)
    if mesh.nx < 3 or mesh.ny < 3:
        return 0.0
    inner = grid[1:-1, 1:-1]
    nbr = 0.25 * (grid[:-2, 1:-1] + grid[2:, 1:-1] + grid[1:-1, :-2] + grid[1:-1, 2:])
    return float(np.mean(np.abs(inner - nbr)))


@dataclass
class ConvergenceReport:
    """Per-level results of a warm-started refinement study."""

    hs: list = field(default_factory=list)
    objectives: list = field(default_factory=list)
    compliances: list = field(default_factory=list)
    volumes: list = field(default_factory=list)
    checkerboard: list = field(default_factory=list)
    converged: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    errors: dict = field(default_factory=dict)          # name -> per-level list
    observed_orders: dict = field(default_factory=dict)  # name -> slope list
    failed_levels: list = field(default_factory=list)
    densities: list = field(default_factory=list)        # DensityField per level
    displacements: list = field(default_factory=list)
    filtered_q1: list = field(default_factory=list)      # nodal F_h(rho_h), if filtered
    meshes: list = field(default_factory=list)

    def error_names(self):
        return sorted(self.errors)

    def to_csv(self) -> str:
        names = self.error_names()
        header = ["level", "h", "objective", "compliance", "volume",
                  "checkerboard", "converged", "iterations"] + names
        rows = [",".join(header)]
        for i in range(len(self.hs)):
            row = [str(i), repr(self.hs[i]), repr(self.objectives[i]),
                   repr(self.compliances[i]), repr(self.volumes[i]),
                   repr(self.checkerboard[i]), str(int(self.converged[i])),
                   str(self.iterations[i])]
            for name in names:
                errs = self.errors[name]
                row.append(repr(errs[i]) if i < len(errs) else "")
            rows.append(",".join(row))
        return "\n".join(rows) + "\n"

    def to_text(self) -> str:
        names = self.error_names()
        lines = ["refinement study (errors measured against the finest level)"]
        head = f"{'h':>12} {'objective':>14} {'kappa':>10}" + \
            "".join(f" {name:>14}" for name in names)
        lines.append(head)
        for i in range(len(self.hs)):
            row = f"{self.hs[i]:12.5g} {self.objectives[i]:14.6g} " \
                f"{self.checkerboard[i]:10.4g}"
            for name in names:
                errs = self.errors[name]
                row += f" {errs[i]:14.6g}" if i < len(errs) else " " * 15
            lines.append(row)
        for name in names:
            slopes = self.observed_orders.get(name, [])
            if slopes:
                lines.append(f"observed order {name}: " +
                             ", ".join(f"{s:.2f}" for s in slopes))
        if self.failed_levels:
            lines.append(f"non-converged levels: {self.failed_levels}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        from .vtkio import atomic_write
        atomic_write(path, self.to_csv())


def _observed_orders(errors: list) -> list:
    return [float(np.log2(errors[i] / errors[i + 1]))
            for i in range(len(errors) - 1) if errors[i + 1] > 0.0]


def monotone_decreasing(values, allowed_violations: int = 1) -> bool:
    """True when the sequence decreases with at most the allowed exceptions."""
    bad = sum(1 for i in range(len(values) - 1) if values[i + 1] > values[i])
    return bad <= allowed_violations


def convergence_study(problem_factory: Callable[[Mesh], Problem],
                      base_mesh: Mesh, n_levels: int,
                      opts: OptimizerOptions = OptimizerOptions(),
                      trust_radius: Optional[float] = None) -> ConvergenceReport:
    """Warm-started optimization across a nested family, coarsest to finest.

    The coarsest level starts from the uniform density; each finer level
    starts from the prolonged optimum of the previous one, optionally with a
    trust ball of the given radius around the warm start.  Errors against the
    finest level are recorded for the quantities the configured restriction
    controls (W1p density error under W1p regularization, L2/Linf/W12 of the
    filtered field under filtering).
    """
    if n_levels < 3:
        raise ValueError("a refinement study needs at least 3 levels")

    meshes = [base_mesh]
    for _ in range(n_levels - 1):
        meshes.append(refine(meshes[-1]))

    report = ConvergenceReport(meshes=meshes)
    warm = None
    reg = None
    filter_spec = None
    space = None
    for level, mesh in enumerate(meshes):
        problem = problem_factory(mesh)
        space = problem.space
        reg = problem.reg
        if problem.filter_op is not None:
            filter_spec = problem.filter_op.spec
        if warm is None:
            init = DensityField.uniform(mesh, space, problem.gamma)
        else:
            init = DensityField(mesh, space, warm, problem.gamma)
        run_opts = opts
        if trust_radius is not None and warm is not None:
            run_opts = replace(opts, trust_center=TrustBall(
                center=init.coeffs.copy(), radius=trust_radius))
        result = optimize(problem, init, run_opts)

        report.hs.append(mesh.h)
        report.objectives.append(result.objective_history[-1]
                                 if result.objective_history else np.nan)
        report.compliances.append(result.compliance_history[-1]
                                  if result.compliance_history else np.nan)
        report.volumes.append(result.volume_history[-1]
                              if result.volume_history else np.nan)
        if problem.filter_op is not None:
            phys = result.density.with_coeffs(
                problem.filter_op.apply(result.density.coeffs))
            report.checkerboard.append(checkerboard_index(phys))
        else:
            report.checkerboard.append(checkerboard_index(result.density))
        report.converged.append(result.converged)
        report.iterations.append(result.iterations)
        report.densities.append(result.density)
        report.displacements.append(result.displacement)
        if not result.converged:
            report.failed_levels.append(level)

        if problem.filter_op is not None:
            nodal_op = build_filter(mesh, space, problem.filter_op.spec,
                                    output_space="Q1")
            report.filtered_q1.append(nodal_op.apply(result.density.coeffs))

        if level + 1 < len(meshes):
            warm = prolong_scalar(mesh, result.density.coeffs, space, meshes[level + 1])

    fine = meshes[-1]
    rho_ref = report.densities[-1].coeffs
    u_ref = report.displacements[-1].coeffs

    def record(name, per_level_errors):
        report.errors[name] = per_level_errors
        report.observed_orders[name] = _observed_orders(per_level_errors)

    record("u_H1", [error_between(meshes[i], report.displacements[i].coeffs,
                                  fine, u_ref, "Q1v", "H1")
                    for i in range(n_levels - 1)])
    for p in (1.0, 2.0, 4.0):
        record(f"rho_L{p:g}",
               [error_between(meshes[i], report.densities[i].coeffs,
                              fine, rho_ref, space, "Lp", p)
                for i in range(n_levels - 1)])
    if reg is not None and reg.kind == "W1p":
        record(f"rho_W1{reg.p:g}",
               [error_between(meshes[i], report.densities[i].coeffs,
                              fine, rho_ref, "Q1", "W1p", reg.p)
                for i in range(n_levels - 1)])
    if filter_spec is not None and report.filtered_q1:
        f_ref = report.filtered_q1[-1]
        record("frho_Linf",
               [error_between(meshes[i], report.filtered_q1[i],
                              fine, f_ref, "Q1", "Lp", np.inf)
                for i in range(n_levels - 1)])
        record("frho_W12",
               [error_between(meshes[i], report.filtered_q1[i],
                              fine, f_ref, "Q1", "W1p", 2.0)
                for i in range(n_levels - 1)])
    return report


@dataclass(frozen=True)
class PvecReport:
    p: float
    trials: int
    max_violation: float  # expected <= 0 up to the stated slack

    @property
    def passed(self) -> bool:
        return self.max_violation <= 1e-12


def pvec_inequality_check(p: float, trials: int, seed: int = 0,
                          dim: int = 2, scale: float = 3.0) -> PvecReport:
    """Monte-Carlo check of the monotonicity inequalities of the p-Laplacian.

    For p >= 2:  (|b|^{p-2} b - |a|^{p-2} a) . (b - a) >= 2^{2-p} |b - a|^p.
    For 1 < p < 2 the right-hand side is
    (p - 1) (1 + |a|^2 + |b|^2)^{(p-2)/2} |b - a|^2.
    Returns the worst rhs - lhs over random pairs (negative means the
    inequality held with margin).
    """
    if not 1.0 < p < np.inf:
        raise ValueError("p must lie in (1, inf)")
    if trials < 1:
        raise ValueError("need at least one trial")
    rng = np.random.default_rng(seed)
    a = rng.normal(scale=scale, size=(trials, dim))
    b = rng.normal(scale=scale, size=(trials, dim))
    # include degenerate pairs: a = b and a = 0
    a[0] = b[0]
    a[1] = 0.0

    na2 = np.einsum("ij,ij->i", a, a)
    nb2 = np.einsum("ij,ij->i", b, b)
    # |v|^{p-2} v -> 0 as v -> 0 for p > 1; guard the 0^negative power
    with np.errstate(divide="ignore"):
        fa = np.where(na2 > 0.0, na2 ** ((p - 2.0) / 2.0), 0.0)[:, None] * a
        fb = np.where(nb2 > 0.0, nb2 ** ((p - 2.0) / 2.0), 0.0)[:, None] * b
    d = b - a
    lhs = np.einsum("ij,ij->i", fb - fa, d)
    nd2 = np.einsum("ij,ij->i", d, d)
    if p >= 2.0:
        rhs = 2.0 ** (2.0 - p) * nd2 ** (p / 2.0)
    else:
        rhs = (p - 1.0) * (1.0 + na2 + nb2) ** ((p - 2.0) / 2.0) * nd2
    return PvecReport(p=p, trials=trials,
                      max_violation=float(np.max(rhs - lhs)))
