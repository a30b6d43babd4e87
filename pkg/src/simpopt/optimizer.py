"""Projected gradient descent for the discretized compliance problem.

Fixed points of the projected gradient map are exactly the discrete
first-order variational inequality, so the optimality residual
||rho - P(rho - s g)|| / s is the natural stopping quantity.  The feasible
set is {0 <= rho <= 1, v . rho <= gamma |Omega|} with v the gradient of the
filtered volume; the projection is mass-weighted and the volume multiplier is
found by bisection only when the clipped point is infeasible.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import fem, simp
from .fem import DisplacementField, MaterialModel, SolverError, Traction
from .filtering import FilterOperator, FilterSpec, build_filter
from .mesh import Mesh
from .simp import DensityField, RegularizerSpec, mass_weights

VOLUME_TOL = 1e-12
_MAX_BACKTRACKS = 40


class ProjectionError(RuntimeError):
    """Feasible projection could not be computed."""


@dataclass(frozen=True)
class TrustBall:
    """Hard ball around a reference density for basin-of-attraction runs."""

    center: np.ndarray
    radius: float            # the ball has radius radius / 2
    norm: str = "L2"         # "L2" | "W1p"
    p: float = 2.0


@dataclass(frozen=True)
class OptimizerOptions:
    max_iters: int = 500
    step0: Optional[float] = None  # None: first raw step scaled to the move limit
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    tol_residual: float = 1e-4     # relative to the initial residual
    tol_objective_rel: float = 1e-8
    move_limit: float = 0.2
    trust_center: Optional[TrustBall] = None
    tikhonov_eps: float = 0.0

    def __post_init__(self):
        if min(self.tol_residual, self.tol_objective_rel) <= 0.0:
            raise ValueError("tolerances must be positive")
        if not 0.0 < self.move_limit <= 1.0:
            raise ValueError("move_limit must lie in (0, 1]")
        if not 0.0 < self.backtrack < 1.0 or not 0.0 < self.armijo_c < 1.0:
            raise ValueError("armijo_c and backtrack must lie in (0, 1)")
        if self.tikhonov_eps < 0.0:
            raise ValueError("tikhonov_eps must be nonnegative")


@dataclass
class OptResult:
    density: DensityField
    displacement: DisplacementField
    objective_history: list = field(default_factory=list)
    compliance_history: list = field(default_factory=list)
    regularizer_history: list = field(default_factory=list)
    residual_history: list = field(default_factory=list)
    volume_history: list = field(default_factory=list)
    step_history: list = field(default_factory=list)
    basin_exit_history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    basin_exit: bool = False
    message: str = ""
    perturbed_objective: Optional[float] = None
    unperturbed_objective: Optional[float] = None

    def write_csv(self, path):
        rows = ["iter,objective,compliance,regularizer,volume,residual,step,basin_exit"]
        for i in range(len(self.objective_history)):
            rows.append(",".join([
                str(i),
                repr(self.objective_history[i]),
                repr(self.compliance_history[i]),
                repr(self.regularizer_history[i]),
                repr(self.volume_history[i]),
                repr(self.residual_history[i]),
                repr(self.step_history[i]),
                str(int(self.basin_exit_history[i])),
            ]))
        text = "\n".join(rows) + "\n"
        from .vtkio import atomic_write
        atomic_write(path, text)


@dataclass
class Problem:
    """One discretized compliance-minimization instance."""

    mesh: Mesh
    mat: MaterialModel
    load: np.ndarray
    gamma: float
    space: str = "DG0"
    filter_op: Optional[FilterOperator] = None
    reg: Optional[RegularizerSpec] = None

    @property
    def domain_area(self) -> float:
        return self.mesh.domain.area

    def volume_gradient(self) -> np.ndarray:
        """Gradient v of int F(rho): v . rho is the constrained volume."""
        m = mass_weights(self.mesh, self.space)
        if self.filter_op is None:
            return m
        return self.filter_op.apply_adjoint(m)

    def mass(self) -> np.ndarray:
        return mass_weights(self.mesh, self.space)


def make_problem(mesh: Mesh, mat: MaterialModel, traction: Traction,
                 gamma: float, space: str = "DG0",
                 filter_spec: Optional[FilterSpec] = None,
                 reg: Optional[RegularizerSpec] = None) -> Problem:
    load = fem.assemble_load(mesh, traction)
    fop = build_filter(mesh, space, filter_spec) if filter_spec is not None else None
    return Problem(mesh=mesh, mat=mat, load=load, gamma=gamma, space=space,
                   filter_op=fop, reg=reg)


def solve_state(problem: Problem, coeffs: np.ndarray) -> DisplacementField:
    rho = DensityField(problem.mesh, problem.space, coeffs, problem.gamma)
    phys = simp.physical_density(rho, problem.filter_op)
    rho_q = fem.density_at_quadrature(problem.mesh, problem.space, phys)
    K = fem.assemble_system(problem.mesh, rho_q, problem.mat)
    return fem.solve_displacement(K, problem.load, problem.mesh)


def evaluate(problem: Problem, coeffs: np.ndarray, tikhonov_eps: float = 0.0):
    """Reduced objective with parts: (J, u, compliance, regularizer)."""
    rho = DensityField(problem.mesh, problem.space, coeffs, problem.gamma)
    u = solve_state(problem, coeffs)
    comp = fem.compliance(u, problem.load)
    reg = simp.regularizer_value(rho, problem.reg)
    J = comp + reg
    if tikhonov_eps > 0.0:
        m = problem.mass()
        J += 0.5 * tikhonov_eps * float(m @ coeffs ** 2)
    return J, u, comp, reg


def reduced_gradient(problem: Problem, coeffs: np.ndarray, u: DisplacementField,
                     tikhonov_eps: float = 0.0) -> np.ndarray:
    rho = DensityField(problem.mesh, problem.space, coeffs, problem.gamma)
    g = simp.reduced_gradient(u, rho, problem.filter_op, problem.mat, problem.reg)
    if tikhonov_eps > 0.0:
        g = g + tikhonov_eps * problem.mass() * coeffs
    return g


def _project_box_volume(target: np.ndarray, lower: np.ndarray, upper: np.ndarray,
                        v: np.ndarray, m: np.ndarray, budget: float,
                        area: float) -> np.ndarray:
    """Mass-weighted projection onto {lower <= x <= upper, v . x <= budget}."""
    x = np.clip(target, lower, upper)
    if v @ x <= budget + VOLUME_TOL * area:
        return x

    def vol(lam):
        return v @ np.clip(target - lam * v / m, lower, upper) - budget

    # beyond lam_max every variable sits at its lower bound
    pos = v > 0.0
    if not pos.any() or v @ lower > budget + VOLUME_TOL * area:
        raise ProjectionError(
            f"volume budget {budget:.3e} unreachable "
            f"(minimum attainable {v @ lower:.3e})")
    lam_max = float(np.max((target[pos] - lower[pos]) * m[pos] / v[pos]))
    lo, hi = 0.0, max(lam_max, 1.0)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if vol(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * max(1.0, hi):
            break
    x = np.clip(target - hi * v / m, lower, upper)
    # polish toward |v.x - budget| <= tol * |Omega| when the constraint is active
    if abs(v @ x - budget) > VOLUME_TOL * area:
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            val = vol(mid)
            if val > 0.0:
                lo = mid
            else:
                hi = mid
            if abs(val) <= VOLUME_TOL * area:
                return np.clip(target - mid * v / m, lower, upper)
    return x


def project_feasible(coeffs: np.ndarray, filter_op, gamma: float, mesh: Mesh,
                     space: str = "DG0") -> np.ndarray:
    """Project onto the box and filtered-volume constraint set."""
    if gamma <= 0.0:
        raise ProjectionError("volume fraction must be positive")
    if not np.all(np.isfinite(coeffs)):
        raise ProjectionError("non-finite density coefficients")
    m = mass_weights(mesh, space)
    v = m if filter_op is None else filter_op.apply_adjoint(m)
    budget = gamma * mesh.domain.area
    lower = np.zeros_like(coeffs)
    upper = np.ones_like(coeffs)
    return _project_box_volume(coeffs, lower, upper, v, m, budget, mesh.domain.area)


def optimality_residual(rho: DensityField, gradient: np.ndarray, filter_op,
                        gamma: float, mesh: Mesh, step: float = 1.0) -> float:
    """Mass-weighted L2 distance to the projected gradient fixed point."""
    proj = project_feasible(rho.coeffs - step * gradient, filter_op, gamma,
                            mesh, rho.space)
    m = mass_weights(mesh, rho.space)
    return float(np.sqrt(m @ (rho.coeffs - proj) ** 2)) / step


def _ball_distance(problem: Problem, coeffs: np.ndarray, ball: TrustBall) -> float:
    diff = coeffs - ball.center
    m = problem.mass()
    d2 = float(m @ diff ** 2)
    if ball.norm == "L2":
        return np.sqrt(d2)
    rho_diff = DensityField(problem.mesh, problem.space, np.abs(diff), problem.gamma)
    grad = simp._gradient_at_quadrature(problem.mesh, diff)
    gp = np.einsum("eqd,eqd->eq", grad, grad) ** (ball.p / 2.0)
    w = fem.quadrature_weight(problem.mesh)
    semi_p = float(w * gp.sum())
    lp = float(m @ np.abs(diff) ** ball.p)
    return (lp + semi_p) ** (1.0 / ball.p)


def optimize(problem: Problem, init: DensityField,
             opts: OptimizerOptions = OptimizerOptions()) -> OptResult:
    """Projected gradient descent with Armijo backtracking and move limit."""
    mesh = problem.mesh
    m = problem.mass()
    v = problem.volume_gradient()
    budget = problem.gamma * problem.domain_area
    area = problem.domain_area

    coeffs = project_feasible(init.coeffs, problem.filter_op, problem.gamma,
                              mesh, problem.space)
    eps = opts.tikhonov_eps
    J, u, comp, regval = evaluate(problem, coeffs, eps)

    result = OptResult(
        density=DensityField(mesh, problem.space, coeffs, problem.gamma),
        displacement=u)

    res_scale = None
    step = opts.step0
    stagnant = 0
    converged = False
    message = "max_iters reached"

    for it in range(opts.max_iters):
        g = reduced_gradient(problem, coeffs, u, eps)
        rho = DensityField(mesh, problem.space, coeffs, problem.gamma)
        res = optimality_residual(rho, g, problem.filter_op, problem.gamma, mesh)
        if res_scale is None:
            res_scale = max(res, 1e-300)

        basin_flag = False
        result.objective_history.append(J)
        result.compliance_history.append(comp)
        result.regularizer_history.append(regval)
        result.residual_history.append(res)
        result.volume_history.append(float(v @ coeffs))
        result.step_history.append(step if step is not None else 0.0)
        result.basin_exit_history.append(False)

        if res <= opts.tol_residual * res_scale:
            converged = True
            message = f"optimality residual {res:.3e} below tolerance"
            break

        if step is None:
            gmax = np.max(np.abs(g))
            step = opts.move_limit / gmax if gmax > 0 else 1.0

        accepted = False
        s = step
        for _ in range(_MAX_BACKTRACKS):
            lower = np.maximum(coeffs - opts.move_limit, 0.0)
            upper = np.minimum(coeffs + opts.move_limit, 1.0)
            trial = _project_box_volume(coeffs - s * g, lower, upper, v, m,
                                        budget, area)
            d = trial - coeffs
            d2 = float(m @ d ** 2)
            if d2 == 0.0:
                converged = True
                message = "projected step vanished"
                accepted = True
                trial = coeffs
                break
            try:
                J_trial, u_trial, comp_trial, reg_trial = evaluate(problem, trial, eps)
            except SolverError as exc:
                s *= opts.backtrack
                continue
            if J_trial <= J - opts.armijo_c / s * d2:
                accepted = True
                break
            s *= opts.backtrack
        if not accepted:
            message = "line search failed to find Armijo decrease"
            break
        if converged:
            break

        if opts.trust_center is not None:
            ball = opts.trust_center
            dist = _ball_distance(problem, trial, ball)
            if dist > ball.radius / 2.0:
                result.basin_exit = True
                result.basin_exit_history[-1] = True
                shrunk = ball.center + (ball.radius / 2.0 / dist) * (trial - ball.center)
                trial = project_feasible(shrunk, problem.filter_op,
                                         problem.gamma, mesh, problem.space)
                J_trial, u_trial, comp_trial, reg_trial = evaluate(problem, trial, eps)

        dJ = J - J_trial
        coeffs, J, u, comp, regval = trial, J_trial, u_trial, comp_trial, reg_trial
        # let the step grow again, but not far past the move-limit saturation
        gmax = np.max(np.abs(g))
        cap = 10.0 * opts.move_limit / gmax if gmax > 0 else s
        step = min(s / opts.backtrack, cap)
        result.iterations = it + 1

        if abs(dJ) <= opts.tol_objective_rel * (abs(J) + 1e-300):
            stagnant += 1
            if stagnant >= 2:
                converged = True
                message = "objective stagnation"
                break
        else:
            stagnant = 0

    result.density = DensityField(mesh, problem.space, coeffs, problem.gamma)
    result.displacement = u
    result.converged = converged
    result.message = message
    if eps > 0.0:
        result.perturbed_objective = J
        result.unperturbed_objective = J - 0.5 * eps * float(m @ coeffs ** 2)
    return result


def solve_perturbed(problem: Problem, eps: float,
                    opts: OptimizerOptions = OptimizerOptions(),
                    init: Optional[DensityField] = None) -> OptResult:
    """Optimize with an added Tikhonov term (eps/2) ||rho||_L2^2."""
    if eps < 0.0:
        raise ValueError("eps must be nonnegative")
    if init is None:
        init = DensityField.uniform(problem.mesh, problem.space, problem.gamma)
    run_opts = replace(opts, tikhonov_eps=eps)
    result = optimize(problem, init, run_opts)
    if eps == 0.0:
        result.perturbed_objective = result.objective_history[-1] if \
            result.objective_history else None
        result.unperturbed_objective = result.perturbed_objective
    return result
