"""Batch front-end: TOML run configs driving solve / optimize / converge /
check-filter, with VTK, CSV, and plain-text outputs.

Exit codes: 0 ok, 1 usage or config error, 2 numerical failure,
3 assertion failure (non-convergence or a failed property check).
"""

from __future__ import annotations

import argparse
import os
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, fields as dc_fields
from typing import Optional

import numpy as np

from . import analysis, fem
from .analysis import checkerboard_index, convergence_study, monotone_decreasing
from .fem import MaterialModel, SolverError, Traction
from .filtering import FilterSpec, build_filter, check_assumptions
from .mesh import BoundarySegment, Domain, Mesh, build_mesh, refine
from .optimizer import (OptimizerOptions, Problem, make_problem, optimize,
                        optimality_residual, reduced_gradient)
from .simp import DensityField, RegularizerSpec
from .vtkio import atomic_write, write_vtk

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_ASSERTION = 3


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


# preset geometries: (width, height, dirichlet segments, neumann segments,
# load expressions). The cantilever is clamped on the left and pulled down on
# a band around the right-edge midpoint; the MBB half-model uses a symmetry
# condition (u_x = 0) on the left, a bottom-right roller, and a downward load
# near the top-left corner.
PRESETS = {
    "cantilever-tip": {
        "width": 3.0, "height": 1.0,
        "dirichlet": [{"side": "left"}],
        "neumann": [{"side": "right", "start": 0.4, "end": 0.6}],
        "fx": "0", "fy": "-1",
    },
    "mbb-half": {
        "width": 3.0, "height": 1.0,
        "dirichlet": [{"side": "left", "components": "x"},
                      {"side": "right", "start": 0.0, "end": 0.0,
                       "components": "y"}],
        "neumann": [{"side": "top", "start": 0.0, "end": 0.1}],
        "fx": "0", "fy": "-1",
    },
}

_EXPR_NAMES = {"sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp,
               "sqrt": np.sqrt, "abs": abs, "pi": np.pi}


def _compile_expr(text, label):
    try:
        return compile(str(text), f"<{label}>", "eval")
    except SyntaxError as exc:
        raise ConfigError(f"bad expression for {label}: {exc}") from None


def make_load_func(fx_expr, fy_expr):
    """Closed-form traction (x, y) -> (fx, fy) from expression strings."""
    cx = _compile_expr(fx_expr, "load.fx")
    cy = _compile_expr(fy_expr, "load.fy")

    def f(x, y):
        ns = dict(_EXPR_NAMES, x=x, y=y)
        return (float(eval(cx, {"__builtins__": {}}, ns)),
                float(eval(cy, {"__builtins__": {}}, ns)))

    return f


def _segment(entry: dict) -> BoundarySegment:
    try:
        return BoundarySegment(side=entry["side"],
                               start=float(entry.get("start", 0.0)),
                               end=float(entry.get("end", 1.0)),
                               components=entry.get("components", "both"))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad boundary segment {entry}: {exc}") from None


@dataclass
class RunConfig:
    """Everything needed to pose one problem family on any mesh."""

    domain: Domain
    nx: int
    ny: int
    mat: MaterialModel
    load_func: object
    gamma: float
    space: str
    reg: Optional[RegularizerSpec]
    filter_spec: Optional[FilterSpec]
    tikhonov_eps: float
    opts: OptimizerOptions
    solve_rho: float
    seed: int


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"missing required field {key!r} in [{where}]")
    return section[key]


def _material_from(section: dict) -> MaterialModel:
    eps = float(section.get("eps_simp", 1e-3))
    p_s = float(section.get("p_s", 3.0))
    if "E" in section:
        return MaterialModel.from_youngs(float(section["E"]),
                                         float(section.get("nu", 0.3)),
                                         eps_simp=eps, p_s=p_s)
    return MaterialModel(mu=float(section.get("mu", 0.5)),
                         lam=float(section.get("lam", 0.5)),
                         eps_simp=eps, p_s=p_s)


def _restriction_from(section: Optional[dict]):
    """(regularizer, filter spec, tikhonov eps) for the single restriction block."""
    if section is None or section.get("kind", "none") == "none":
        return None, None, 0.0
    kind = section["kind"]
    if kind == "w1p":
        return RegularizerSpec("W1p", float(_require(section, "eps", "restriction")),
                               p=float(section.get("p", 2.0))), None, 0.0
    if kind == "gl":
        return RegularizerSpec("GinzburgLandau",
                               float(_require(section, "eps", "restriction"))), None, 0.0
    if kind == "filter":
        spec = FilterSpec(radius=float(_require(section, "r_min", "restriction")),
                          boundary_policy=section.get("boundary_policy", "Truncate"))
        return None, spec, float(section.get("tikhonov_eps", 0.0))
    raise ConfigError(f"unknown restriction kind {kind!r}")


def _optimizer_from(section: dict) -> OptimizerOptions:
    known = {f.name for f in dc_fields(OptimizerOptions)}
    bad = set(section) - known
    if bad:
        raise ConfigError(f"unknown optimizer option(s): {sorted(bad)}")
    try:
        return OptimizerOptions(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [optimizer] section: {exc}") from None


def load_config(path, seed: int = 0) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None

    preset = PRESETS.get(raw.get("preset", ""), {})
    if "preset" in raw and not preset:
        raise ConfigError(f"unknown preset {raw['preset']!r}; "
                          f"known: {sorted(PRESETS)}")

    dom_sec = raw.get("domain", {})
    width = float(dom_sec.get("width", preset.get("width", 1.0)))
    height = float(dom_sec.get("height", preset.get("height", 1.0)))
    dirichlet = dom_sec.get("dirichlet", preset.get("dirichlet", []))
    neumann = dom_sec.get("neumann", preset.get("neumann", []))
    if not dirichlet:
        raise ConfigError("no Dirichlet boundary configured "
                          "(set a preset or [[domain.dirichlet]])")
    try:
        domain = Domain(width, height,
                        tuple(_segment(s) for s in dirichlet),
                        tuple(_segment(s) for s in neumann))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    load_sec = raw.get("load", {})
    fx = load_sec.get("fx", preset.get("fx"))
    fy = load_sec.get("fy", preset.get("fy"))
    if fx is None or fy is None:
        raise ConfigError("missing load: set a preset or [load] fx/fy")

    mesh_sec = raw.get("mesh", {})
    nx = int(_require(mesh_sec, "nx", "mesh"))
    ny = int(_require(mesh_sec, "ny", "mesh"))

    prob_sec = raw.get("problem", {})
    gamma = float(_require(prob_sec, "gamma", "problem"))
    space = prob_sec.get("space", "DG0")
    if space not in ("DG0", "Q1"):
        raise ConfigError(f"unknown density space {space!r}")

    reg, filter_spec, tik = _restriction_from(raw.get("restriction"))
    if reg is not None and space == "DG0":
        raise ConfigError(f"{reg.kind} regularization requires space = \"Q1\"")

    return RunConfig(
        domain=domain, nx=nx, ny=ny,
        mat=_material_from(raw.get("material", {})),
        load_func=make_load_func(fx, fy),
        gamma=gamma, space=space, reg=reg, filter_spec=filter_spec,
        tikhonov_eps=tik,
        opts=_optimizer_from(raw.get("optimizer", {})),
        solve_rho=float(raw.get("solve", {}).get("rho", 1.0)),
        seed=seed)


def problem_on(cfg: RunConfig, mesh: Mesh) -> Problem:
    traction = Traction(mesh, func=cfg.load_func)
    return make_problem(mesh, cfg.mat, traction, cfg.gamma, cfg.space,
                        filter_spec=cfg.filter_spec, reg=cfg.reg)


def _out_path(out_dir, name):
    os.makedirs(out_dir, exist_ok=True)
    return os.path.join(out_dir, name)


def _density_vtk_data(rho: DensityField, problem: Problem):
    phys = problem.filter_op.apply(rho.coeffs) if problem.filter_op else rho.coeffs
    point, cell = {}, {}
    if rho.space == "DG0":
        cell["density"] = rho.coeffs
        cell["physical_density"] = phys
    else:
        point["density"] = rho.coeffs
        point["physical_density"] = phys
    return point, cell


def cmd_solve(cfg: RunConfig, out_dir: str) -> int:
    mesh = build_mesh(cfg.domain, cfg.nx, cfg.ny)
    problem = problem_on(cfg, mesh)
    rho = float(cfg.solve_rho)
    if not 0.0 <= rho <= 1.0:
        raise ConfigError("[solve] rho must lie in [0, 1]")
    n = mesh.n_elements if cfg.space == "DG0" else mesh.n_nodes
    coeffs = np.full(n, rho)
    phys = problem.filter_op.apply(coeffs) if problem.filter_op else coeffs
    rho_q = fem.density_at_quadrature(mesh, cfg.space, phys)
    K = fem.assemble_system(mesh, rho_q, cfg.mat)
    u = fem.solve_displacement(K, problem.load, mesh)
    comp = fem.compliance(u, problem.load)

    k, _ = fem.simp_stiffness(rho_q, cfg.mat)
    energy = (k * fem.element_energy_density(u, cfg.mat)).mean(axis=1)
    write_vtk(_out_path(out_dir, "solution.vtk"), mesh,
              point_data={"displacement": u.coeffs},
              cell_data={"energy_density": energy})
    print(f"compliance {comp!r}")
    return EXIT_OK


def cmd_optimize(cfg: RunConfig, out_dir: str) -> int:
    mesh = build_mesh(cfg.domain, cfg.nx, cfg.ny)
    problem = problem_on(cfg, mesh)
    init = DensityField.uniform(mesh, cfg.space, cfg.gamma)
    opts = cfg.opts
    if cfg.tikhonov_eps > 0.0:
        from dataclasses import replace
        opts = replace(opts, tikhonov_eps=cfg.tikhonov_eps)
    result = optimize(problem, init, opts)

    point, cell = _density_vtk_data(result.density, problem)
    point["displacement"] = result.displacement.coeffs
    write_vtk(_out_path(out_dir, "design.vtk"), mesh,
              point_data=point, cell_data=cell)
    result.write_csv(_out_path(out_dir, "iterations.csv"))

    g = reduced_gradient(problem, result.density.coeffs, result.displacement,
                         opts.tikhonov_eps)
    res = optimality_residual(result.density, g, problem.filter_op,
                              cfg.gamma, mesh)
    if problem.filter_op is not None:
        kappa = checkerboard_index(result.density.with_coeffs(
            problem.filter_op.apply(result.density.coeffs)))
    else:
        kappa = checkerboard_index(result.density)
    vol = float(problem.volume_gradient() @ result.density.coeffs)
    summary = "\n".join([
        f"converged {result.converged}",
        f"message {result.message}",
        f"iterations {result.iterations}",
        f"objective {result.objective_history[-1]!r}",
        f"volume {vol!r}",
        f"residual {res!r}",
        f"checkerboard_index {kappa!r}",
    ]) + "\n"
    atomic_write(_out_path(out_dir, "summary.txt"), summary)
    print(summary, end="")
    if not np.isfinite(result.objective_history[-1]):
        return EXIT_NUMERICAL
    return EXIT_OK if result.converged else EXIT_ASSERTION


def cmd_converge(cfg: RunConfig, out_dir: str, levels: int) -> int:
    base = build_mesh(cfg.domain, cfg.nx, cfg.ny)
    report = convergence_study(lambda mesh: problem_on(cfg, mesh),
                               base, levels, cfg.opts)
    report.write_csv(_out_path(out_dir, "convergence.csv"))
    atomic_write(_out_path(out_dir, "convergence.txt"), report.to_text())
    print(report.to_text(), end="")

    status = EXIT_OK
    for name, errs in report.errors.items():
        if not monotone_decreasing(errs):
            print(f"assertion failed: {name} errors not decreasing: {errs}")
            status = EXIT_ASSERTION
    return status


def cmd_check_filter(cfg: RunConfig, out_dir: str, levels: int, seed: int) -> int:
    if cfg.filter_spec is None:
        raise ConfigError("check-filter needs a filter restriction block")
    meshes = [build_mesh(cfg.domain, cfg.nx, cfg.ny)]
    for _ in range(levels - 1):
        meshes.append(refine(meshes[-1]))
    report = check_assumptions(meshes, cfg.filter_spec, space=cfg.space,
                               seed=seed)
    lines = [f"filter assumption checks, radius {cfg.filter_spec.radius}",
             f"gradient bound 3/r = {report.gradient_bound!r}"]
    for i, h in enumerate(report.levels):
        lines.append(f"h {h:.5g}  sup|F rho| {report.sup_value[i]:.4g}  "
                     f"sup|grad F rho| {report.sup_gradient[i]:.4g}  "
                     f"box violation {report.box_violation[i]:.3e}  "
                     f"linearity {report.linearity_error[i]:.3e}")
    for p, orders in report.interpolation_orders.items():
        lines.append(f"interpolation orders p={p}: "
                     + ", ".join(f"{s:.2f}" for s in orders))
    lines.extend(f"FAILED: {f}" for f in report.failures)
    text = "\n".join(lines) + "\n"
    atomic_write(_out_path(out_dir, "filter_checks.txt"), text)
    print(text, end="")
    return EXIT_OK if report.passed else EXIT_ASSERTION


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simpopt",
        description="compliance topology optimization runs from TOML configs")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "optimize", "converge", "check-filter"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML run config")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--sequential", action="store_true",
                       help="force deterministic single-threaded execution")
        if name in ("converge", "check-filter"):
            p.add_argument("--levels", type=int, default=3)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK

    if args.sequential:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = "1"

    try:
        cfg = load_config(args.config, seed=args.seed)
        if getattr(args, "levels", 3) < 3:
            raise ConfigError("--levels must be at least 3")
        if args.command == "solve":
            return cmd_solve(cfg, args.out)
        if args.command == "optimize":
            return cmd_optimize(cfg, args.out)
        if args.command == "converge":
            return cmd_converge(cfg, args.out, args.levels)
        return cmd_check_filter(cfg, args.out, args.levels, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
