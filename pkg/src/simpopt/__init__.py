"""Topology optimization of linearly elastic structures with restriction
methods: SIMP interpolation, W1p / Ginzburg-Landau regularization, convolution
density filtering, a projected-gradient optimizer, and refinement-study
harnesses."""

from .analysis import (ConvergenceReport, checkerboard_index, convergence_study,
                       error_between, norm, pvec_inequality_check)
from .fem import (DisplacementField, MaterialModel, SolverError, Traction,
                  assemble_load, assemble_system, compliance,
                  solve_displacement)
from .filtering import (FilterOperator, FilterSpec, build_filter,
                        check_assumptions)
from .mesh import (BoundarySegment, Domain, Mesh, build_mesh, prolong_scalar,
                   prolong_vector, refine)
from .optimizer import (OptimizerOptions, OptResult, Problem, TrustBall,
                        make_problem, optimality_residual, optimize,
                        project_feasible, solve_perturbed)
from .simp import DensityField, RegularizerSpec, reduced_gradient
from .vtkio import write_vtk

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
