"""Solve the state problem for a fully solid cantilever and export VTK.

A 3:1 cantilever is clamped on the left edge and pulled downward on a band
around the midpoint of the right edge.  With rho = 1 everywhere this is a
plain linear-elasticity solve; the compliance F.u is the scalar objective
everything else in the package is built around.
"""

import numpy as np

import simpopt as so
from simpopt import fem
from simpopt.vtkio import write_vtk

domain = so.Domain(3.0, 1.0,
                   dirichlet_segments=(so.BoundarySegment("left"),),
                   neumann_segments=(so.BoundarySegment("right", 0.4, 0.6),))
mesh = so.build_mesh(domain, 60, 20)
mat = so.MaterialModel.from_youngs(E=1.0, nu=0.3)

traction = so.Traction(mesh, func=lambda x, y: (0.0, -1.0))
F = so.assemble_load(mesh, traction)

rho = np.ones(mesh.n_elements)
K = so.assemble_system(mesh, rho, mat)
u = so.solve_displacement(K, F, mesh)

print(f"mesh: {mesh.nx} x {mesh.ny}, {2 * mesh.n_nodes} displacement dofs")
print(f"compliance F.u = {so.compliance(u, F):.6f}")
print(f"tip deflection = {u.nodal()[:, 1].min():.6f}")

energy = fem.element_energy_density(u, mat).mean(axis=1)
write_vtk("cantilever_solid.vtk", mesh,
          point_data={"displacement": u.coeffs},
          cell_data={"energy_density": energy})
print("wrote cantilever_solid.vtk")
