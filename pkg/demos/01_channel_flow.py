"""Steady channel flow on a static domain.

A parabolic profile enters at the left face, the walls are no-slip, and the
right face carries the natural (do-nothing) outflow condition of the
full-gradient stress.  The parabolic profile is an exact steady solution of
that formulation, so starting from rest the flow relaxes onto it.
"""

from pathlib import Path

import numpy as np

from movingflow import (BoundaryConditionSet, DirichletBC, DiscreteField,
                        FlowProblem, FlowState, IdentityMap, NeumannBC,
                        NoslipBC, SolverConfig, TaylorHoodSpace, dirichlet,
                        generate_box, interpolate, neumann, run)
from movingflow.fileio import write_diagnostics_csv, write_vtk
from movingflow.meshing import NOSLIP

L, U, NU = 4.0, 1.0, 0.05
OUT = Path(__file__).with_suffix("") .name
OUTDIR = Path("demo_output") / OUT

mesh = generate_box(2, (24, 8), extents=[(0, L), (0, 1)],
                    labels={"xmin": dirichlet(0), "xmax": neumann(0)})
space = TaylorHoodSpace(mesh)
print(f"channel mesh: {mesh.n_cells} triangles, "
      f"{space.n_velocity_dofs + space.n_pressure_dofs} unknowns")


def inflow(X, t):
    # steady parabolic inflow, 4U y (1-y)
    return np.stack([4 * U * X[:, 1] * (1 - X[:, 1]),
                     np.zeros(len(X))], axis=1)


problem = FlowProblem(
    space=space, map=IdentityMap(2), nu=NU,
    bcs=BoundaryConditionSet({
        NOSLIP: NoslipBC(),
        dirichlet(0): DirichletBC(inflow),
        neumann(0): NeumannBC(None),          # do-nothing outflow
    }))
config = SolverConfig(stress="full-gradient")

initial = FlowState(0, 0.0, DiscreteField(space, "velocity"),
                    DiscreteField(space, "pressure"))
result = run(initial, problem, config, T=6.0, dt=0.25)

OUTDIR.mkdir(parents=True, exist_ok=True)
write_vtk(OUTDIR / "final.vtk", mesh, problem.map, result.final.t,
          u=result.final.u, p=result.final.p, q_criterion=True)
write_diagnostics_csv(OUTDIR / "diagnostics.csv", result.diagnostics)

# compare the relaxed state with the exact profile
exact = interpolate(space, "velocity", lambda X: inflow(X, None))
err = np.abs(result.final.u.coefficients - exact.coefficients).max()
print(f"max deviation from the parabolic profile after t=6: {err:.3e}")
print(f"outputs in {OUTDIR}/")
