"""Step-weighted norms, error measures and the convergence-study harness.

The step norm ||v||_k is the J-weighted L2 norm over the reference domain at
time t_k.  The trajectory error is reported in the combined energy measure

    max_k ||e^k||_k  +  sqrt( sum_k dt ||D_k(e^k)||_k^2 )

together with the variant that carries the 2*nu factor inside the
dissipation sum, where D_k is the pulled-back symmetric velocity-gradient
rate and e^k compares the discrete solution against the exact solution
composed with the map at quadrature points (not against its interpolant).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import assembly
from .elements import default_degree, shape_functions
from .maps import MeshSequenceMap
from .solver import (FlowProblem, FlowState, SolverConfig, run)
from .spaces import DiscreteField, TaylorHoodSpace, interpolate

__all__ = [
    "k_norm", "EnergyErrorReport", "ErrorAccumulator", "energy_error",
    "EnergyBalance", "energy_balance_terms", "ConvergenceTable",
    "convergence_study", "kinetic_energy",
]

log = logging.getLogger(__name__)


def _map_points(space, map_, t, degree=None):
    """Quadrature points with weights and map samples, flattened."""
    pts, wts = assembly.cell_quadrature_points(space, degree)
    nc, nq, d = pts.shape
    flat = pts.reshape(-1, d)
    cells = np.repeat(np.arange(nc), nq) if isinstance(map_, MeshSequenceMap) \
        else None
    F, Finv, J, _ = map_.sample_fields(flat, t, cells=cells)
    if isinstance(map_, MeshSequenceMap):
        phys = map_.position(flat, t, cells=cells)
    else:
        phys = map_.position(flat, t)
    return pts, wts.ravel(), F, Finv, J, phys


def k_norm(field, map_, t, space=None, degree=None):
    """J-weighted L2 norm at time t of a DiscreteField or of a callable
    fn(X_ref) -> values (callables need an explicit space)."""
    if isinstance(field, DiscreteField):
        space = field.space
        vals = assembly.velocity_at_points(space, field, degree) \
            if field.component == "velocity" else None
        if vals is None:
            data = assembly._cell_data(space, degree or default_degree(space.dimension))
            pv = field.coefficients[space.mesh.cells]
            vals = np.einsum("qb,cb->cq", data.pvals, pv)[..., None]
    else:
        if space is None:
            raise ValueError("k_norm of a callable needs the space argument")
        pts, _ = assembly.cell_quadrature_points(space, degree)
        vals = np.asarray(field(pts.reshape(-1, space.dimension)), dtype=float)
        vals = vals.reshape(pts.shape[0], pts.shape[1], -1)
    _, wts, _, _, J, _ = _map_points(space, map_, t, degree)
    nc, nq = vals.shape[:2]
    sq = np.einsum("cqd,cqd->cq", vals, vals).ravel()
    return float(np.sqrt(np.sum(wts * J * sq)))


def kinetic_energy(field, map_, t, degree=None):
    return 0.5 * k_norm(field, map_, t, degree=degree) ** 2


def _physical_gradients(space, field, Finv, degree=None):
    """grad u F^{-1} at quadrature points, (nc, nq, d, d)."""
    G = assembly.velocity_gradients(space, field, degree)
    nc, nq, d, _ = G.shape
    return np.einsum("cqam,cqmd->cqad", G, Finv.reshape(nc, nq, d, d))


@dataclass
class EnergyErrorReport:
    times: np.ndarray
    l2_errors: np.ndarray          # ||e^k||_k per step
    rate_errors: np.ndarray        # ||D_k(e^k)||_k per step
    dt: float
    nu: float

    @property
    def max_l2(self):
        return float(self.l2_errors.max(initial=0.0))

    @property
    def dissipation_sum(self):
        return float(np.sqrt(self.dt * np.sum(self.rate_errors ** 2)))

    @property
    def combined(self):
        """max_k ||e||_k + sqrt(sum dt ||D_k e||_k^2)."""
        return self.max_l2 + self.dissipation_sum

    @property
    def combined_with_viscosity(self):
        """sqrt(max_k ||e||_k^2 + 2 nu sum dt ||D_k e||_k^2)."""
        return float(np.sqrt(self.max_l2 ** 2 +
                             2.0 * self.nu * self.dt *
                             np.sum(self.rate_errors ** 2)))


class ErrorAccumulator:
    """Per-step error recorder against exact fields in physical coordinates.

    ``velocity(X, t)`` and ``velocity_gradient(X, t)`` are evaluated at the
    mapped quadrature points; pass it as a run callback via ``update``.
    """

    def __init__(self, space, map_, velocity, velocity_gradient, dt, nu,
                 degree=None):
        self.space = space
        self.map = map_
        self.velocity = velocity
        self.velocity_gradient = velocity_gradient
        self.dt = dt
        self.nu = nu
        self.degree = degree
        self.times = []
        self.l2 = []
        self.rate = []

    def update(self, state, record=None):
        space, map_ = self.space, self.map
        t = state.t
        pts, wts, F, Finv, J, phys = _map_points(space, map_, t, self.degree)
        nc, nq, d = pts.shape
        uh = assembly.velocity_at_points(space, state.u, self.degree)
        ue = np.asarray(self.velocity(phys, t), dtype=float).reshape(nc, nq, d)
        err = ue - uh
        sq = np.einsum("cqd,cqd->cq", err, err).ravel()
        l2 = math.sqrt(float(np.sum(wts * J * sq)))

        Gh = _physical_gradients(space, state.u, Finv, self.degree)
        Ge = np.asarray(self.velocity_gradient(phys, t),
                        dtype=float).reshape(nc, nq, d, d)
        Gerr = Ge - Gh
        D = 0.5 * (Gerr + np.swapaxes(Gerr, 2, 3))
        dsq = np.einsum("cqab,cqab->cq", D, D).ravel()
        rate = math.sqrt(float(np.sum(wts * J * dsq)))

        self.times.append(t)
        self.l2.append(l2)
        self.rate.append(rate)

    def report(self):
        return EnergyErrorReport(times=np.asarray(self.times),
                                 l2_errors=np.asarray(self.l2),
                                 rate_errors=np.asarray(self.rate),
                                 dt=self.dt, nu=self.nu)


def energy_error(states, case, space, dt, degree=None):
    """Trajectory error report for a list of states (step 1..N)."""
    acc = ErrorAccumulator(space, case.map, case.velocity,
                           case.velocity_gradient, dt, case.nu, degree)
    for state in states:
        acc.update(state)
    return acc.report()


# ---------------------------------------------------------------------------
# discrete energy balance diagnostics
# ---------------------------------------------------------------------------


@dataclass
class EnergyBalance:
    """Discretized terms of the energy balance: kinetic-energy rate, viscous
    dissipation, boundary work of the discrete stress against the domain
    velocity, and forcing power.  These are diagnostics; the implicit scheme
    satisfies inequality-type bounds, not the exact balance."""

    kinetic_rate: float
    dissipation: float
    boundary_work: float
    forcing_power: float

    def as_dict(self):
        return {"kinetic_rate": self.kinetic_rate,
                "dissipation": self.dissipation,
                "boundary_work": self.boundary_work,
                "forcing_power": self.forcing_power}


def energy_balance_terms(state_prev, state, map_, nu, forcing=None,
                         stress="symmetric", degree=None):
    space = state.u.space
    dt = state.t - state_prev.t
    nk = k_norm(state.u, map_, state.t, degree=degree)
    nkm = k_norm(state_prev.u, map_, state_prev.t, degree=degree)
    kinetic_rate = (nk ** 2 - nkm ** 2) / (2.0 * dt)

    pts, wts, F, Finv, J, phys = _map_points(space, map_, state.t, degree)
    nc, nq, d = pts.shape
    Gh = _physical_gradients(space, state.u, Finv, degree)
    if stress == "symmetric":
        D = 0.5 * (Gh + np.swapaxes(Gh, 2, 3))
        dsq = np.einsum("cqab,cqab->cq", D, D).ravel()
        dissipation = 2.0 * nu * float(np.sum(wts * J * dsq))
    else:
        dsq = np.einsum("cqab,cqab->cq", Gh, Gh).ravel()
        dissipation = nu * float(np.sum(wts * J * dsq))

    if forcing is not None:
        uh = assembly.velocity_at_points(space, state.u, degree)
        fv = np.asarray(forcing(phys, state.t), dtype=float).reshape(nc, nq, d)
        power = float(np.sum(wts * J *
                             np.einsum("cqd,cqd->cq", fv, uh).ravel()))
    else:
        power = 0.0

    work = _boundary_work(space, map_, state, nu, stress, degree)
    return EnergyBalance(kinetic_rate=kinetic_rate, dissipation=dissipation,
                         boundary_work=work, forcing_power=power)


def _boundary_work(space, map_, state, nu, stress, degree=None):
    """int_boundary (J sigma F^{-T} n) . xi_t ds with the discrete stress."""
    mesh = space.mesh
    d = space.dimension
    degree = degree or default_degree(d)
    fd = assembly._facet_data(space, degree + 2)
    nfa, nqf = fd.points.shape[:2]
    flat = fd.points.reshape(-1, d)
    cells_rep = np.repeat(fd.cells, nqf)
    cells = cells_rep if isinstance(map_, MeshSequenceMap) else None
    F, Finv, J, xi_t = map_.sample_fields(flat, state.t, cells=cells)
    Finv = Finv.reshape(nfa, nqf, d, d)
    J = J.reshape(nfa, nqf)
    xi_t = xi_t.reshape(nfa, nqf, d)
    if np.max(np.abs(xi_t)) == 0.0:
        return 0.0

    # evaluate the discrete velocity gradient and pressure from the cell side
    geo = assembly._geometry(space)
    vbasis = shape_functions(2, d)
    pbasis = shape_functions(1, d)
    v0 = mesh.vertices[mesh.cells[fd.cells, 0]]             # (nfa, d)
    loc = np.einsum("fde,fqe->fqd", geo.inv[fd.cells],
                    flat.reshape(nfa, nqf, d) - v0[:, None, :])
    bary = np.concatenate([(1.0 - loc.sum(axis=2))[..., None], loc], axis=2)
    bflat = bary.reshape(-1, d + 1)
    vals = vbasis.values(bflat).reshape(nfa, nqf, -1)
    lgr = vbasis.gradients(bflat).reshape(nfa, nqf, -1, d)
    pvals = pbasis.values(bflat).reshape(nfa, nqf, d + 1)

    ucell = state.u.nodal()[space.cell_nodes[fd.cells]]     # (nfa, nb, d)
    pcell = state.p.coefficients[mesh.cells[fd.cells]]      # (nfa, d+1)
    grads = np.einsum("fqbm,fmd->fqbd", lgr, geo.inv[fd.cells])
    G = np.einsum("fba,fqbm->fqam", ucell, grads)           # du_a/dx_m
    Ghat = np.einsum("fqam,fqmd->fqad", G, Finv)
    ph = np.einsum("fqp,fp->fq", pvals, pcell)
    if stress == "symmetric":
        visc = nu * (Ghat + np.swapaxes(Ghat, 2, 3))
    else:
        visc = nu * Ghat
    sigma = visc - ph[..., None, None] * np.eye(d)
    conormal = J[..., None] * np.einsum("fqmd,fm->fqd", Finv, fd.normals)
    traction = np.einsum("fqad,fqd->fqa", sigma, conormal)
    integrand = np.einsum("fqa,fqa->fq", traction, xi_t)
    return float(np.einsum("q,f,fq->", fd.weights, fd.areas, integrand))


# ---------------------------------------------------------------------------
# convergence harness
# ---------------------------------------------------------------------------


@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)
    level_diagnostics: list = field(default_factory=list)

    COLUMNS = ("mesh_step_size", "element_count", "time_step", "N",
               "error", "ratio", "observed_order")

    def add_row(self, h, cells, dt, steps, error):
        if not np.isfinite(error) or error <= 0.0:
            raise ValueError(f"invalid error value {error!r} for a table row")
        row = {"mesh_step_size": h, "element_count": cells, "time_step": dt,
               "N": steps, "error": error, "ratio": None,
               "observed_order": None}
        if self.rows:
            prev = self.rows[-1]
            row["ratio"] = prev["error"] / error
            row["observed_order"] = (math.log(row["ratio"]) /
                                     math.log(prev["mesh_step_size"] / h))
        self.rows.append(row)

    def errors(self):
        return [r["error"] for r in self.rows]

    def ratios(self):
        return [r["ratio"] for r in self.rows[1:]]

    def orders(self):
        return [r["observed_order"] for r in self.rows[1:]]

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(",".join(self.COLUMNS) + "\n")
            for r in self.rows:
                cells = []
                for c in self.COLUMNS:
                    v = r[c]
                    cells.append("" if v is None else
                                 (f"{v:.10g}" if isinstance(v, float) else str(v)))
                fh.write(",".join(cells) + "\n")

    def __str__(self):
        head = f"{'h':>10} {'cells':>8} {'dt':>10} {'N':>6} " \
               f"{'error':>12} {'ratio':>8} {'order':>7}"
        lines = [head]
        for r in self.rows:
            ratio = "" if r["ratio"] is None else f"{r['ratio']:8.3f}"
            order = "" if r["observed_order"] is None else \
                f"{r['observed_order']:7.2f}"
            lines.append(f"{r['mesh_step_size']:10.4g} {r['element_count']:8d} "
                         f"{r['time_step']:10.4g} {r['N']:6d} "
                         f"{r['error']:12.5g} {ratio:>8} {order:>7}")
        return "\n".join(lines)


def convergence_study(case, levels, pairing="dt-h2", config=None,
                      degree=None, progress=None):
    """Run ``case`` on its mesh-level sequence and tabulate energy errors.

    The time step scales from the case's base step with the nominal mesh
    ratio: proportionally to h^2 under pairing 'dt-h2', to h under 'dt-h'.
    """
    if levels < 2:
        raise ValueError("a convergence study needs at least 2 levels")
    if pairing not in ("dt-h2", "dt-h"):
        raise ValueError(f"unknown pairing {pairing!r}")
    config = config or SolverConfig()
    table = ConvergenceTable()
    from .meshing import mesh_quality

    for level in range(1, levels + 1):
        mesh = case.mesh_for_level(level)
        ratio = case.nominal_h(level) / case.nominal_h(1)
        exponent = 2.0 if pairing == "dt-h2" else 1.0
        dt = case.base_dt * ratio ** exponent
        steps = int(round(case.T / dt))
        dt = case.T / steps
        space = TaylorHoodSpace(mesh)
        cfg = SolverConfig(linear_solver=config.linear_solver,
                           tolerance=config.tolerance, scheme=config.scheme,
                           smagorinsky=config.smagorinsky, stress=case.stress,
                           temam=config.temam,
                           quadrature_degree=config.quadrature_degree or degree)
        problem = FlowProblem(space=space, map=case.map, nu=case.nu,
                              bcs=case.boundary_conditions(),
                              forcing=case.forcing)
        u0 = interpolate(space, "velocity",
                         lambda X: case.velocity(_compose(case.map, X, 0.0), 0.0))
        p0 = interpolate(space, "pressure",
                         lambda X: case.pressure(_compose(case.map, X, 0.0), 0.0))
        initial = FlowState(k=0, t=0.0, u=u0, p=p0)
        acc = ErrorAccumulator(space, case.map, case.velocity,
                               case.velocity_gradient, dt, case.nu, degree)
        result = run(initial, problem, cfg, case.T, dt,
                     callbacks=[acc.update], record_energy=False)
        report = acc.report()
        quality = mesh_quality(mesh)
        table.add_row(h=quality.h_max, cells=mesh.n_cells, dt=dt, steps=steps,
                      error=report.combined)
        table.level_diagnostics.append(result.diagnostics)
        if progress is not None:
            progress(level, table)
    return table


def _compose(map_, X, t):
    return map_.position(X, t)
