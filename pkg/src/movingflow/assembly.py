"""Assembly of the moving-domain flow forms into sparse blocks.

All forms live on the fixed reference mesh; the domain motion enters through
pointwise map data F, F^{-1}, J evaluated at quadrature points.  Per step the
velocity block collects

* the discrete time-derivative mass term (J-weighted at the previous level
  for backward Euler),
* the 0.5 [J]_t zeroth-order term (always the backward time difference of J),
* the convection term ((J F^{-1} w) . grad u, psi),
* the skew-symmetrizing divergence term, assembled by parts so that no
  second derivatives of the map are needed: the volume part is explicitly
  antisymmetric and the boundary integral is kept on outflow facets only,
* the viscous term, either 2 nu J D(u):D(psi) with the pulled-back symmetric
  rate tensor D, or the full-gradient variant nu J (grad u F^{-1}) : (grad
  psi F^{-1}), optionally with a pointwise eddy-viscosity coefficient,

and the pressure coupling B[q, psi] = int J q F^{-T} : grad psi.

Assembly is single-threaded and vectorized over cells with a fixed reduction
order, so results are bitwise deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .elements import default_degree, quadrature, shape_functions
from .maps import MeshSequenceMap
from .spaces import DiscreteField

__all__ = [
    "AssembledStep", "assemble_step", "weighted_mass_matrix", "mass_matrix",
    "rate_mass_matrix", "convection_matrices", "viscous_matrix",
    "divergence_matrix", "forcing_vector", "pressure_gauge_vector",
    "piola_boundary_flux", "boundary_area", "boundary_flux_correction",
    "boundary_normal_field", "velocity_at_points", "velocity_gradients",
    "cell_quadrature_points",
]


@dataclass
class AssembledStep:
    """One time step of the discrete system.

    A is the velocity-velocity block, B the pressure-velocity divergence
    block; the saddle system reads  A u - B^T p = rhs_u,  B u = constraint_rhs.
    """

    A: sp.csr_matrix
    B: sp.csr_matrix
    rhs_u: np.ndarray
    constraint_rhs: np.ndarray
    t: float
    dt: float

    def triplets(self, block="A"):
        """Canonical COO triplets: duplicates summed, sorted row-major."""
        mat = {"A": self.A, "B": self.B}[block].tocsr()
        mat.sum_duplicates()
        coo = mat.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order], coo.col[order], coo.data[order]


# ---------------------------------------------------------------------------
# cached geometry / quadrature tables
# ---------------------------------------------------------------------------


class _Geometry:
    def __init__(self, space):
        mesh = space.mesh
        verts = mesh.vertices[mesh.cells]
        edge = np.swapaxes(verts[:, 1:, :] - verts[:, :1, :], 1, 2)  # columns
        self.det = np.abs(np.linalg.det(edge))
        self.inv = np.linalg.inv(edge)           # local coords per ref coords
        self.cell_diam = _cell_diameters(mesh)
        self.volume_factor = self.det            # |det| times ref weights


def _cell_diameters(mesh):
    verts = mesh.vertices[mesh.cells]
    n = verts.shape[1]
    diam = np.zeros(len(verts))
    for a in range(n):
        for b in range(a + 1, n):
            diam = np.maximum(diam, np.linalg.norm(verts[:, a] - verts[:, b], axis=1))
    return diam


def _geometry(space):
    geo = getattr(space, "_assembly_geometry", None)
    if geo is None:
        geo = _Geometry(space)
        space._assembly_geometry = geo
    return geo


class _CellData:
    def __init__(self, space, degree):
        d = space.dimension
        self.rule = quadrature(d, degree)
        vbasis = shape_functions(2, d)
        pbasis = shape_functions(1, d)
        self.vals = vbasis.values(self.rule.points)        # (nq, nb)
        self.lgrads = vbasis.gradients(self.rule.points)   # (nq, nb, d)
        self.pvals = pbasis.values(self.rule.points)       # (nq, d+1)
        mesh = space.mesh
        verts = mesh.vertices[mesh.cells]                  # (nc, d+1, d)
        self.points = np.einsum("qv,cvd->cqd", self.rule.points, verts)


def _cell_data(space, degree):
    cache = getattr(space, "_assembly_cells", None)
    if cache is None:
        cache = {}
        space._assembly_cells = cache
    if degree not in cache:
        cache[degree] = _CellData(space, degree)
    return cache[degree]


class _FacetData:
    """Trace data on the boundary facets: quadrature, trace basis, geometry."""

    def __init__(self, space, degree):
        mesh = space.mesh
        d = mesh.dimension
        self.rule = quadrature(d - 1, degree)
        trace = shape_functions(2, d - 1)
        self.vals = trace.values(self.rule.points)          # (nqf, nfb)
        fverts = mesh.vertices[mesh.boundary_facets]        # (nbf, d, d)
        self.points = np.einsum("qv,fvd->fqd", self.rule.points, fverts)
        self.areas = mesh.boundary_facet_areas()
        self.normals = mesh.boundary_facet_normals()
        # normalized weights: rule weights sum to 1/(d-1)!
        self.weights = self.rule.weights * math.factorial(d - 1)
        self.nodes = space.facet_nodes                      # (nbf, nfb)
        self.cells = space.mesh.boundary_cells


def _facet_data(space, degree):
    cache = getattr(space, "_assembly_facets", None)
    if cache is None:
        cache = {}
        space._assembly_facets = cache
    if degree not in cache:
        cache[degree] = _FacetData(space, degree)
    return cache[degree]


def _map_cells(space, nq):
    """Cell index per flattened quadrature point (mesh-backed maps only)."""
    return np.repeat(np.arange(space.mesh.n_cells), nq)


def _sample_map(space, map_, t, data, need_velocity=False):
    nc, nq = data.points.shape[:2]
    flat = data.points.reshape(-1, space.dimension)
    cells = _map_cells(space, nq) if isinstance(map_, MeshSequenceMap) else None
    F, Finv, J, xi_t = map_.sample_fields(flat, t, cells=cells)
    d = space.dimension
    out = (F.reshape(nc, nq, d, d), Finv.reshape(nc, nq, d, d),
           J.reshape(nc, nq))
    if need_velocity:
        return out + (xi_t.reshape(nc, nq, d),)
    return out


def _scalar_csr(space, local):
    """Scatter (nc, nb, nb) local blocks into a scalar node-by-node CSR."""
    conn = space.cell_nodes
    nb = conn.shape[1]
    rows = np.repeat(conn, nb, axis=1).ravel()
    cols = np.tile(conn, (1, nb)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)),
                        shape=(space.n_nodes, space.n_nodes))
    return mat.tocsr()


def _vector_expand(space, scalar_csr):
    """Expand a scalar node matrix to the interleaved velocity dof layout."""
    return sp.kron(scalar_csr, sp.eye(space.dimension, format="csr"),
                   format="csr")


# ---------------------------------------------------------------------------
# individual forms (used by tests, diagnostics and the step assembler)
# ---------------------------------------------------------------------------


def weighted_mass_matrix(space, weights, degree=None):
    """Velocity mass matrix with a per-quadrature-point weight (nc, nq)."""
    degree = degree or default_degree(space.dimension)
    data = _cell_data(space, degree)
    geo = _geometry(space)
    nc, nq = data.points.shape[:2]
    nb = data.vals.shape[1]
    local = np.zeros((nc, nb, nb))
    for q in range(nq):
        coeff = data.rule.weights[q] * geo.det * weights[:, q]
        local += coeff[:, None, None] * np.outer(data.vals[q], data.vals[q])
    return _vector_expand(space, _scalar_csr(space, local))


def mass_matrix(space, map_, t, degree=None):
    """J(t)-weighted velocity mass matrix (the step-norm Gram matrix)."""
    degree = degree or default_degree(space.dimension)
    data = _cell_data(space, degree)
    _, _, J = _sample_map(space, map_, t, data)
    return weighted_mass_matrix(space, J, degree)


def rate_mass_matrix(space, map_, t_k, t_prev, dt, degree=None):
    """Mass matrix weighted with the backward difference (J_k - J_{k-1})/dt."""
    degree = degree or default_degree(space.dimension)
    data = _cell_data(space, degree)
    _, _, Jk = _sample_map(space, map_, t_k, data)
    _, _, Jp = _sample_map(space, map_, t_prev, data)
    return weighted_mass_matrix(space, (Jk - Jp) / dt, degree)


def convection_matrices(space, map_, t, w, degree=None, temam_boundary=True):
    """Convection block C and skew-symmetrizing block T for advection w.

    C[(i,a),(j,b)] = delta_ab int (z . grad phi_j) phi_i with z = J F^{-1} w;
    T is the by-parts divergence term -0.5[(z.grad phi_j) phi_i +
    (z.grad phi_i) phi_j] plus, when ``temam_boundary``, the surface term
    0.5 (z.n) phi_i phi_j on outflow (neumann) facets.
    """
    degree = degree or default_degree(space.dimension)
    data = _cell_data(space, degree)
    geo = _geometry(space)
    nc, nq = data.points.shape[:2]
    nb = data.vals.shape[1]
    wc = _nodal(w)[space.cell_nodes]                     # (nc, nb, d)
    _, Finv, J = _sample_map(space, map_, t, data)

    C_loc = np.zeros((nc, nb, nb))
    T_loc = np.zeros((nc, nb, nb))
    for q in range(nq):
        grads = np.einsum("bm,cmd->cbd", data.lgrads[q], geo.inv)
        wq = np.einsum("b,cbd->cd", data.vals[q], wc)
        z = J[:, q, None] * np.einsum("cmd,cd->cm", Finv[:, q], wq)
        ddir = np.einsum("cbd,cd->cb", grads, z)         # z . grad phi
        coeff = data.rule.weights[q] * geo.det
        Cq = coeff[:, None, None] * (data.vals[q][None, :, None] *
                                     ddir[:, None, :])
        C_loc += Cq
        T_loc -= 0.5 * (Cq + np.swapaxes(Cq, 1, 2))
    C = _vector_expand(space, _scalar_csr(space, C_loc))
    T = _vector_expand(space, _scalar_csr(space, T_loc))
    if temam_boundary:
        Tb = _temam_boundary_scalar(space, map_, t, w, degree)
        if Tb is not None:
            T = T + _vector_expand(space, Tb)
    return C, T


def _temam_boundary_scalar(space, map_, t, w, degree):
    """0.5 (z.n) phi_i phi_j over neumann facets, scalar node pattern."""
    mesh = space.mesh
    sel = np.flatnonzero([lbl.kind == "neumann" for lbl in mesh.boundary_labels])
    if sel.size == 0:
        return None
    fd = _facet_data(space, degree + 2)
    pts = fd.points[sel]
    nfa, nqf = pts.shape[:2]
    flat = pts.reshape(-1, space.dimension)
    cells = np.repeat(fd.cells[sel], nqf) if isinstance(map_, MeshSequenceMap) else None
    F, Finv, J, _ = map_.sample_fields(flat, t, cells=cells)
    Finv = Finv.reshape(nfa, nqf, space.dimension, space.dimension)
    J = J.reshape(nfa, nqf)
    nodes = fd.nodes[sel]
    wvals = _nodal(w)[nodes]                             # (nfa, nfb, d)
    nfb = nodes.shape[1]
    local = np.zeros((nfa, nfb, nfb))
    normals = fd.normals[sel]
    for q in range(nqf):
        wq = np.einsum("b,fbd->fd", fd.vals[q], wvals)
        z = J[:, q, None] * np.einsum("fmd,fd->fm", Finv[:, q], wq)
        zn = np.einsum("fm,fm->f", z, normals)
        coeff = 0.5 * fd.weights[q] * fd.areas[sel] * zn
        local += coeff[:, None, None] * np.outer(fd.vals[q], fd.vals[q])
    rows = np.repeat(nodes, nfb, axis=1).ravel()
    cols = np.tile(nodes, (1, nfb)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)),
                         shape=(space.n_nodes, space.n_nodes)).tocsr()


def viscous_matrix(space, map_, t, nu, stress="symmetric", degree=None,
                   smagorinsky=None, w=None):
    """Viscous velocity block; see the module docstring for the two forms."""
    degree = degree or default_degree(space.dimension)
    step = assemble_step(space, map_, t_k=t, t_prev=t, dt=1.0,
                         w=_zero_velocity(space) if w is None else w,
                         u_prev=_zero_velocity(space), nu=nu,
                         stress=stress, temam=False, smagorinsky=smagorinsky,
                         quadrature_degree=degree,
                         _only_viscous=True)
    return step.A


def divergence_matrix(space, map_, t, degree=None):
    """Pressure-velocity block B[q, (j,c)] = int J q (grad_phys phi_j)_c."""
    degree = degree or default_degree(space.dimension)
    data = _cell_data(space, degree)
    geo = _geometry(space)
    nc, nq = data.points.shape[:2]
    nb = data.vals.shape[1]
    d = space.dimension
    _, Finv, J = _sample_map(space, map_, t, data)
    npl = d + 1
    local = np.zeros((nc, npl, nb, d))
    for q in range(nq):
        grads = np.einsum("bm,cmd->cbd", data.lgrads[q], geo.inv)
        ghat = np.einsum("cbm,cmd->cbd", grads, Finv[:, q])
        coeff = data.rule.weights[q] * geo.det * J[:, q]
        local += coeff[:, None, None, None] * (data.pvals[q][None, :, None, None] *
                                               ghat[:, None, :, :])
    prows = np.repeat(space.mesh.cells, nb * d, axis=1).ravel()
    cols_nodes = np.repeat(space.cell_nodes[:, None, :], npl, axis=1)
    cols = (cols_nodes[..., None] * d + np.arange(d)).ravel()
    B = sp.coo_matrix((local.ravel(), (prows, cols)),
                      shape=(space.n_pressure_dofs, space.n_velocity_dofs))
    return B.tocsr()


def forcing_vector(space, map_, t, forcing, degree=None):
    """(J f, psi) with f given in physical coordinates: f(xhat, t) -> (n, d)."""
    degree = degree or default_degree(space.dimension)
    data = _cell_data(space, degree)
    geo = _geometry(space)
    nc, nq = data.points.shape[:2]
    d = space.dimension
    flat = data.points.reshape(-1, d)
    cells = _map_cells(space, nq) if isinstance(map_, MeshSequenceMap) else None
    _, _, J, _ = map_.sample_fields(flat, t, cells=cells)
    if isinstance(map_, MeshSequenceMap):
        phys = map_.position(flat, t, cells=cells)
    else:
        phys = map_.position(flat, t)
    fvals = np.asarray(forcing(phys, t), dtype=float).reshape(nc, nq, d)
    J = J.reshape(nc, nq)
    local = np.zeros((nc, data.vals.shape[1], d))
    for q in range(nq):
        coeff = data.rule.weights[q] * geo.det * J[:, q]
        local += coeff[:, None, None] * (data.vals[q][None, :, None] *
                                         fvals[:, q, None, :])
    rhs = np.zeros(space.n_velocity_dofs)
    np.add.at(rhs, (space.cell_nodes[..., None] * d +
                    np.arange(d)).ravel(), local.ravel())
    return rhs


def pressure_gauge_vector(space, map_, t, degree=None):
    """e_i = int J q_i, the physical-volume weights of the pressure basis."""
    degree = degree or default_degree(space.dimension)
    data = _cell_data(space, degree)
    geo = _geometry(space)
    nc, nq = data.points.shape[:2]
    _, _, J = _sample_map(space, map_, t, data)
    local = np.zeros((nc, space.dimension + 1))
    for q in range(nq):
        coeff = data.rule.weights[q] * geo.det * J[:, q]
        local += coeff[:, None] * data.pvals[q][None, :]
    e = np.zeros(space.n_pressure_dofs)
    np.add.at(e, space.mesh.cells.ravel(), local.ravel())
    return e


# ---------------------------------------------------------------------------
# boundary flux machinery
# ---------------------------------------------------------------------------


def boundary_area(space):
    return float(space.mesh.boundary_facet_areas().sum())


def piola_boundary_flux(space, map_, t, values, degree=None):
    """Surface integral of the transformed normal flux of a nodal velocity
    field: int_boundary (J F^{-T} n) . v_h ds over all boundary facets."""
    degree = degree or default_degree(space.dimension)
    fd = _facet_data(space, degree + 2)
    nodal = _nodal_values(space, values)
    nfa, nqf = fd.points.shape[:2]
    flat = fd.points.reshape(-1, space.dimension)
    cells = np.repeat(fd.cells, nqf) if isinstance(map_, MeshSequenceMap) else None
    _, Finv, J, _ = map_.sample_fields(flat, t, cells=cells)
    Finv = Finv.reshape(nfa, nqf, space.dimension, space.dimension)
    J = J.reshape(nfa, nqf)
    vfacet = nodal[fd.nodes]                              # (nfa, nfb, d)
    total = 0.0
    for q in range(nqf):
        vq = np.einsum("b,fbd->fd", fd.vals[q], vfacet)
        conormal = J[:, q, None] * np.einsum("fmd,fm->fd", Finv[:, q], fd.normals)
        total += np.sum(fd.weights[q] * fd.areas *
                        np.einsum("fd,fd->f", conormal, vq))
    return float(total)


def boundary_flux_correction(space, map_, t, boundary_values, degree=None):
    """Flux of the interpolated boundary data divided by the boundary area:
    the constant whose subtraction along the outward normal field restores
    discrete compatibility of the data when no outflow boundary exists."""
    flux = piola_boundary_flux(space, map_, t, boundary_values, degree)
    return flux / boundary_area(space)


def boundary_normal_field(space):
    """Outward unit normal per boundary node, facet normals averaged with
    area weights; zero at interior nodes."""
    mesh = space.mesh
    normals = mesh.boundary_facet_normals()
    areas = mesh.boundary_facet_areas()
    acc = np.zeros((space.n_nodes, space.dimension))
    for nodes, n, a in zip(space.facet_nodes, normals, areas):
        acc[nodes] += a * n
    norm = np.linalg.norm(acc, axis=1)
    nz = norm > 0
    acc[nz] /= norm[nz, None]
    return acc


def _nodal(values):
    if isinstance(values, DiscreteField):
        return values.nodal()
    return np.asarray(values, dtype=float)


def _nodal_values(space, values):
    nodal = _nodal(values)
    if nodal.shape != (space.n_nodes, space.dimension):
        raise ValueError(f"expected nodal values of shape "
                         f"{(space.n_nodes, space.dimension)}, got {nodal.shape}")
    return nodal


def _zero_velocity(space):
    return DiscreteField(space, "velocity")


# ---------------------------------------------------------------------------
# field evaluation helpers
# ---------------------------------------------------------------------------


def cell_quadrature_points(space, degree=None):
    """Reference coordinates of the cell quadrature points, (nc, nq, d),
    plus the combined weights |det| * w_q, (nc, nq)."""
    degree = degree or default_degree(space.dimension)
    data = _cell_data(space, degree)
    geo = _geometry(space)
    weights = geo.det[:, None] * data.rule.weights[None, :]
    return data.points, weights


def velocity_at_points(space, field, degree=None):
    """Velocity field values at the cell quadrature points, (nc, nq, d)."""
    degree = degree or default_degree(space.dimension)
    data = _cell_data(space, degree)
    vc = _nodal(field)[space.cell_nodes]
    return np.einsum("qb,cbd->cqd", data.vals, vc)


def velocity_gradients(space, field, degree=None):
    """Reference-domain gradients (du_a/dx_b) at quadrature points,
    (nc, nq, d, d)."""
    degree = degree or default_degree(space.dimension)
    data = _cell_data(space, degree)
    geo = _geometry(space)
    vc = _nodal(field)[space.cell_nodes]
    nc, nq = data.points.shape[:2]
    d = space.dimension
    out = np.empty((nc, nq, d, d))
    for q in range(nq):
        grads = np.einsum("bm,cmd->cbd", data.lgrads[q], geo.inv)
        out[:, q] = np.einsum("cba,cbm->cam", vc, grads)
    return out


# ---------------------------------------------------------------------------
# the step assembler
# ---------------------------------------------------------------------------


def assemble_step(space, map_, t_k, t_prev, dt, w, u_prev, nu,
                  forcing=None, neumann_data=None, *, stress="symmetric",
                  temam=True, smagorinsky=None, quadrature_degree=None,
                  scheme="backward-euler", u_prev2=None, t_prev2=None,
                  _only_viscous=False):
    """Assemble the sparse blocks of one implicit time step.

    ``w`` is the advection field u^{k-1} - I_h(xi_t^k); ``neumann_data`` maps
    patch ids to traction densities g(x_ref, t, n) -> (n, d), assembled as
    int J g . psi over the facets of that patch (g may be None for a
    homogeneous outflow condition).
    """
    if stress not in ("symmetric", "full-gradient"):
        raise ValueError(f"unknown stress form {stress!r}")
    if space.dimension != map_.dimension:
        raise ValueError("space and map dimensions differ")
    d = space.dimension
    degree = quadrature_degree or default_degree(d)
    data = _cell_data(space, degree)
    geo = _geometry(space)
    nc, nq = data.points.shape[:2]
    nb = data.vals.shape[1]

    F, Finv, Jk = _sample_map(space, map_, t_k, data)
    _, _, Jprev = _sample_map(space, map_, t_prev, data)
    bdf2 = scheme == "bdf2"
    if bdf2:
        if u_prev2 is None or t_prev2 is None:
            raise ValueError("bdf2 needs the two previous states")
        _, _, Jprev2 = _sample_map(space, map_, t_prev2, data)
        Jdot = (3.0 * Jk - 4.0 * Jprev + Jprev2) / (2.0 * dt)
        Jtime = Jk               # weight of the discrete time derivative
        alpha = 1.5
    else:
        Jdot = (Jk - Jprev) / dt
        Jtime = Jprev
        alpha = 1.0

    wc = _nodal(w)[space.cell_nodes]

    Mtime = np.zeros((nc, nb, nb))      # J-weighted mass for the time term
    Sother = np.zeros((nc, nb, nb))     # 0.5 Jdot + C + T + scalar viscous
    # cross[c, i, j, a, b]: test component a, trial component b coupling of
    # the symmetric-stress form, nu J (ghat_i)_b (ghat_j)_a
    cross = np.zeros((nc, nb, nb, d, d)) if stress == "symmetric" else None
    npl = d + 1
    Bloc = np.zeros((nc, npl, nb, d))

    cs = None
    if smagorinsky is not None:
        cs = float(smagorinsky)
        if cs <= 0:
            raise ValueError("eddy-viscosity constant must be positive")

    for q in range(nq):
        base = data.rule.weights[q] * geo.det
        grads = np.einsum("bm,cmd->cbd", data.lgrads[q], geo.inv)
        ghat = np.einsum("cbm,cmd->cbd", grads, Finv[:, q])

        if not _only_viscous:
            Mtime += (base * Jtime[:, q])[:, None, None] * \
                np.outer(data.vals[q], data.vals[q])
            Sother += (0.5 * base * Jdot[:, q])[:, None, None] * \
                np.outer(data.vals[q], data.vals[q])

            wq = np.einsum("b,cbd->cd", data.vals[q], wc)
            z = Jk[:, q, None] * np.einsum("cmd,cd->cm", Finv[:, q], wq)
            ddir = np.einsum("cbd,cd->cb", grads, z)
            Cq = base[:, None, None] * (data.vals[q][None, :, None] *
                                        ddir[:, None, :])
            Sother += Cq
            if temam:
                Sother -= 0.5 * (Cq + np.swapaxes(Cq, 1, 2))

            # pressure coupling
            coeffJ = base * Jk[:, q]
            Bloc += coeffJ[:, None, None, None] * \
                (data.pvals[q][None, :, None, None] * ghat[:, None, :, :])

        # viscosity coefficient, possibly eddy-augmented from the lagged field
        if cs is None:
            nuq = np.full(nc, nu)
        else:
            Gw = np.einsum("cba,cbm->cam", wc, grads)
            Gw = np.einsum("cam,cmd->cad", Gw, Finv[:, q])
            Dw = 0.5 * (Gw + np.swapaxes(Gw, 1, 2))
            rate = np.sqrt(2.0 * np.einsum("cab,cab->c", Dw, Dw))
            nuq = nu + (cs * geo.cell_diam) ** 2 * rate
        coeff = base * Jk[:, q] * nuq
        gdot = np.einsum("cbd,ced->cbe", ghat, ghat)
        Sother += coeff[:, None, None] * gdot
        if stress == "symmetric":
            cross += np.einsum("c,cib,cja->cijab", coeff, ghat, ghat)

    scalar = Sother if _only_viscous else Mtime * (alpha / dt) + Sother
    A = _vector_expand(space, _scalar_csr(space, scalar))
    if stress == "symmetric":
        for a in range(d):
            for b in range(d):
                Eab = sp.coo_matrix(([1.0], ([a], [b])), shape=(d, d))
                A = A + sp.kron(_scalar_csr(space, cross[:, :, :, a, b]), Eab,
                                format="csr")

    if not _only_viscous and temam:
        Tb = _temam_boundary_scalar(space, map_, t_k, w, degree)
        if Tb is not None:
            A = A + _vector_expand(space, Tb)

    prows = np.repeat(space.mesh.cells, nb * d, axis=1).ravel()
    cols_nodes = np.repeat(space.cell_nodes[:, None, :], npl, axis=1)
    pcols = (cols_nodes[..., None] * d + np.arange(d)).ravel()
    B = sp.coo_matrix((Bloc.ravel(), (prows, pcols)),
                      shape=(space.n_pressure_dofs, space.n_velocity_dofs)).tocsr()

    rhs = np.zeros(space.n_velocity_dofs)
    if not _only_viscous:
        Mtime_s = _scalar_csr(space, Mtime)
        if bdf2:
            combo = (2.0 * _nodal(u_prev) - 0.5 * _nodal(u_prev2)) / dt
        else:
            combo = _nodal(u_prev) / dt
        rhs += (Mtime_s @ combo).ravel()
        if forcing is not None:
            rhs += forcing_vector(space, map_, t_k, forcing, degree)
        if neumann_data is not None:
            rhs += _neumann_vector(space, map_, t_k, neumann_data, degree)

    return AssembledStep(A=A.tocsr(), B=B, rhs_u=rhs,
                         constraint_rhs=np.zeros(space.n_pressure_dofs),
                         t=t_k, dt=dt)


def _neumann_vector(space, map_, t, neumann_data, degree):
    """int J g . psi over neumann facets, per-patch traction densities."""
    mesh = space.mesh
    d = space.dimension
    rhs = np.zeros(space.n_velocity_dofs)
    fd = _facet_data(space, degree + 2)
    for patch, g in neumann_data.items():
        sel = np.flatnonzero([lbl.kind == "neumann" and lbl.patch == patch
                              for lbl in mesh.boundary_labels])
        if sel.size == 0 or g is None:
            continue
        pts = fd.points[sel]
        nfa, nqf = pts.shape[:2]
        flat = pts.reshape(-1, d)
        cells = np.repeat(fd.cells[sel], nqf) \
            if isinstance(map_, MeshSequenceMap) else None
        _, _, J, _ = map_.sample_fields(flat, t, cells=cells)
        J = J.reshape(nfa, nqf)
        normals = fd.normals[sel]
        nodes = fd.nodes[sel]
        nfb = nodes.shape[1]
        local = np.zeros((nfa, nfb, d))
        for q in range(nqf):
            gq = np.asarray(g(pts[:, q, :], t, normals), dtype=float)
            coeff = fd.weights[q] * fd.areas[sel] * J[:, q]
            local += coeff[:, None, None] * (fd.vals[q][None, :, None] *
                                             gq[:, None, :])
        np.add.at(rhs, (nodes[..., None] * d + np.arange(d)).ravel(),
                  local.ravel())
    return rhs
