"""Naive dense reference assembly for fixed-domain (identity-map) forms.

Plain loops over cells, quadrature points and basis pairs; used to check the
vectorized assembly against an independent code path.
"""

import numpy as np

from movingflow.elements import quadrature, shape_functions


def _cell_setup(mesh, degree):
    d = mesh.dimension
    rule = quadrature(d, degree)
    v2 = shape_functions(2, d)
    v1 = shape_functions(1, d)
    vals = v2.values(rule.points)
    grads_loc = v2.gradients(rule.points)
    pvals = v1.values(rule.points)
    return rule, vals, grads_loc, pvals


def _geometry(mesh, c):
    verts = mesh.vertices[mesh.cells[c]]
    G = (verts[1:] - verts[0]).T
    Ginv = np.linalg.inv(G)
    return verts, abs(np.linalg.det(G)), Ginv


def mass(space, degree):
    mesh = space.mesh
    d = mesh.dimension
    rule, vals, grads_loc, _ = _cell_setup(mesh, degree)
    n = space.n_velocity_dofs
    M = np.zeros((n, n))
    for c in range(mesh.n_cells):
        nodes = space.cell_nodes[c]
        _, det, _ = _geometry(mesh, c)
        for q, wq in enumerate(rule.weights):
            for i, ni in enumerate(nodes):
                for j, nj in enumerate(nodes):
                    contrib = wq * det * vals[q, i] * vals[q, j]
                    for a in range(d):
                        M[ni * d + a, nj * d + a] += contrib
    return M


def viscous(space, nu, stress, degree):
    mesh = space.mesh
    d = mesh.dimension
    rule, vals, grads_loc, _ = _cell_setup(mesh, degree)
    n = space.n_velocity_dofs
    A = np.zeros((n, n))
    for c in range(mesh.n_cells):
        nodes = space.cell_nodes[c]
        _, det, Ginv = _geometry(mesh, c)
        for q, wq in enumerate(rule.weights):
            g = grads_loc[q] @ Ginv          # (nb, d) physical gradients
            for i, ni in enumerate(nodes):
                for j, nj in enumerate(nodes):
                    for a in range(d):
                        for b in range(d):
                            if stress == "full-gradient":
                                val = nu * (a == b) * g[i] @ g[j]
                            else:
                                # 2 nu D(phi_j e_b) : D(phi_i e_a)
                                val = nu * ((a == b) * (g[i] @ g[j]) +
                                            g[i][b] * g[j][a])
                            A[ni * d + a, nj * d + b] += wq * det * val
    return A


def divergence(space, degree):
    mesh = space.mesh
    d = mesh.dimension
    rule, vals, grads_loc, pvals = _cell_setup(mesh, degree)
    B = np.zeros((space.n_pressure_dofs, space.n_velocity_dofs))
    for c in range(mesh.n_cells):
        nodes = space.cell_nodes[c]
        pnodes = mesh.cells[c]
        _, det, Ginv = _geometry(mesh, c)
        for q, wq in enumerate(rule.weights):
            g = grads_loc[q] @ Ginv
            for i, pi in enumerate(pnodes):
                for j, nj in enumerate(nodes):
                    for b in range(d):
                        B[pi, nj * d + b] += wq * det * pvals[q, i] * g[j][b]
    return B


def convection(space, w_nodal, degree):
    """Convection (w . grad u, psi) and the by-parts skew term without the
    boundary integral (valid for meshes without outflow facets)."""
    mesh = space.mesh
    d = mesh.dimension
    rule, vals, grads_loc, _ = _cell_setup(mesh, degree)
    n = space.n_velocity_dofs
    C = np.zeros((n, n))
    T = np.zeros((n, n))
    for c in range(mesh.n_cells):
        nodes = space.cell_nodes[c]
        _, det, Ginv = _geometry(mesh, c)
        wc = w_nodal[nodes]
        for q, wq in enumerate(rule.weights):
            g = grads_loc[q] @ Ginv
            wval = vals[q] @ wc
            for i, ni in enumerate(nodes):
                for j, nj in enumerate(nodes):
                    cij = wq * det * vals[q, i] * (g[j] @ wval)
                    cji = wq * det * vals[q, j] * (g[i] @ wval)
                    for a in range(d):
                        C[ni * d + a, nj * d + a] += cij
                        T[ni * d + a, nj * d + a] -= 0.5 * (cij + cji)
    return C, T
