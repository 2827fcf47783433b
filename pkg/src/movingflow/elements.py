"""Lagrange bases on the reference simplex and simplex quadrature.

Quadrature rules are conical-product Gauss-Jacobi rules, positive by
construction and exact for any requested total polynomial degree, with small
tabulated rules for the lowest degrees.  Points are stored in barycentric
coordinates; weights sum to the reference simplex measure 1/d!.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

__all__ = ["ShapeFunctions", "QuadratureRule", "shape_functions", "quadrature",
           "default_degree", "LOCAL_EDGES"]

# local cell edges by local vertex pairs; fixes the midedge node order
LOCAL_EDGES = {
    1: ((0, 1),),
    2: ((0, 1), (0, 2), (1, 2)),
    3: ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)),
}

MAX_QUADRATURE_DEGREE = 30


def default_degree(dimension):
    """Default quadrature exactness: exact for all products of quadratic
    basis functions with cellwise-linear gradients on affine cells."""
    return 6 if dimension == 2 else 5


class ShapeFunctions:
    """Nodal Lagrange basis (degree 1 or 2) on the reference simplex.

    ``values``/``gradients`` take barycentric points of shape (n, d+1);
    gradients are with respect to the local cartesian coordinates
    (lambda_0 = 1 - sum x_i, lambda_i = x_i).
    """

    def __init__(self, degree, dimension):
        if degree not in (1, 2):
            raise ValueError(f"unsupported basis degree {degree}")
        if dimension not in (1, 2, 3):
            raise ValueError(f"unsupported dimension {dimension}")
        self.degree = degree
        self.dimension = dimension
        self.n_basis = dimension + 1 if degree == 1 else \
            dimension + 1 + len(LOCAL_EDGES[dimension])

    def _lambda_grads(self):
        d = self.dimension
        g = np.zeros((d + 1, d))
        g[0] = -1.0
        g[1:] = np.eye(d)
        return g

    def values(self, bary):
        bary = np.atleast_2d(np.asarray(bary, dtype=float))
        d = self.dimension
        if self.degree == 1:
            return bary.copy()
        out = np.empty((bary.shape[0], self.n_basis))
        out[:, :d + 1] = bary * (2.0 * bary - 1.0)
        for k, (a, b) in enumerate(LOCAL_EDGES[d]):
            out[:, d + 1 + k] = 4.0 * bary[:, a] * bary[:, b]
        return out

    def gradients(self, bary):
        bary = np.atleast_2d(np.asarray(bary, dtype=float))
        d = self.dimension
        lg = self._lambda_grads()
        if self.degree == 1:
            return np.broadcast_to(lg, (bary.shape[0],) + lg.shape).copy()
        out = np.empty((bary.shape[0], self.n_basis, d))
        out[:, :d + 1, :] = (4.0 * bary - 1.0)[:, :, None] * lg[None, :, :]
        for k, (a, b) in enumerate(LOCAL_EDGES[d]):
            out[:, d + 1 + k, :] = 4.0 * (bary[:, a, None] * lg[b] +
                                          bary[:, b, None] * lg[a])
        return out

    def node_barycentric(self):
        """Barycentric coordinates of the nodal points (vertices, then
        midedge points for degree 2)."""
        d = self.dimension
        nodes = [np.eye(d + 1)[i] for i in range(d + 1)]
        if self.degree == 2:
            for a, b in LOCAL_EDGES[d]:
                nodes.append(0.5 * (np.eye(d + 1)[a] + np.eye(d + 1)[b]))
        return np.array(nodes)


@lru_cache(maxsize=None)
def shape_functions(degree, dimension):
    return ShapeFunctions(degree, dimension)


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray    # (nq, d+1) barycentric
    weights: np.ndarray   # (nq,), sum = 1/d!
    exactness: int

    @property
    def n_points(self):
        return len(self.weights)


def _gauss01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _jacobi01(n, alpha):
    # Gauss-Jacobi with weight (1-x)^alpha on [-1,1], mapped to [0,1];
    # the extra 2^-(alpha+1) absorbs the weight-function rescaling
    x, w = roots_jacobi(n, alpha, 0.0)
    return 0.5 * (x + 1.0), w * 0.5 ** (alpha + 1)


def _conical_rule(d, degree):
    n = max(1, (degree + 2) // 2)   # 2n-1 >= degree
    if d == 2:
        # x = u(1-v), y = v; area element (1-v) du dv
        u, wu = _gauss01(n)
        v, wv = _jacobi01(n, 1.0)
        U, V = np.meshgrid(u, v, indexing="ij")
        W = np.outer(wu, wv)
        x = U * (1.0 - V)
        y = V
        pts = np.stack([1.0 - x.ravel() - y.ravel(), x.ravel(), y.ravel()], axis=1)
        return pts, W.ravel()
    # x = u(1-v)(1-w), y = v(1-w), z = w; element (1-v)(1-w)^2 du dv dw
    u, wu = _gauss01(n)
    v, wv = _jacobi01(n, 1.0)
    w, ww = _jacobi01(n, 2.0)
    U, V, W3 = np.meshgrid(u, v, w, indexing="ij")
    Wt = np.einsum("i,j,k->ijk", wu, wv, ww)
    x = U * (1.0 - V) * (1.0 - W3)
    y = V * (1.0 - W3)
    z = W3
    lam0 = 1.0 - x - y - z
    pts = np.stack([lam0.ravel(), x.ravel(), y.ravel(), z.ravel()], axis=1)
    return pts, Wt.ravel()


@lru_cache(maxsize=None)
def quadrature(dimension, exactness):
    """Positive-weight rule on the reference simplex, exact for all
    polynomials of total degree <= ``exactness``."""
    if dimension not in (1, 2, 3):
        raise ValueError(f"unsupported dimension {dimension}")
    exactness = int(exactness)
    if exactness < 1 or exactness > MAX_QUADRATURE_DEGREE:
        raise ValueError(f"unsupported quadrature degree {exactness}")
    if dimension == 1:
        x, w = _gauss01(max(1, (exactness + 2) // 2))
        pts = np.stack([1.0 - x, x], axis=1)
        return QuadratureRule(points=pts, weights=w, exactness=exactness)
    if exactness == 1:
        d = dimension
        pts = np.full((1, d + 1), 1.0 / (d + 1))
        return QuadratureRule(points=pts, weights=np.array([1.0 / math.factorial(d)]),
                              exactness=1)
    if exactness == 2:
        d = dimension
        # symmetric interior rule: permutations of (a, b, .., b)
        if d == 2:
            a, b = 2.0 / 3.0, 1.0 / 6.0
        else:
            a = 0.5854101966249685
            b = 0.1381966011250105
        pts = np.full((d + 1, d + 1), b)
        np.fill_diagonal(pts, a)
        w = np.full(d + 1, 1.0 / math.factorial(d) / (d + 1))
        return QuadratureRule(points=pts, weights=w, exactness=2)
    pts, w = _conical_rule(dimension, exactness)
    return QuadratureRule(points=pts, weights=w, exactness=exactness)
