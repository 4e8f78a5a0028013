"""Scaled monomial bases on cells and faces, quadrature, L2 projectors."""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels


def dim_cell(q):
    """Dimension of P^q in two variables, (q+1)(q+2)/2 (0 for q < 0)."""
    return 0 if q < 0 else (q + 1) * (q + 2) // 2


def dim_face(q):
    return 0 if q < 0 else q + 1


@lru_cache(maxsize=None)
def monomial_exponents(q):
    """Exponents (a, b) ordered by total degree; the first row is (0, 0)."""
    exps = [(d - b, b) for d in range(q + 1) for b in range(d + 1)]
    return np.array(exps, dtype=np.int64).reshape(-1, 2)


# --------------------------------------------------------------------------
# quadrature
# --------------------------------------------------------------------------

@lru_cache(maxsize=None)
def segment_rule(degree):
    """Gauss-Legendre rule on [0, 1] exact for polynomials of ``degree``."""
    n = max(1, degree // 2 + 1)
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def triangle_rule(degree):
    """Collapsed Gauss rule on the reference triangle.

    Returns barycentric coordinates ``(Q, 3)`` and weights summing to one
    (so that ``area * sum(w * f)`` integrates over a physical triangle).
    The Duffy map adds one degree in the collapsed direction, hence the
    ``degree + 1`` rule there.  All weights are positive.
    """
    xa, wa = segment_rule(degree + 1)
    xb, wb = segment_rule(degree)
    u, v = np.meshgrid(xa, xb, indexing="ij")
    wu, wv = np.meshgrid(wa, wb, indexing="ij")
    # (u, v) in [0,1]^2 -> (s, t) = (u, v (1 - u)), jacobian (1 - u)
    s = u.ravel()
    t = (v * (1.0 - u)).ravel()
    w = 2.0 * (wu * wv * (1.0 - u)).ravel()
    bary = np.column_stack([1.0 - s - t, s, t])
    return bary, w


def integrate_triangles(f, points, tris, degree):
    """Integrate a vectorised ``f(x, y)`` over a set of triangles."""
    bary, w = triangle_rule(degree)
    area = kernels.triangle_areas(points, tris)
    xq = np.einsum("qk,tkd->tqd", bary, points[tris])
    vals = np.asarray(f(xq[..., 0], xq[..., 1]), dtype=float)
    vals = np.broadcast_to(vals, xq.shape[:2])
    return float(np.sum(area[:, None] * w[None, :] * vals))


# --------------------------------------------------------------------------
# bases
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CellPolyBasis:
    """psi_a(x) = ((x - x_K) / H_K)^a, |a| <= degree; psi_1 == 1."""

    center: np.ndarray
    scale: float
    degree: int

    @property
    def dim(self):
        return dim_cell(self.degree)

    @property
    def exponents(self):
        return monomial_exponents(self.degree)

    def eval(self, x, y):
        """Values at points, shape ``x.shape + (dim,)``."""
        e = self.exponents
        xs = (np.asarray(x, float) - self.center[0]) / self.scale
        ys = (np.asarray(y, float) - self.center[1]) / self.scale
        return xs[..., None] ** e[:, 0] * ys[..., None] ** e[:, 1]

    def evaluate(self, coeffs, x, y):
        return self.eval(x, y) @ np.asarray(coeffs, float)

    def gram(self, points, tris):
        """Mass matrix on the union of ``tris`` (exact for the basis degree)."""
        bary, w = triangle_rule(2 * max(self.degree, 0) + 2)
        area = kernels.triangle_areas(points, tris)
        xq = np.einsum("qk,tkd->tqd", bary, points[tris])
        psi = self.eval(xq[..., 0], xq[..., 1])
        wt = area[:, None] * w[None, :]
        return np.einsum("tq,tqa,tqb->ab", wt, psi, psi)

    def moments_of(self, f, points, tris, degree):
        """(f, psi_a) over the triangles, with a rule of the given degree."""
        bary, w = triangle_rule(degree)
        area = kernels.triangle_areas(points, tris)
        xq = np.einsum("qk,tkd->tqd", bary, points[tris])
        vals = np.broadcast_to(np.asarray(f(xq[..., 0], xq[..., 1]), float), xq.shape[:2])
        psi = self.eval(xq[..., 0], xq[..., 1])
        return np.einsum("tq,tq,tqa->a", area[:, None] * w[None, :], vals, psi)


@dataclass(frozen=True)
class FacePolyBasis:
    """psi_j(s) = s^j with s = (x - mid_F) . t_F / |F| in [-1/2, 1/2]."""

    a: np.ndarray
    b: np.ndarray
    degree: int

    @property
    def length(self):
        return float(np.hypot(*(self.b - self.a)))

    @property
    def mid(self):
        return 0.5 * (self.a + self.b)

    @property
    def tangent(self):
        return (self.b - self.a) / self.length

    @property
    def dim(self):
        return dim_face(self.degree)

    def coord(self, x, y):
        return ((np.asarray(x, float) - self.mid[0]) * self.tangent[0]
                + (np.asarray(y, float) - self.mid[1]) * self.tangent[1]) / self.length

    def eval(self, x, y):
        return self.coord(x, y)[..., None] ** np.arange(self.dim)

    def eval_s(self, s):
        return np.asarray(s, float)[..., None] ** np.arange(self.dim)

    def gram(self):
        ts, w = segment_rule(2 * self.degree + 2)
        psi = self.eval_s(ts - 0.5)
        return self.length * np.einsum("q,qa,qb->ab", w, psi, psi)

    def moments_of(self, g, degree):
        """(g, psi_j)_F for a vectorised ``g(x, y)``."""
        ts, w = segment_rule(degree)
        x = self.a[0] + ts * (self.b[0] - self.a[0])
        y = self.a[1] + ts * (self.b[1] - self.a[1])
        vals = np.broadcast_to(np.asarray(g(x, y), float), ts.shape)
        return self.length * (w * vals) @ self.eval_s(ts - 0.5)

    def one_moments(self):
        """(psi_j, 1)_F."""
        return self.gram()[0]


# --------------------------------------------------------------------------
# projectors
# --------------------------------------------------------------------------

def _gram_solve(gram, rhs, what):
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e14:
        raise ValueError(f"singular Gram matrix on {what} (cond={cond:.3e})")
    return np.linalg.solve(gram, rhs)


def project_cell(f, basis, points, tris, quad_degree=None):
    """Coefficients of the L2 projection of ``f`` onto ``basis`` over ``tris``.

    ``f`` is a vectorised callable ``f(x, y)``; ``tris`` is the subcell
    triangulation of the cell used for quadrature.
    """
    if quad_degree is None:
        quad_degree = 2 * basis.degree + 6
    rhs = basis.moments_of(f, points, tris, quad_degree)
    return _gram_solve(basis.gram(points, tris), rhs, "cell")


def project_face(g, basis, quad_degree=None):
    """Coefficients of the L2 projection of ``g`` onto a face basis."""
    if quad_degree is None:
        quad_degree = 2 * basis.degree + 6
    return _gram_solve(basis.gram(), basis.moments_of(g, quad_degree), "face")


def project_face_trace(values, nodes, points, basis):
    """Project a fine P1 trace onto ``basis``.

    ``nodes`` are the ordered node ids along the face and ``values`` the
    nodal values there; integration is exact subedge by subedge.
    """
    nodes = np.asarray(nodes)
    edges = np.column_stack([np.arange(len(nodes) - 1), np.arange(1, len(nodes))])
    ts, w = segment_rule(basis.degree + 1)
    mom = kernels.edge_poly_moments(points[nodes], edges, len(nodes), basis.mid,
                                    basis.tangent, basis.length, basis.dim, ts, w)
    return _gram_solve(basis.gram(), mom @ np.asarray(values, float), "face")
