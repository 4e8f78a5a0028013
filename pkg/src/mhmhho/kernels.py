"""Hot P1 assembly kernels.

Every kernel exists twice: a numba ``@njit`` loop (``*_nb``) and a vectorised
numpy version (``*_np``).  The public names dispatch to the numba variant
unless numba is missing or ``MHMHHO_DISABLE_NUMBA`` is set.  Both variants
must agree to rounding; ``tests/test_kernels.py`` checks this.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "element_stiffness",
    "cell_poly_moments",
    "edge_poly_moments",
    "load_vector",
    "triangle_areas",
]


def triangle_areas(points, tris):
    p0 = points[tris[:, 0]]
    p1 = points[tris[:, 1]]
    p2 = points[tris[:, 2]]
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))


# --------------------------------------------------------------------------
# element stiffness: area * grad(lam_i)^T A grad(lam_j), A constant per triangle
# --------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def element_stiffness_nb(points, tris, acoef):
    nt = tris.shape[0]
    out = np.empty((nt, 3, 3))
    g = np.empty((3, 2))
    for t in range(nt):
        x0 = points[tris[t, 0], 0]
        y0 = points[tris[t, 0], 1]
        x1 = points[tris[t, 1], 0]
        y1 = points[tris[t, 1], 1]
        x2 = points[tris[t, 2], 0]
        y2 = points[tris[t, 2], 1]
        det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        area = 0.5 * det
        g[0, 0] = (y1 - y2) / det
        g[0, 1] = (x2 - x1) / det
        g[1, 0] = (y2 - y0) / det
        g[1, 1] = (x0 - x2) / det
        g[2, 0] = (y0 - y1) / det
        g[2, 1] = (x1 - x0) / det
        a00 = acoef[t, 0, 0]
        a01 = acoef[t, 0, 1]
        a10 = acoef[t, 1, 0]
        a11 = acoef[t, 1, 1]
        for i in range(3):
            ax = a00 * g[i, 0] + a01 * g[i, 1]
            ay = a10 * g[i, 0] + a11 * g[i, 1]
            for j in range(3):
                out[t, i, j] = area * (ax * g[j, 0] + ay * g[j, 1])
    return out


def element_stiffness_np(points, tris, acoef):
    p0 = points[tris[:, 0]]
    p1 = points[tris[:, 1]]
    p2 = points[tris[:, 2]]
    det = ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
           - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))
    g = np.empty((tris.shape[0], 3, 2))
    g[:, 0, 0] = p1[:, 1] - p2[:, 1]
    g[:, 0, 1] = p2[:, 0] - p1[:, 0]
    g[:, 1, 0] = p2[:, 1] - p0[:, 1]
    g[:, 1, 1] = p0[:, 0] - p2[:, 0]
    g[:, 2, 0] = p0[:, 1] - p1[:, 1]
    g[:, 2, 1] = p1[:, 0] - p0[:, 0]
    g /= det[:, None, None]
    ag = np.einsum("tab,tib->tia", acoef, g)
    return 0.5 * det[:, None, None] * np.einsum("tia,tja->tij", ag, g)


# --------------------------------------------------------------------------
# cell moments: int_T psi_alpha * lam_i over all triangles, scattered to nodes
# --------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def cell_poly_moments_nb(points, tris, nnodes, center, scale, exps, qbary, qw):
    nb = exps.shape[0]
    nq = qw.shape[0]
    out = np.zeros((nb, nnodes))
    for t in range(tris.shape[0]):
        i0 = tris[t, 0]
        i1 = tris[t, 1]
        i2 = tris[t, 2]
        x0 = points[i0, 0]
        y0 = points[i0, 1]
        x1 = points[i1, 0]
        y1 = points[i1, 1]
        x2 = points[i2, 0]
        y2 = points[i2, 1]
        area = 0.5 * ((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))
        for q in range(nq):
            l0 = qbary[q, 0]
            l1 = qbary[q, 1]
            l2 = qbary[q, 2]
            xs = ((l0 * x0 + l1 * x1 + l2 * x2) - center[0]) / scale
            ys = ((l0 * y0 + l1 * y1 + l2 * y2) - center[1]) / scale
            w = qw[q] * area
            for a in range(nb):
                v = w * xs ** exps[a, 0] * ys ** exps[a, 1]
                out[a, i0] += v * l0
                out[a, i1] += v * l1
                out[a, i2] += v * l2
    return out


def cell_poly_moments_np(points, tris, nnodes, center, scale, exps, qbary, qw):
    area = triangle_areas(points, tris)
    # quadrature points: (T, Q, 2)
    xq = np.einsum("qk,tkd->tqd", qbary, points[tris])
    s = (xq - center) / scale
    psi = s[..., 0, None] ** exps[:, 0] * s[..., 1, None] ** exps[:, 1]  # (T,Q,nb)
    w = area[:, None] * qw[None, :]
    local = np.einsum("tq,tqa,qk->tak", w, psi, qbary)  # (T,nb,3)
    out = np.zeros((exps.shape[0], nnodes))
    for k in range(3):
        for a in range(exps.shape[0]):
            out[a] += np.bincount(tris[:, k], weights=local[:, a, k], minlength=nnodes)
    return out


# --------------------------------------------------------------------------
# edge moments: int_e psi_j(s) * hat_i along sub-edges of one straight face
# --------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def edge_poly_moments_nb(points, edges, nnodes, mid, tangent, length, nbasis, qs, qw):
    out = np.zeros((nbasis, nnodes))
    for e in range(edges.shape[0]):
        i0 = edges[e, 0]
        i1 = edges[e, 1]
        x0 = points[i0, 0]
        y0 = points[i0, 1]
        x1 = points[i1, 0]
        y1 = points[i1, 1]
        le = np.sqrt((x1 - x0) ** 2 + (y1 - y0) ** 2)
        for q in range(qw.shape[0]):
            t = qs[q]
            x = (1.0 - t) * x0 + t * x1
            y = (1.0 - t) * y0 + t * y1
            s = ((x - mid[0]) * tangent[0] + (y - mid[1]) * tangent[1]) / length
            w = qw[q] * le
            p = 1.0
            for j in range(nbasis):
                out[j, i0] += w * p * (1.0 - t)
                out[j, i1] += w * p * t
                p *= s
    return out


def edge_poly_moments_np(points, edges, nnodes, mid, tangent, length, nbasis, qs, qw):
    p0 = points[edges[:, 0]]
    p1 = points[edges[:, 1]]
    le = np.linalg.norm(p1 - p0, axis=1)
    x = p0[:, None, :] * (1.0 - qs)[None, :, None] + p1[:, None, :] * qs[None, :, None]
    s = ((x - mid) @ tangent) / length  # (E,Q)
    psi = s[..., None] ** np.arange(nbasis)  # (E,Q,nb)
    w = le[:, None] * qw[None, :]
    m0 = np.einsum("eq,eqj,q->ej", w, psi, 1.0 - qs)
    m1 = np.einsum("eq,eqj,q->ej", w, psi, qs)
    out = np.zeros((nbasis, nnodes))
    for j in range(nbasis):
        out[j] += np.bincount(edges[:, 0], weights=m0[:, j], minlength=nnodes)
        out[j] += np.bincount(edges[:, 1], weights=m1[:, j], minlength=nnodes)
    return out


# --------------------------------------------------------------------------
# load vector from samples of f at the quadrature points of every triangle
# --------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def load_vector_nb(tris, area, fq, qbary, qw, nnodes):
    out = np.zeros(nnodes)
    for t in range(tris.shape[0]):
        for q in range(qw.shape[0]):
            v = qw[q] * area[t] * fq[t, q]
            out[tris[t, 0]] += v * qbary[q, 0]
            out[tris[t, 1]] += v * qbary[q, 1]
            out[tris[t, 2]] += v * qbary[q, 2]
    return out


def load_vector_np(tris, area, fq, qbary, qw, nnodes):
    local = (area[:, None] * fq * qw[None, :]) @ qbary  # (T,3)
    out = np.zeros(nnodes)
    for k in range(3):
        out += np.bincount(tris[:, k], weights=local[:, k], minlength=nnodes)
    return out


if USE_NUMBA:
    element_stiffness = element_stiffness_nb
    cell_poly_moments = cell_poly_moments_nb
    edge_poly_moments = edge_poly_moments_nb
    load_vector = load_vector_nb
else:
    element_stiffness = element_stiffness_np
    cell_poly_moments = cell_poly_moments_np
    edge_poly_moments = edge_poly_moments_np
    load_vector = load_vector_np
