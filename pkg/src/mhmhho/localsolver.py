"""Per-cell fine P1 solver and the three local basis families.

The discrete local space of a cell K is *defined* as the span of the primal
functions

    1,  T^s(psi_i) (2 <= i <= dim P^m),  T^N(psi^F_j) (F in F_K, j <= dim P^k),

each obtained by one zero-mean Neumann solve on the fine submesh of K.  The
dual (moment-based) and face-based families are changes of basis inside
that span, so both global methods see exactly the same space.

Every function w of the span satisfies, for *all* fine P1 functions v,

    (A grad w, grad v)_K = (g_w, v)_K + <mu_w, v>_dK

with a divergence polynomial g_w in P^m(K) and a flux polynomial mu_w in
P^k(F_K).  These are tracked per column (``div`` / ``flux`` matrices) and
carried to the other families by linearity.

Column / DOF layout (both of size ``n_m + n_faces * n_k``)::

    [ cell block (n_m) | face 0 (n_k) | face 1 (n_k) | ... ]

For primal columns the cell block is ``[1, T^s(psi_2), ...]``.
"""
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .polyspace import CellPolyBasis, FacePolyBasis, dim_cell, dim_face, segment_rule, triangle_rule

log = logging.getLogger(__name__)

COND_LIMIT = 1e12


class UnisolvenceError(RuntimeError):
    """The moment map on the discrete local space is (numerically) singular."""


class LocalSolveError(RuntimeError):
    pass


class LocalFineSpace:
    """Fine P1 space on one coarse cell, with its solver and moment maps."""

    def __init__(self, fine, cell, coefficient, k, m):
        self.fine = fine
        self.cell = cell
        self.k = k
        self.m = m
        coarse = fine.coarse
        self.points = fine.cell_points(cell)
        self.tris = fine.cell_tris[cell]
        self.nn = len(self.points)
        self.area = float(coarse.areas[cell])
        self.faces = coarse.cell_faces[cell]
        self.signs = coarse.cell_signs[cell]

        tri_xy = self.points[self.tris]
        cen = tri_xy.mean(axis=1)
        acoef = np.ascontiguousarray(coefficient(cen[:, 0], cen[:, 1]))
        self.a_flat = float(np.linalg.eigvalsh(acoef)[:, 0].min())
        ke = kernels.element_stiffness(self.points, self.tris, acoef)
        rows = np.repeat(self.tris, 3, axis=1).ravel()
        cols = np.tile(self.tris, (1, 3)).ravel()
        self.stiffness = sp.csr_matrix((ke.ravel(), (rows, cols)), shape=(self.nn, self.nn))
        self.tri_area = kernels.triangle_areas(self.points, self.tris)
        self.mass_row = np.bincount(self.tris.ravel(), weights=np.repeat(self.tri_area / 3, 3),
                                    minlength=self.nn)
        self.acoef = acoef

        self.cell_basis = CellPolyBasis(coarse.centroids[cell].copy(), float(coarse.diameters[cell]), m)
        self.face_bases = []
        for f in self.faces:
            a, b = coarse.face_points(f)
            self.face_bases.append(FacePolyBasis(a, b, k))
        self.n_m = dim_cell(m)
        self.n_k = dim_face(k)
        self.n_faces = len(self.faces)
        self.ndof = self.n_m + self.n_faces * self.n_k

        self.cell_gram = self.cell_basis.gram(self.points, self.tris)
        self.cell_moments = self.cell_moment_matrix(m)
        self.face_grams = [fb.gram() for fb in self.face_bases]
        self.face_moments = []
        ts, w = segment_rule(2 * k + 2)
        for i, fb in enumerate(self.face_bases):
            loc = fine.local_face_nodes(cell, i)
            edges = np.column_stack([loc[:-1], loc[1:]])
            self.face_moments.append(kernels.edge_poly_moments(
                self.points, edges, self.nn, fb.mid, fb.tangent, fb.length, fb.dim, ts, w))
        self.face_one = [g[0].copy() for g in self.face_grams]

    # ------------------------------------------------------------------ moments
    def cell_moment_matrix(self, degree):
        """(psi_a, phi_node)_K for the cell basis of ``degree``, exact."""
        basis = CellPolyBasis(self.cell_basis.center, self.cell_basis.scale, degree)
        bary, w = triangle_rule(2 * max(self.k, degree) + 2)
        return kernels.cell_poly_moments(self.points, self.tris, self.nn, basis.center,
                                         basis.scale, basis.exponents, bary, w)

    def face_slice(self, i):
        return slice(self.n_m + i * self.n_k, self.n_m + (i + 1) * self.n_k)

    def project_cell(self, v):
        """Coefficients of Pi^m_K of fine functions (columns of ``v``)."""
        return np.linalg.solve(self.cell_gram, self.cell_moments @ v)

    def project_face(self, v, i):
        return np.linalg.solve(self.face_grams[i], self.face_moments[i] @ v)

    def dof_matrix(self):
        """Rows mapping fine nodal vectors to the DOFs (Pi^m_K, Pi^k_F...)."""
        rows = [np.linalg.solve(self.cell_gram, self.cell_moments)]
        rows += [np.linalg.solve(g, b) for g, b in zip(self.face_grams, self.face_moments)]
        return np.vstack(rows)

    def dofs(self, v):
        return self.dof_matrix() @ v

    def energy(self, u, v=None):
        v = u if v is None else v
        return float(u @ (self.stiffness @ v))

    # ------------------------------------------------------------------ solves
    @cached_property
    def _factor(self):
        aug = sp.bmat([[self.stiffness, self.mass_row[:, None]],
                       [self.mass_row[None, :], None]], format="csc")
        self._aug = aug
        try:
            return spla.splu(aug)
        except RuntimeError as exc:
            raise LocalSolveError(f"cell {self.cell}: singular augmented system") from exc

    def solve(self, rhs, check=True):
        """Zero-mean solution of (A grad u, grad v) = rhs(v) for zero-mean v.

        ``rhs`` holds the load values (one column per problem).  The
        constant part of the load is absorbed by the mean-value multiplier.
        """
        rhs = np.asarray(rhs, float)
        vec = rhs.ndim == 1
        b = rhs.reshape(self.nn, -1)
        full = np.vstack([b, np.zeros((1, b.shape[1]))])
        x = self._factor.solve(full)
        if check:
            res = self._aug @ x - full
            scale = np.abs(full).max(axis=0) + (abs(self._aug) @ np.abs(x)).max(axis=0)
            rel = np.abs(res).max(axis=0) / np.where(scale > 0, scale, 1.0)
            if np.any(rel > 1e-10):
                raise LocalSolveError(f"cell {self.cell}: residual {rel.max():.2e}")
        u = x[:-1]
        return u[:, 0] if vec else u

    def lift_neumann(self, mu):
        """Discrete T^N_K: ``mu`` is a list of face coefficient vectors."""
        rhs = np.zeros(self.nn)
        for i, coeffs in enumerate(mu):
            rhs += np.asarray(coeffs, float) @ self.face_moments[i]
        return self.solve(rhs)

    def lift_source(self, g):
        """Discrete T^s_K of a cell polynomial with coefficients ``g``."""
        g = np.asarray(g, float)
        deg = _degree_of_dim(len(g))
        mom = self.cell_moments if deg == self.m else self.cell_moment_matrix(deg)
        return self.solve(g @ mom)


def _degree_of_dim(n):
    q = 0
    while dim_cell(q) < n:
        q += 1
    if dim_cell(q) != n:
        raise ValueError(f"{n} is not the dimension of a bivariate polynomial space")
    return q


@dataclass
class LocalBasisSet:
    """Offline data of one cell.

    ``P``        fine nodal coefficients of the primal functions (nn, ndof)
    ``div``      divergence polynomial (psi^K coefficients) of each primal column
    ``flux``     flux polynomial (psi^F coefficients, face-stacked) of each column
    ``S``        DOFs of the primal columns; ``D = S^{-1}`` gives the dual basis
    ``gamma``    divergence data of the dual basis, ``div @ D``
    ``mu``       flux data of the dual basis, ``flux @ D``
    ``C``        face-based coordinates (primal), ``fb_flux = flux @ C``
    ``E``        energy Gram of the primal columns
    """

    k: int
    m: int
    n_m: int
    n_k: int
    n_faces: int
    P: np.ndarray
    div: np.ndarray
    flux: np.ndarray
    S: np.ndarray
    D: np.ndarray
    gamma: np.ndarray
    mu: np.ndarray
    C: np.ndarray
    fb_flux: np.ndarray
    E: np.ndarray

    ARRAYS = ("P", "div", "flux", "S", "D", "gamma", "mu", "C", "fb_flux", "E")

    @property
    def ndof(self):
        return self.n_m + self.n_faces * self.n_k

    def face_slice(self, i):
        return slice(self.n_m + i * self.n_k, self.n_m + (i + 1) * self.n_k)

    @property
    def cell_slice(self):
        return slice(0, self.n_m)

    # blocks of the dual multiplier data
    @property
    def G_KK(self):
        return self.gamma[:, : self.n_m]

    def G_KF(self, i):
        return self.gamma[:, self.face_slice(i)]

    def flux_rows(self, i):
        """Rows of ``flux``-type matrices belonging to the i-th face."""
        return slice(i * self.n_k, (i + 1) * self.n_k)

    def M_FK(self, i):
        return self.mu[self.flux_rows(i), : self.n_m]

    def M_FF(self, i_row, i_col):
        return self.mu[self.flux_rows(i_row), self.face_slice(i_col)]

    # dual / face-based functions as fine nodal vectors
    @property
    def dual(self):
        return self.P @ self.D

    @property
    def face_based(self):
        return self.P @ self.C


def build_primal_basis(space):
    """Primal columns, their divergence/flux data, and energy Gram."""
    n_m, n_k, nf = space.n_m, space.n_k, space.n_faces
    ndof = space.ndof
    rhs = np.zeros((space.nn, ndof - 1))
    rhs[:, : n_m - 1] = space.cell_moments[1:].T
    for i in range(nf):
        sl = space.face_slice(i)
        rhs[:, sl.start - 1: sl.stop - 1] = space.face_moments[i].T
    P = np.empty((space.nn, ndof))
    P[:, 0] = 1.0
    if ndof > 1:
        P[:, 1:] = space.solve(rhs)

    div = np.zeros((n_m, ndof))
    means = space.cell_gram[:, 0] / space.area          # Pi^0 psi_i
    for i in range(1, n_m):
        div[i, i] = 1.0
        div[0, i] = -means[i]
    flux = np.zeros((nf * n_k, ndof))
    for i in range(nf):
        sl = space.face_slice(i)
        div[0, sl] = -space.face_one[i] / space.area
        flux[sl.start - n_m: sl.stop - n_m, sl] = np.eye(n_k)
    E = P.T @ (space.stiffness @ P)
    return P, div, flux, E


def _checked_inverse(M, what, cell):
    cond = np.linalg.cond(M)
    log.debug("cell %d: cond(%s) = %.3e", cell, what, cond)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise UnisolvenceError(f"cell {cell}: {what} is numerically singular (cond={cond:.3e})")
    return np.linalg.inv(M), cond


def build_dual_basis(space, P, div, flux):
    """S (DOFs of primal columns), D = S^{-1}, and the dual multiplier data."""
    S = space.dof_matrix() @ P
    D, cond = _checked_inverse(S, "moment matrix S", space.cell)
    return S, D, div @ D, flux @ D, cond


def build_face_based_basis(space, S, div, flux):
    """Face-based coordinates: divergence coefficients and face DOFs prescribed."""
    cond_rows = np.vstack([div, S[space.n_m:]])
    C, cond = _checked_inverse(cond_rows, "face-based condition matrix", space.cell)
    return C, flux @ C, cond


def build_local_basis(space):
    """All three families for one cell (the offline work unit)."""
    P, div, flux, E = build_primal_basis(space)
    S, D, gamma, mu, cond_s = build_dual_basis(space, P, div, flux)
    C, fb_flux, cond_c = build_face_based_basis(space, S, div, flux)
    log.info("cell %d: cond(S)=%.2e cond(C)=%.2e", space.cell, cond_s, cond_c)
    return LocalBasisSet(space.k, space.m, space.n_m, space.n_k, space.n_faces,
                         P, div, flux, S, D, gamma, mu, C, fb_flux, E)


def reconstruct(bset, v_cell, v_faces):
    """r_K(v): the dual-basis combination with the given DOFs."""
    v_cell = np.asarray(v_cell, float)
    if v_cell.shape != (bset.n_m,) or len(v_faces) != bset.n_faces:
        raise ValueError("DOF sizes do not match the local space")
    dofs = np.concatenate([v_cell] + [np.asarray(f, float).reshape(bset.n_k) for f in v_faces])
    return bset.P @ (bset.D @ dofs)


def data_of(bset, coords):
    """Divergence and flux polynomials of the primal combination ``coords``."""
    return bset.div @ coords, bset.flux @ coords
