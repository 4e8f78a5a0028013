"""Multiscale HHO: condensed, uncondensed (oracle) and purely face-based solvers.

Unknowns are the face moments ``u_F`` on interior faces (boundary faces carry
``u_F = 0``).  On a cell K with dual data ``gamma``/``mu`` the discrete solution
satisfies

    G^KK u_K + sum_F G^KF u_F = f_K                       (divergence = Pi^m f)
    sum_{K ∋ F'} Gram_F' (M^F'K u_K + sum_F M^F'F u_F) = 0  (flux balance on F')

Testing the flux balance against ``psi^F'`` (hence the face Gram) makes the
condensed matrix symmetric in the non-orthonormal face basis.
"""
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fields import SolutionField, project_source
from .localsolver import COND_LIMIT, UnisolvenceError


class MsHHOError(RuntimeError):
    pass


def interior_index(disc):
    """Map global face -> position in the face unknown vector (-1 on boundary)."""
    idx = np.full(disc.coarse.n_faces, -1, dtype=np.int64)
    inner = disc.coarse.interior_faces
    idx[inner] = np.arange(len(inner))
    return idx


def _cholesky(K, what):
    if K.shape[0] == 0:
        return None
    try:
        return sla.cho_factor(K, lower=True)
    except np.linalg.LinAlgError as exc:
        raise MsHHOError(f"{what} matrix is not positive definite") from exc


def _solve_chol(factor, rhs):
    if factor is None:
        return np.zeros(0)
    return sla.cho_solve(factor, rhs)


def _check_residual(K, x, rhs, tol=1e-11):
    if K.shape[0] == 0:
        return 0.0
    res = np.linalg.norm(K @ x - rhs)
    scale = np.abs(K).sum(axis=0).max() * np.linalg.norm(x) + np.linalg.norm(rhs)
    rel = res / scale if scale > 0 else 0.0
    if not np.isfinite(rel) or rel > tol:
        raise MsHHOError(f"face system residual {rel:.2e}")
    return rel


@dataclass
class CondensedSystem:
    disc: object
    matrix: np.ndarray
    factor: object
    Ginv: list
    index: np.ndarray
    timings: dict = field(default_factory=dict)

    @property
    def size(self):
        return self.matrix.shape[0]


@dataclass
class FaceBasedSystem:
    disc: object
    matrix: np.ndarray
    factor: object
    index: np.ndarray
    timings: dict = field(default_factory=dict)

    @property
    def size(self):
        return self.matrix.shape[0]


def _face_blocks(space, index, nk):
    """Local face positions with their rows in the global face vector."""
    out = []
    for i, f in enumerate(space.faces):
        p = index[f]
        out.append((i, None if p < 0 else slice(p * nk, (p + 1) * nk)))
    return out


# --------------------------------------------------------------------------
# condensed
# --------------------------------------------------------------------------

def assemble_condensed(disc):
    """Static condensation of the cell unknowns (one dense SPD matrix)."""
    t0 = time.perf_counter()
    nk = disc.n_k
    index = interior_index(disc)
    n = int((index >= 0).sum()) * nk
    K = np.zeros((n, n))
    Ginv = []
    for c, (space, b) in enumerate(zip(disc.spaces, disc.bases)):
        G = b.G_KK
        cond = np.linalg.cond(G)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise UnisolvenceError(f"cell {c}: G^KK is numerically singular (cond={cond:.3e})")
        gi = np.linalg.inv(G)
        Ginv.append(gi)
        blocks = _face_blocks(space, index, nk)
        for ir, rows in blocks:
            if rows is None:
                continue
            gram = space.face_grams[ir]
            left = b.M_FK(ir) @ gi
            for ic, cols in blocks:
                if cols is None:
                    continue
                K[rows, cols] += gram @ (b.M_FF(ir, ic) - left @ b.G_KF(ic))
    K = 0.5 * (K + K.T)
    t1 = time.perf_counter()
    factor = _cholesky(K, "condensed")
    t2 = time.perf_counter()
    return CondensedSystem(disc, K, factor, Ginv, index, {"assemble": t1 - t0, "factorize": t2 - t1})


def condensed_rhs(system, fK):
    disc = system.disc
    nk = disc.n_k
    rhs = np.zeros(system.size)
    for c, (space, b) in enumerate(zip(disc.spaces, disc.bases)):
        gf = system.Ginv[c] @ fK[c]
        for i, rows in _face_blocks(space, system.index, nk):
            if rows is not None:
                rhs[rows] -= space.face_grams[i] @ (b.M_FK(i) @ gf)
    return rhs


def _expand_faces(disc, index, x):
    """Face unknowns for all faces, zero on the boundary; shape (n_faces, n_k)."""
    nk = disc.n_k
    uF = np.zeros((disc.coarse.n_faces, nk))
    inner = index >= 0
    uF[inner] = x.reshape(-1, nk)[index[inner]]
    return uF


def solve_mshho(system, source=None, fK=None, check=True):
    """Returns ``(uF (n_faces, n_k), uK (n_cells, n_m), fK)``."""
    disc = system.disc
    if fK is None:
        fK = project_source(disc, source)
    rhs = condensed_rhs(system, fK)
    x = _solve_chol(system.factor, rhs)
    if check:
        _check_residual(system.matrix, x, rhs)
    uF = _expand_faces(disc, system.index, x)
    uK = np.empty((disc.coarse.n_cells, disc.n_m))
    for c, (space, b) in enumerate(zip(disc.spaces, disc.bases)):
        acc = fK[c].copy()
        for i, f in enumerate(space.faces):
            acc -= b.G_KF(i) @ uF[f]
        uK[c] = system.Ginv[c] @ acc
    return uF, uK, fK


def cell_dofs(disc, c, uK, uF):
    space = disc.spaces[c]
    return np.concatenate([uK[c]] + [uF[f] for f in space.faces])


def reconstruct_mshho(disc, uF, uK, method="mshho", fK=None):
    """Dual-basis expansion u|_K = P D [u_K; u_F] (i.e. r_K of the DOFs)."""
    values, flux = [], []
    for c, b in enumerate(disc.bases):
        dofs = cell_dofs(disc, c, uK, uF)
        values.append(b.P @ (b.D @ dofs))
        flux.append(b.mu @ dofs)
    return SolutionField(values, disc.key, method, {"uF": uF, "uK": uK, "fK": fK, "flux": flux})


def mshho(disc, source):
    system = assemble_condensed(disc)
    uF, uK, fK = solve_mshho(system, source)
    return reconstruct_mshho(disc, uF, uK, fK=fK)


# --------------------------------------------------------------------------
# uncondensed oracle
# --------------------------------------------------------------------------

def solve_uncondensed(disc, source=None, fK=None):
    """Full SPD system in the dual basis over (cell DOFs, interior face DOFs).

    Kept as a testing oracle for the condensed path.
    """
    if fK is None:
        fK = project_source(disc, source)
    nC, n_m, nk = disc.coarse.n_cells, disc.n_m, disc.n_k
    index = interior_index(disc)
    nI = int((index >= 0).sum())
    n = nC * n_m + nI * nk
    rows, cols, vals = [], [], []
    rhs = np.zeros(n)
    for c, (space, b) in enumerate(zip(disc.spaces, disc.bases)):
        Ed = b.D.T @ b.E @ b.D
        gl = list(range(c * n_m, (c + 1) * n_m))
        keep = list(range(n_m))
        for i, f in enumerate(space.faces):
            if index[f] >= 0:
                off = nC * n_m + index[f] * nk
                gl += range(off, off + nk)
                keep += range(b.face_slice(i).start, b.face_slice(i).stop)
        gl = np.asarray(gl)
        sub = Ed[np.ix_(keep, keep)]
        rows.append(np.repeat(gl, len(gl)))
        cols.append(np.tile(gl, len(gl)))
        vals.append(sub.ravel())
        rhs[c * n_m: (c + 1) * n_m] = space.cell_gram @ fK[c]
    A = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    x = spla.splu(A).solve(rhs)
    uK = x[: nC * n_m].reshape(nC, n_m)
    uF = _expand_faces(disc, index, x[nC * n_m:])
    return uF, uK, fK


# --------------------------------------------------------------------------
# purely face-based
# --------------------------------------------------------------------------

def assemble_face_based(disc):
    t0 = time.perf_counter()
    nk = disc.n_k
    index = interior_index(disc)
    n = int((index >= 0).sum()) * nk
    K = np.zeros((n, n))
    for space, b in zip(disc.spaces, disc.bases):
        blocks = _face_blocks(space, index, nk)
        for ir, rows in blocks:
            if rows is None:
                continue
            frows = b.fb_flux[b.flux_rows(ir)]
            for ic, cols in blocks:
                if cols is not None:
                    K[rows, cols] += space.face_grams[ir] @ frows[:, b.face_slice(ic)]
    K = 0.5 * (K + K.T)
    t1 = time.perf_counter()
    factor = _cholesky(K, "face-based")
    return FaceBasedSystem(disc, K, factor, index, {"assemble": t1 - t0, "factorize": time.perf_counter() - t1})


def source_flux(space, b, fk):
    """Flux data mu_{f_K} of the source function (div = f_K, zero face DOFs)."""
    return b.fb_flux[:, : b.n_m] @ fk


def source_lifting_mono(space, b, fk):
    """Source function of the face-based basis via one extra local solve.

    Returns fine values and the flux coefficients (face-stacked).
    """
    T = space.lift_source(fk)
    nf, nk = b.n_faces, b.n_k
    Pf = b.P[:, b.n_m:]                               # primal face columns
    Sf = b.S[b.n_m:, b.n_m:]                          # face DOFs of those columns
    ones = np.zeros(nf * nk)
    ones[::nk] = 1.0                                  # face DOFs of the constant 1
    dT = np.concatenate([space.project_face(T, i) for i in range(nf)])
    n = 1 + nf * nk
    A = np.zeros((n, n))
    rhs = np.zeros(n)
    A[0, 1:] = np.concatenate(space.face_one)
    rhs[0] = -fk @ space.cell_gram[:, 0]
    A[1:, 0] = ones
    A[1:, 1:] = Sf
    rhs[1:] = -dT
    sol = np.linalg.solve(A, rhs)
    c0, coef = sol[0], sol[1:]
    return c0 + T + Pf @ coef, coef


def face_based_rhs(system, fK, mono_query=False):
    disc = system.disc
    nk = disc.n_k
    rhs = np.zeros(system.size)
    lifts = []
    for c, (space, b) in enumerate(zip(disc.spaces, disc.bases)):
        if mono_query:
            vals, mu = source_lifting_mono(space, b, fK[c])
            lifts.append(vals)
        else:
            mu = source_flux(space, b, fK[c])
        for i, rows in _face_blocks(space, system.index, nk):
            if rows is not None:
                rhs[rows] -= space.face_grams[i] @ mu[b.flux_rows(i)]
    return rhs, lifts


def solve_face_based(system, source=None, fK=None, mono_query=False, check=True):
    """Face unknowns and the field built from face-based functions."""
    disc = system.disc
    if fK is None:
        fK = project_source(disc, source)
    rhs, lifts = face_based_rhs(system, fK, mono_query)
    x = _solve_chol(system.factor, rhs)
    if check:
        _check_residual(system.matrix, x, rhs)
    uF = _expand_faces(disc, system.index, x)
    values, flux = [], []
    for c, (space, b) in enumerate(zip(disc.spaces, disc.bases)):
        coords = np.concatenate([np.zeros(b.n_m)] + [uF[f] for f in space.faces])
        if mono_query:
            values.append(lifts[c] + b.P @ (b.C @ coords))
        else:
            coords[: b.n_m] = fK[c]
            values.append(b.P @ (b.C @ coords))
        coords[: b.n_m] = fK[c]
        flux.append(b.fb_flux @ coords)
    method = "facebased-mono" if mono_query else "facebased"
    return uF, SolutionField(values, disc.key, method, {"uF": uF, "fK": fK, "flux": flux})
