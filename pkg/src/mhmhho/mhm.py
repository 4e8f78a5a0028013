"""Multiscale Hybrid-Mixed method: global saddle-point system and solution.

Unknowns are ordered ``[u0 (one per cell) | lambda (n_k per face, all faces)]``.
The flux seen from cell K on its face F is ``sigma_{K,F} * lambda_F``.  With

    B[K, (F,j)]        = sigma_{K,F} (psi^F_j, 1)_F
    A[(F',j'), (F,j)]  = sum_K sigma_{K,F'} sigma_{K,F} (psi^{F'}_{j'}, phi^{p,K}_{F,j})_{F'}

the system is assembled as the symmetric matrix ``[[0, -B], [-B^T, -A]]``
(A is positive semidefinite, so the lambda block is negative semidefinite).
"""
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fields import SolutionField, project_source


class MHMError(RuntimeError):
    pass


@dataclass
class MHMSystem:
    disc: object
    matrix: sp.csc_matrix
    B: sp.csr_matrix
    A: sp.csr_matrix
    lu: object
    cell_mom: list          # per cell: (psi_i, primal columns)_K
    rhs_op: sp.csr_matrix = None   # fK.ravel() -> rhs
    timings: dict = field(default_factory=dict)

    @property
    def n_cells(self):
        return self.disc.coarse.n_cells

    @property
    def size(self):
        return self.matrix.shape[0]


def assemble_mhm(disc, factorize=True):
    """Assemble (and factorize) the MHM saddle-point matrix."""
    t0 = time.perf_counter()
    coarse = disc.coarse
    if len(disc.bases) != coarse.n_cells or any(b is None for b in disc.bases):
        raise MHMError("missing cell basis")
    nC, nk = coarse.n_cells, disc.n_k
    nL = coarse.n_faces * nk
    Br, Bc, Bv = [], [], []
    Ar, Ac, Av = [], [], []
    cell_mom = []
    for c, (space, b) in enumerate(zip(disc.spaces, disc.bases)):
        cell_mom.append(space.cell_moments @ b.P)
        fm = [space.face_moments[i] @ b.P for i in range(b.n_faces)]
        for i, (f, sg) in enumerate(zip(space.faces, space.signs)):
            dofs = np.arange(f * nk, (f + 1) * nk)
            Br.extend([c] * nk)
            Bc.extend(dofs)
            Bv.extend(sg * space.face_one[i])
            for ii, (ff, sgg) in enumerate(zip(space.faces, space.signs)):
                cols = np.arange(ff * nk, (ff + 1) * nk)
                blk = sg * sgg * fm[i][:, b.face_slice(ii)]
                Ar.extend(np.repeat(dofs, nk))
                Ac.extend(np.tile(cols, nk))
                Av.extend(blk.ravel())
    B = sp.csr_matrix((Bv, (Br, Bc)), shape=(nC, nL))
    A = sp.csr_matrix((Av, (Ar, Ac)), shape=(nL, nL))
    M = sp.bmat([[sp.csr_matrix((nC, nC)), -B], [-B.T, -A]], format="csc")
    system = MHMSystem(disc, M, B, A, None, cell_mom)
    system.rhs_op = _rhs_operator(system)
    t1 = time.perf_counter()
    lu = None
    if factorize:
        try:
            lu = spla.splu(M)
        except RuntimeError as exc:
            raise MHMError("singular MHM system (discrete inf-sup failure)") from exc
    t2 = time.perf_counter()
    system.lu = lu
    system.timings = {"assemble": t1 - t0, "factorize": t2 - t1}
    return system


def _rhs_operator(system):
    """Sparse map from the flattened cell coefficients fK to the right-hand side."""
    disc = system.disc
    nC, nk, nm = disc.coarse.n_cells, disc.n_k, disc.n_m
    rows, cols, vals = [], [], []
    for c, space in enumerate(disc.spaces):
        rows.extend([c] * nm)                               # (f_K, 1)_K
        cols.extend(range(c * nm, (c + 1) * nm))
        vals.extend(space.cell_gram[:, 0])
        cm = system.cell_mom[c]
        b = disc.bases[c]
        for i, (f, sg) in enumerate(zip(space.faces, space.signs)):
            # rows carry -rhs_b with rhs_b = -sigma sum_{i>=2} f_i (psi_i, phi_F)_K
            blk = sg * cm[1:, b.face_slice(i)].T               # (nk, nm - 1)
            rows.extend(np.repeat(np.arange(nC + f * nk, nC + (f + 1) * nk), nm - 1))
            cols.extend(np.tile(np.arange(c * nm + 1, (c + 1) * nm), nk))
            vals.extend(blk.ravel())
    return sp.csr_matrix((vals, (rows, cols)), shape=(system.size, nC * nm))


def mhm_rhs(system, fK):
    return system.rhs_op @ np.asarray(fK, float).ravel()


def solve_mhm(system, source=None, fK=None, check=True):
    """Solve for ``(u0, lam)``; ``lam`` has shape (n_faces, n_k).

    Pass either a :class:`~mhmhho.problem.Source` or the projected cell
    coefficients ``fK`` directly (the multi-query fast path).
    """
    if fK is None:
        fK = project_source(system.disc, source)
    if system.lu is None:
        raise MHMError("system was assembled without factorization")
    rhs = mhm_rhs(system, fK)
    x = system.lu.solve(rhs)
    if check:
        res = np.linalg.norm(system.matrix @ x - rhs)
        scale = spla.norm(system.matrix, 1) * np.linalg.norm(x) + np.linalg.norm(rhs)
        rel = res / scale if scale > 0 else 0.0
        if not np.isfinite(rel) or rel > 1e-11:
            raise MHMError(f"MHM solve residual {rel:.2e}")
    nC = system.n_cells
    return x[:nC].copy(), x[nC:].reshape(-1, system.disc.n_k), fK


def reconstruct_mhm(disc, u0, lam, fK, mono_query=False):
    """u|_K = u0_K + sum sigma lam phi^p_F + T^s(Pi^m f).

    With ``mono_query`` the source lifting is computed by one extra fine
    solve per cell instead of expanding on the primal cell functions.
    """
    values = []
    for c, (space, b) in enumerate(zip(disc.spaces, disc.bases)):
        coords = np.zeros(b.ndof)
        coords[0] = u0[c]
        for i, (f, sg) in enumerate(zip(space.faces, space.signs)):
            coords[b.face_slice(i)] = sg * lam[f]
        if not mono_query:
            coords[1: b.n_m] = fK[c, 1:]
            values.append(b.P @ coords)
        else:
            values.append(b.P @ coords + space.lift_source(fK[c]))
    flux = [np.concatenate([sg * lam[f] for f, sg in zip(s.faces, s.signs)]) for s in disc.spaces]
    return SolutionField(values, disc.key, "mhm-mono" if mono_query else "mhm",
                         {"u0": u0, "lam": lam, "fK": fK, "flux": flux})


def mhm(disc, source, mono_query=False):
    """Assemble, solve and reconstruct in one call."""
    system = assemble_mhm(disc)
    u0, lam, fK = solve_mhm(system, source)
    return reconstruct_mhm(disc, u0, lam, fK, mono_query)
