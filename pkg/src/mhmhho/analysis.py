"""Error measures, equivalence gaps, audits and convergence studies."""
import json
import logging
import time

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .fields import SolutionField
from .mesh import build_structured_coarse
from .polyspace import triangle_rule
from .problem import Coefficient, ProblemSpec

log = logging.getLogger(__name__)

TOLERANCES = {
    "jump": 1e-10,
    "neumann": 1e-10,
    "compatibility": 1e-11,
    "flux_continuity": 1e-10,
    "equivalence": 1e-9,
}


# --------------------------------------------------------------------------
# energy norms
# --------------------------------------------------------------------------

def _sample(disc, ref):
    if isinstance(ref, SolutionField):
        if ref.key != disc.key:
            raise ValueError("field belongs to a different discretization")
        return ref.values
    return [ref(s.points[:, 0], s.points[:, 1]) for s in disc.spaces]


def energy_norm(disc, u):
    """Broken A-weighted H1 seminorm of a field."""
    return float(np.sqrt(sum(s.energy(v) for s, v in zip(disc.spaces, _sample(disc, u)))))


def energy_error(disc, u, ref):
    """Broken energy seminorm of ``u - ref``.

    ``ref`` is a :class:`SolutionField` on the same discretization or a
    callable sampled at the fine nodes (its P1 interpolant is used).
    """
    a = _sample(disc, u)
    b = _sample(disc, ref)
    if len(a) != len(b) or any(x.shape != y.shape for x, y in zip(a, b)):
        raise ValueError("fields live on different fine meshes")
    return float(np.sqrt(sum(s.energy(x - y) for s, x, y in zip(disc.spaces, a, b))))


def energy_error_exact(disc, u, grad, quad_degree=6):
    """Energy error against an exact gradient, by quadrature on fine triangles.

    Unlike :func:`energy_error` this does not interpolate the exact field,
    so it measures the full (fine + coarse) discretization error.
    """
    bary, w = triangle_rule(quad_degree)
    total = 0.0
    for s, v in zip(disc.spaces, _sample(disc, u)):
        xy = s.points[s.tris]                                  # (T,3,2)
        e1 = xy[:, 1] - xy[:, 0]
        e2 = xy[:, 2] - xy[:, 0]
        J = np.stack([e1, e2], axis=2)                         # columns e1, e2
        dv = np.stack([v[s.tris[:, 1]] - v[s.tris[:, 0]], v[s.tris[:, 2]] - v[s.tris[:, 0]]], axis=1)
        gh = np.linalg.solve(np.transpose(J, (0, 2, 1)), dv[..., None])[..., 0]
        qp = np.einsum("qk,tkd->tqd", bary, xy)
        ge = np.stack(grad(qp[..., 0], qp[..., 1]), axis=-1)   # (T,Q,2)
        d = gh[:, None, :] - ge
        Ad = np.einsum("tij,tqj->tqi", s.acoef, d)
        total += float(np.sum(s.tri_area[:, None] * w[None, :] * np.sum(d * Ad, axis=-1)))
    return float(np.sqrt(total))


def equivalence_gap(disc, u_mhm, u_hho):
    """Relative energy gap between two fields of the same local space."""
    if u_mhm.key != u_hho.key or u_mhm.key != disc.key:
        raise ValueError("fields were computed from different offline caches; comparison is meaningless")
    scale = max(energy_norm(disc, u_mhm), energy_norm(disc, u_hho))
    diff = energy_error(disc, u_mhm, u_hho)
    return 0.0 if scale == 0.0 else diff / scale


# --------------------------------------------------------------------------
# elliptic projection (best approximation in the local space)
# --------------------------------------------------------------------------

def elliptic_project(disc, c, v):
    """Elliptic projection of nodal values ``v`` onto the local span of cell ``c``.

    Returns ``(coords, error)``: primal coordinates and the energy distance.
    The non-constant primal columns have zero mean, so the mean-value
    closure fixes the constant coefficient directly.
    """
    s, b = disc.spaces[c], disc.bases[c]
    v = np.asarray(v, float)
    coords = np.zeros(b.ndof)
    if b.ndof > 1:
        rhs = b.P[:, 1:].T @ (s.stiffness @ v)
        coords[1:] = np.linalg.solve(b.E[1:, 1:], rhs)
    coords[0] = (s.mass_row @ v) / s.area
    d = v - b.P @ coords
    return coords, float(np.sqrt(max(s.energy(d), 0.0)))


def best_approximation_error(disc, ref):
    vals = _sample(disc, ref)
    return float(np.sqrt(sum(elliptic_project(disc, c, v)[1] ** 2 for c, v in enumerate(vals))))


# --------------------------------------------------------------------------
# global fine reference
# --------------------------------------------------------------------------

def fine_reference(disc, source, dirichlet=None, quad_degree=6):
    """Conforming P1 solve on the whole fine mesh (same A sampling).

    ``dirichlet`` gives boundary values (default 0).  Returns a
    :class:`SolutionField` restricted cellwise.
    """
    fine = disc.fine
    n = fine.n_nodes
    bary, w = triangle_rule(quad_degree)
    rows, cols, vals = [], [], []
    load = np.zeros(n)
    for c, s in enumerate(disc.spaces):
        g = fine.cell_nodes[c]
        K = s.stiffness.tocoo()
        rows.append(g[K.row])
        cols.append(g[K.col])
        vals.append(K.data)
        qp = np.einsum("qk,tkd->tqd", bary, s.points[s.tris])
        fq = np.ascontiguousarray(source.func(qp[..., 0], qp[..., 1]))
        load[g] += kernels.load_vector(s.tris, s.tri_area, fq, bary, w, s.nn)
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    bnd = fine.boundary_nodes()
    x = np.zeros(n)
    if dirichlet is not None:
        x[bnd] = dirichlet(fine.points[bnd, 0], fine.points[bnd, 1])
    free = np.setdiff1d(np.arange(n), bnd)
    rhs = load[free] - A[free][:, bnd] @ x[bnd]
    x[free] = spla.splu(A[free][:, free].tocsc()).solve(rhs)
    return SolutionField([x[g] for g in fine.cell_nodes], disc.key, "reference")


# --------------------------------------------------------------------------
# audits
# --------------------------------------------------------------------------

def _rel(res, scale):
    return 0.0 if res == 0.0 else float(res / scale) if scale > 0 else float("inf")


def audit(disc, u, method=None, tolerances=None):
    """Evaluate the characterization invariants of a solved field.

    Needs ``u.data["flux"]`` (outward flux coefficients per cell, face
    stacked) and ``u.data["fK"]`` (divergence data).  Never raises; the
    returned dict carries the residuals and a ``passed`` flag.
    """
    tol = dict(TOLERANCES, **(tolerances or {}))
    coarse = disc.coarse
    fK = u.data["fK"]
    flux = u.data["flux"]
    umax = u.max_abs()
    out = {"method": method or u.method}

    # jump moments against P^k(F), boundary faces included
    traces = {}
    for c, s in enumerate(disc.spaces):
        for i, f in enumerate(s.faces):
            traces[(c, f)] = s.face_moments[i] @ u.values[c]
    jump = 0.0
    for f in range(coarse.n_faces):
        kp, km = coarse.face_cells[f]
        j = traces[(kp, f)] - (traces[(km, f)] if km >= 0 else 0.0)
        scale = umax * coarse.face_length(f)
        jump = max(jump, _rel(float(np.abs(j).max()), scale))
    out["jump"] = jump

    neu, comp = 0.0, 0.0
    for c, s in enumerate(disc.spaces):
        nk = s.n_k
        r = s.stiffness @ u.values[c] - s.cell_moments.T @ fK[c]
        scale = np.abs(s.stiffness) @ np.abs(u.values[c]) + np.abs(s.cell_moments.T) @ np.abs(fK[c])
        cres = fK[c] @ s.cell_gram[:, 0]
        cscale = np.abs(fK[c]) @ np.abs(s.cell_gram[:, 0])
        for i in range(s.n_faces):
            fl = flux[c][i * nk: (i + 1) * nk]
            r = r - s.face_moments[i].T @ fl
            scale = scale + np.abs(s.face_moments[i].T) @ np.abs(fl)
            cres += s.face_one[i] @ fl
            cscale += np.abs(s.face_one[i]) @ np.abs(fl)
        neu = max(neu, _rel(float(np.abs(r).max()), float(scale.max())))
        comp = max(comp, _rel(abs(float(cres)), float(cscale)))
    out["neumann"] = neu
    out["compatibility"] = comp

    fc = 0.0
    fmax = max((float(np.abs(x).max()) for x in flux if x.size), default=0.0)
    pos = {}
    for c, s in enumerate(disc.spaces):
        for i, f in enumerate(s.faces):
            pos[(c, f)] = flux[c][i * s.n_k: (i + 1) * s.n_k]
    for f in coarse.interior_faces:
        kp, km = coarse.face_cells[f]
        fc = max(fc, _rel(float(np.abs(pos[(kp, f)] + pos[(km, f)]).max()), fmax))
    out["flux_continuity"] = fc

    checks = ("jump", "neumann", "compatibility", "flux_continuity")
    out["failed"] = [k for k in checks if not (out[k] <= tol[k])]
    out["passed"] = not out["failed"]
    return out


def perturb_lambda(disc, field_mhm, face=0, j=0, delta=1.0):
    """Negative control: MHM field rebuilt with one lambda coefficient shifted."""
    from .mhm import reconstruct_mhm

    lam = field_mhm.data["lam"].copy()
    lam[face, j] += delta
    return reconstruct_mhm(disc, field_mhm.data["u0"], lam, field_mhm.data["fK"])


# --------------------------------------------------------------------------
# studies
# --------------------------------------------------------------------------

def fit_slope(H, err):
    """Least-squares slope of log(err) against log(H); needs >= 3 points."""
    H = np.asarray(H, float)
    err = np.asarray(err, float)
    if len(H) < 3:
        return float("nan")
    return float(np.polyfit(np.log(H), np.log(err), 1)[0])


def _sinsin_grad(x, y):
    return (np.pi * np.cos(np.pi * x) * np.sin(np.pi * y), np.pi * np.sin(np.pi * x) * np.cos(np.pi * y))


def _sinsin_case(nx, r, problem, threads=1):
    from .mhm import mhm
    from .offline import Discretization
    from .problem import CLOSED_FORM, Source

    t0 = time.perf_counter()
    src = Source(func=CLOSED_FORM["laplace_sinsin"], label="laplace_sinsin")
    disc = Discretization(build_structured_coarse(nx, nx), r, problem, threads=threads)
    u = mhm(disc, src)
    ref = fine_reference(disc, src)
    return {
        "H": float(disc.coarse.H), "nx": nx, "k": problem.k, "m": problem.m, "r": r,
        "error": energy_error(disc, u, ref),
        "error_exact": energy_error_exact(disc, u, _sinsin_grad),
        "reference_error": energy_error_exact(disc, ref, _sinsin_grad),
        "best_approximation": best_approximation_error(disc, ref),
        "ref_norm": energy_norm(disc, ref),
        "time": time.perf_counter() - t0,
    }


def convergence_study(k, m=None, nxs=(2, 4, 8, 16), r=4, coefficient=None, threads=1,
                      floor_factor=10.0, estimate_floor=True):
    """Rate study for u = sin(pi x) sin(pi y) against the global fine reference.

    Fine-scale floor: on the finest coarse mesh, the change of the measured
    error when the fine level goes from ``r`` to ``r + 1``, bounded below by
    roundoff (1e-12 times the reference energy).  Points whose error is not
    above ``floor_factor`` times the floor are left out of the fit; with
    fewer than three usable points the study is flagged inconclusive.
    """
    coefficient = coefficient or Coefficient({"type": "identity"})
    problem = ProblemSpec(coefficient, k=k, m=m)
    rows = []
    for nx in nxs:
        rows.append(_sinsin_case(nx, r, problem, threads))
        log.info("nx=%d k=%d error=%.3e (%.1fs)", nx, k, rows[-1]["error"], rows[-1]["time"])
    floor = 1e-12 * rows[-1]["ref_norm"]
    floor_row = None
    if estimate_floor:
        floor_row = _sinsin_case(nxs[-1], r + 1, problem, threads)
        floor = max(floor, abs(rows[-1]["error"] - floor_row["error"]))
    used = [row for row in rows if row["error"] > floor_factor * floor]
    slope = fit_slope([p["H"] for p in used], [p["error"] for p in used])
    for i, row in enumerate(rows):
        row["slope"] = (float(np.log(rows[i - 1]["error"] / row["error"]) / np.log(rows[i - 1]["H"] / row["H"]))
                        if i else float("nan"))
        row["used_in_fit"] = any(row is p for p in used)
        ba = row["best_approximation"]
        row["galerkin_ratio"] = row["error"] / ba if ba > 0 else float("nan")
    return {
        "k": k, "m": problem.m, "r": r, "rows": rows, "floor": floor, "floor_factor": floor_factor,
        "floor_case": floor_row, "n_used": len(used), "slope": slope, "inconclusive": len(used) < 3,
        "expected": k + 1,
    }


def r_refinement_study(k, m=None, nx=4, rs=(2, 3, 4, 5), coefficient=None):
    """Fixed H, increasing r: error against the exact solution levels off."""
    from .mhm import mhm
    from .offline import Discretization
    from .problem import CLOSED_FORM, Source

    coefficient = coefficient or Coefficient({"type": "identity"})
    problem = ProblemSpec(coefficient, k=k, m=m)
    src = Source(func=CLOSED_FORM["laplace_sinsin"], label="laplace_sinsin")
    rows = []
    for r in rs:
        disc = Discretization(build_structured_coarse(nx, nx), r, problem)
        u = mhm(disc, src)
        ref = fine_reference(disc, src)
        rows.append({"r": r, "H": float(disc.coarse.H),
                     "error_exact": energy_error_exact(disc, u, _sinsin_grad),
                     "error": energy_error(disc, u, ref),
                     "reference_error": energy_error_exact(disc, ref, _sinsin_grad)})
    return {"k": k, "nx": nx, "rows": rows}


# --------------------------------------------------------------------------
# report output
# --------------------------------------------------------------------------

def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, bytes):
        return o.hex()
    return o


def write_report(report, path):
    with open(path, "w") as fh:
        json.dump(_jsonable(report), fh, indent=2, sort_keys=True)


def write_convergence_csv(studies, path):
    with open(path, "w") as fh:
        fh.write("H,k,m,error,slope\n")
        for st in studies:
            for row in st["rows"]:
                fh.write(f"{row['H']:.17g},{st['k']},{st['m']},{row['error']:.17g},{row['slope']:.17g}\n")
