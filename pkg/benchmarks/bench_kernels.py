"""Numba vs pure-numpy timings of the assembly kernels.

Run ``python3 benchmarks/bench_kernels.py [--nx 8 --r 4 --repeat 5]``.
Each kernel is first checked for agreement between both variants, then
timed (best of ``--repeat``; the numba variant is warmed up once so JIT
compilation is excluded).
"""
import argparse
import time

import numpy as np

from mhmhho import kernels
from mhmhho.mesh import build_fine, build_structured_coarse
from mhmhho.polyspace import monomial_exponents, segment_rule, triangle_rule


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nx", type=int, default=8)
    ap.add_argument("--r", type=int, default=4)
    ap.add_argument("--degree", type=int, default=2)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    fine = build_fine(build_structured_coarse(args.nx, args.nx), args.r)
    pts, tris = fine.points, fine.triangles
    n = len(pts)
    cen = pts[tris].mean(axis=1)
    acoef = np.zeros((len(tris), 2, 2))
    acoef[:, 0, 0] = acoef[:, 1, 1] = 1.0 + cen[:, 0]
    area = kernels.triangle_areas(pts, tris)
    bary, w = triangle_rule(2 * args.degree + 2)
    exps = monomial_exponents(args.degree)
    edges = np.column_stack([fine.face_nodes[0][:-1], fine.face_nodes[0][1:]])
    a, b = fine.points[fine.face_nodes[0][[0, -1]]]
    ts, tw = segment_rule(2 * args.degree + 2)
    tangent = (b - a) / np.linalg.norm(b - a)
    fq = np.ascontiguousarray(np.einsum("qk,tkd->tqd", bary, pts[tris])[..., 0])

    cases = {
        "element_stiffness": lambda impl: impl(pts, tris, acoef),
        "cell_poly_moments": lambda impl: impl(pts, tris, n, np.array([0.5, 0.5]), 1.0, exps, bary, w),
        "edge_poly_moments": lambda impl: impl(pts, edges, n, 0.5 * (a + b), tangent,
                                               float(np.linalg.norm(b - a)), args.degree + 1, ts, tw),
        "load_vector": lambda impl: impl(tris, area, fq, bary, w, n),
    }
    print(f"fine mesh: {len(tris)} triangles, {n} nodes; numba enabled: {kernels.USE_NUMBA}")
    label = "numba [ms]" if kernels.USE_NUMBA else "loops [ms]"   # un-jitted when disabled
    print(f"{'kernel':<20} {'numpy [ms]':>12} {label:>12} {'speedup':>9}  max|diff|")
    for name, call in cases.items():
        f_np = getattr(kernels, name + "_np")
        f_nb = getattr(kernels, name + "_nb")
        ref = call(f_np)
        got = call(f_nb)                      # warm-up / compile
        diff = float(np.max(np.abs(np.asarray(ref) - np.asarray(got))))
        t_np = best_of(lambda: call(f_np), args.repeat)
        t_nb = best_of(lambda: call(f_nb), args.repeat)
        print(f"{name:<20} {1e3 * t_np:12.2f} {1e3 * t_nb:12.2f} {t_np / t_nb:9.1f}  {diff:.1e}")


if __name__ == "__main__":
    main()
