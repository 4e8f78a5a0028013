"""Command-line driver: offline bases, online solves, equivalence, studies.

Example::

    mhmhho offline --config run.json --out out/
    mhmhho equivalence --config run.json --out out/
"""
import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis
from .mesh import build_structured_coarse, load_polygonal_mesh, sample_mesh_path, voronoi_mesh
from .offline import CacheError, Discretization, from_cache_or_build, write_cache
from .problem import Coefficient, ProblemSpec, make_source

log = logging.getLogger("mhmhho")

KINDS = ("offline", "solve-mhm", "solve-mshho", "solve-facebased", "equivalence", "convergence", "audit")

DEFAULTS = {
    "mesh": {"type": "structured", "nx": 4, "ny": 4},
    "r": 3,
    "k": 1,
    "coefficient": {"type": "identity"},
    "sources": [{"type": "sinsin"}],
    "tolerances": {},
    "convergence": {"ks": [0, 1], "nxs": [2, 4, 8, 16], "r": 4},
}


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = problems
        super().__init__("invalid config:\n" + "\n".join(f"  - {p}" for p in problems))


def load_config(path=None, overrides=None):
    cfg = json.loads(json.dumps(DEFAULTS))
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError([f"cannot read {path}: {exc}"]) from None
        if not isinstance(user, dict):
            raise ConfigError(["top level must be a JSON object"])
        cfg.update(user)
    cfg.update(overrides or {})
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    """Collect every problem instead of stopping at the first."""
    bad = []
    known = set(DEFAULTS) | {"m", "cache", "out", "threads", "experiment"}
    for key in cfg:
        if key not in known:
            bad.append(f"unknown field {key!r}")
    for key in ("r", "k"):
        if not isinstance(cfg.get(key), int) or cfg[key] < 0:
            bad.append(f"{key} must be an integer >= 0")
    m = cfg.get("m")
    if m is not None and (not isinstance(m, int) or m < 0):
        bad.append("m must be an integer >= 0")
    mesh = cfg.get("mesh")
    if not isinstance(mesh, dict) or mesh.get("type") not in ("structured", "file", "voronoi", "sample"):
        bad.append("mesh.type must be one of structured, file, voronoi, sample")
    elif mesh["type"] == "structured" and not all(isinstance(mesh.get(a), int) and mesh[a] >= 1 for a in ("nx", "ny")):
        bad.append("mesh.nx and mesh.ny must be integers >= 1")
    elif mesh["type"] == "file" and "path" not in mesh:
        bad.append("mesh.path is required for a file mesh")
    try:
        Coefficient(cfg.get("coefficient", {}))
    except (ValueError, KeyError, TypeError) as exc:
        bad.append(f"coefficient: {exc}")
    srcs = cfg.get("sources")
    if not isinstance(srcs, list) or not srcs:
        bad.append("sources must be a nonempty list")
    exp = cfg.get("experiment")
    if exp is not None and exp not in KINDS:
        bad.append(f"experiment must be one of {', '.join(KINDS)}")
    if not isinstance(cfg.get("tolerances", {}), dict):
        bad.append("tolerances must be an object")
    if bad:
        raise ConfigError(bad)


def build_mesh(spec):
    kind = spec["type"]
    if kind == "structured":
        return build_structured_coarse(spec["nx"], spec["ny"], tuple(spec.get("domain", (0, 1, 0, 1))))
    if kind == "file":
        return load_polygonal_mesh(spec["path"])
    if kind == "sample":
        return load_polygonal_mesh(sample_mesh_path(spec.get("name", "voronoi10.mesh")))
    return voronoi_mesh(spec.get("seeds", 10), spec.get("seed", 0), spec.get("lloyd", 5))


def expand_sources(specs, n_cells, dim):
    """``{"type": "random_poly", "seed": s, "count": n}`` expands to n sources."""
    out = []
    for spec in specs:
        count = int(spec.get("count", 1))
        for i in range(count):
            one = dict(spec)
            one.pop("count", None)
            if count > 1:
                one["seed"] = int(spec.get("seed", 0)) + i
            out.append(make_source(one, n_cells, dim))
    return out


def problem_of(cfg):
    return ProblemSpec(Coefficient(cfg["coefficient"]), k=cfg["k"], m=cfg.get("m"))


# --------------------------------------------------------------------------
# outputs
# --------------------------------------------------------------------------

def write_field_csv(disc, field, path):
    rows = []
    for c, (s, v) in enumerate(zip(disc.spaces, field.values)):
        rows.append(np.column_stack([np.full(len(v), c), s.points, v]))
    data = np.vstack(rows)
    np.savetxt(path, data, fmt=["%d", "%.17g", "%.17g", "%.17g"], delimiter=",",
               header="cell,node_x,node_y,value", comments="")


def write_skeleton_csv(coeffs, path, name):
    nF, nk = coeffs.shape
    data = np.column_stack([np.repeat(np.arange(nF), nk), np.tile(np.arange(nk), nF), coeffs.ravel()])
    np.savetxt(path, data, fmt=["%d", "%d", "%.17g"], delimiter=",", header=f"face,j,{name}", comments="")


class Run:
    def __init__(self, kind, cfg, out, cache, threads):
        self.kind = kind
        self.cfg = cfg
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.cache = Path(cache) if cache else self.out / "offline.mhmb"
        self.threads = threads
        self.manifest = {"command": kind, "config": cfg, "files": [], "timings": {}}
        self.report = {}

    def add_file(self, path):
        self.manifest["files"].append(str(Path(path).relative_to(self.out)))

    def discretization(self, offline=False):
        coarse = build_mesh(self.cfg["mesh"])
        problem = problem_of(self.cfg)
        t0 = time.perf_counter()
        if offline:
            disc = Discretization(coarse, self.cfg["r"], problem, threads=self.threads)
        else:
            disc = from_cache_or_build(coarse, self.cfg["r"], problem, self.cache, threads=self.threads)
        self.manifest["timings"]["offline"] = time.perf_counter() - t0
        self.manifest.update({
            "key": disc.key_hex, "cache": str(self.cache), "cache_hit": disc.cache_hit,
            "mesh": coarse.summary(), "k": disc.k, "m": disc.m, "r": disc.r,
        })
        return disc

    def finish(self):
        analysis.write_report(self.report, self.out / "report.json")
        self.add_file(self.out / "report.json")
        analysis.write_report(self.manifest, self.out / "manifest.json")


def _sources(run, disc):
    return expand_sources(run.cfg["sources"], disc.coarse.n_cells, disc.n_m)


def cmd_offline(run):
    disc = run.discretization(offline=True)
    write_cache(disc, run.cache)
    run.report["cond_S"] = [float(np.linalg.cond(b.S)) for b in disc.bases]
    run.report["timings"] = disc.timings
    return 0


def cmd_solve(run):
    from .mhm import assemble_mhm, reconstruct_mhm, solve_mhm
    from .mshho import assemble_condensed, assemble_face_based, reconstruct_mshho, solve_face_based, solve_mshho

    disc = run.discretization()
    sources = _sources(run, disc)
    t0 = time.perf_counter()
    if run.kind == "solve-mhm":
        system = assemble_mhm(disc)
    elif run.kind == "solve-mshho":
        system = assemble_condensed(disc)
    else:
        system = assemble_face_based(disc)
    run.manifest["timings"]["factorization"] = time.perf_counter() - t0
    solve_times = []
    for i, src in enumerate(sources):
        t1 = time.perf_counter()
        if run.kind == "solve-mhm":
            u0, lam, fK = solve_mhm(system, src)
            u = reconstruct_mhm(disc, u0, lam, fK)
            skel, name, tag = lam, "lambda", "skeleton"
        elif run.kind == "solve-mshho":
            uF, uK, fK = solve_mshho(system, src)
            u = reconstruct_mshho(disc, uF, uK, fK=fK)
            skel, name, tag = uF, "u_F", "faces"
        else:
            uF, u = solve_face_based(system, src)
            skel, name, tag = uF, "u_F", "faces"
        solve_times.append(time.perf_counter() - t1)
        p = run.out / f"solution_{i:03d}.csv"
        write_field_csv(disc, u, p)
        run.add_file(p)
        p = run.out / f"{tag}_{i:03d}.csv"
        write_skeleton_csv(skel, p, name)
        run.add_file(p)
    run.manifest["timings"]["solves"] = solve_times
    run.manifest["n_sources"] = len(sources)
    run.report["n_sources"] = len(sources)
    return 0


def cmd_equivalence(run):
    from .mhm import mhm
    from .mshho import mshho

    disc = run.discretization()
    tol = run.cfg["tolerances"].get("equivalence", analysis.TOLERANCES["equivalence"])
    gaps = []
    for src in _sources(run, disc):
        gaps.append(analysis.equivalence_gap(disc, mhm(disc, src), mshho(disc, src)))
    run.report.update({"gaps": gaps, "max_gap": max(gaps), "tolerance": tol, "passed": max(gaps) <= tol})
    return 0 if run.report["passed"] else 1


def cmd_audit(run):
    from .mhm import mhm
    from .mshho import mshho

    disc = run.discretization()
    tol = run.cfg["tolerances"]
    results = []
    for src in _sources(run, disc):
        for fn in (mhm, mshho):
            results.append(analysis.audit(disc, fn(disc, src), tolerances=tol))
    run.report.update({"audits": results, "passed": all(r["passed"] for r in results)})
    return 0 if run.report["passed"] else 1


def cmd_convergence(run):
    conv = run.cfg["convergence"]
    lo, hi = conv.get("bracket", [0.85, 1.4])
    studies = []
    for k in conv.get("ks", [0, 1]):
        st = analysis.convergence_study(k, nxs=tuple(conv.get("nxs", (2, 4, 8, 16))), r=conv.get("r", 4),
                                        coefficient=Coefficient(run.cfg["coefficient"]), threads=run.threads)
        st["passed"] = (not st["inconclusive"]) and k + lo <= st["slope"] <= k + hi
        studies.append(st)
    analysis.write_convergence_csv(studies, run.out / "convergence.csv")
    run.add_file(run.out / "convergence.csv")
    run.report.update({"studies": studies, "passed": all(s["passed"] for s in studies)})
    return 0 if run.report["passed"] else 1


COMMANDS = {
    "offline": cmd_offline,
    "solve-mhm": cmd_solve,
    "solve-mshho": cmd_solve,
    "solve-facebased": cmd_solve,
    "equivalence": cmd_equivalence,
    "audit": cmd_audit,
    "convergence": cmd_convergence,
}


def make_parser():
    parser = argparse.ArgumentParser(prog="mhmhho", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="kind", required=True, metavar="{" + ",".join(KINDS) + "}")
    for kind in KINDS:
        p = sub.add_parser(kind)
        p.add_argument("--config", type=Path, help="JSON run configuration")
        p.add_argument("--out", type=Path, help="output directory (default ./out)")
        p.add_argument("--threads", type=int, default=1, help="offline worker threads")
        p.add_argument("--cache", type=Path, help="offline cache file (default OUT/offline.mhmb)")
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    run = Run(args.kind, cfg, args.out or cfg.get("out", "out"), args.cache or cfg.get("cache"), args.threads)
    try:
        status = COMMANDS[args.kind](run)
    except CacheError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    run.manifest["exit_status"] = status
    run.finish()
    return status


if __name__ == "__main__":
    sys.exit(main())
