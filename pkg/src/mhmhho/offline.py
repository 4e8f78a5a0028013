"""Offline stage: per-cell bases, the shared discretization, and the cache.

Cache layout (all integers and floats little-endian)::

    b"MHMB" | u32 version | i32 k | i32 m | i32 r | 32 bytes sha256 key | u32 n_cells
    per cell:  u32 n_m | u32 n_k | u32 n_faces | u32 n_arrays
        per array: u8 name_len | name | u8 ndim | u64 dims[ndim] | f64 data (C order)
"""
import hashlib
import logging
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .localsolver import LocalBasisSet, LocalFineSpace, build_local_basis
from .mesh import build_fine
from .problem import ProblemSpec

log = logging.getLogger(__name__)

MAGIC = b"MHMB"
VERSION = 1


class CacheError(RuntimeError):
    """Unreadable cache or key mismatch."""


def content_key(coarse, r, problem):
    h = hashlib.sha256()
    h.update(b"mhmhho-offline-v%d|" % VERSION)
    h.update(coarse.fingerprint())
    h.update(f"|r={r}|".encode())
    h.update(problem.key().encode())
    return h.digest()


class Discretization:
    """Coarse mesh + fine submesh + local spaces + local bases.

    Immutable after construction; the online solvers only read from it.
    """

    def __init__(self, coarse, r, problem, *, threads=1, bases=None):
        if not isinstance(problem, ProblemSpec):
            raise TypeError("problem must be a ProblemSpec")
        self.coarse = coarse
        self.r = r
        self.problem = problem
        self.k = problem.k
        self.m = problem.m
        t0 = time.perf_counter()
        self.fine = build_fine(coarse, r)
        self.spaces = [LocalFineSpace(self.fine, c, problem.coefficient, self.k, self.m)
                       for c in range(coarse.n_cells)]
        self.timings = {"spaces": time.perf_counter() - t0}
        self.key = content_key(coarse, r, problem)
        t0 = time.perf_counter()
        if bases is None:
            self.bases = build_offline(self.spaces, threads=threads)
            self.cache_hit = False
        else:
            if len(bases) != coarse.n_cells:
                raise CacheError("cache holds a different number of cells")
            self.bases = list(bases)
            self.cache_hit = True
        self.timings["bases"] = time.perf_counter() - t0

    @property
    def key_hex(self):
        return self.key.hex()

    @property
    def n_k(self):
        return self.spaces[0].n_k

    @property
    def n_m(self):
        return self.spaces[0].n_m

    def global_face_dofs(self, f):
        return slice(f * self.n_k, (f + 1) * self.n_k)


def build_offline(spaces, threads=1):
    """Build every cell's basis; order of the result follows the cells."""
    if threads <= 1:
        return [build_local_basis(s) for s in spaces]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(build_local_basis, spaces))


def from_cache_or_build(coarse, r, problem, cache=None, *, threads=1, require_cache=False):
    """Reuse a matching cache file, refuse a mismatching one, else build."""
    key = content_key(coarse, r, problem)
    if cache is not None and Path(cache).exists():
        header, bases = read_cache(cache)
        if header["key"] != key:
            raise CacheError(
                f"cache {cache} was built for a different mesh/coefficient/degree "
                f"set (key {header['key'].hex()[:12]} != {key.hex()[:12]}); rerun `offline`")
        return Discretization(coarse, r, problem, bases=bases)
    if require_cache:
        raise CacheError(f"no offline cache at {cache}; run `offline` first")
    return Discretization(coarse, r, problem, threads=threads)


# --------------------------------------------------------------------------
# binary cache
# --------------------------------------------------------------------------

def write_cache(disc, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Iiii", VERSION, disc.k, disc.m, disc.r))
        fh.write(disc.key)
        fh.write(struct.pack("<I", len(disc.bases)))
        for b in disc.bases:
            fh.write(struct.pack("<IIII", b.n_m, b.n_k, b.n_faces, len(LocalBasisSet.ARRAYS)))
            for name in LocalBasisSet.ARRAYS:
                arr = np.ascontiguousarray(getattr(b, name), dtype="<f8")
                fh.write(struct.pack("<B", len(name)) + name.encode("ascii"))
                fh.write(struct.pack("<B", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
                fh.write(arr.tobytes())
    return path


def read_cache(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise CacheError(f"{path}: not an offline cache (bad magic)")
    off = 4
    version, k, m, r = struct.unpack_from("<Iiii", data, off)
    off += 16
    if version != VERSION:
        raise CacheError(f"{path}: unsupported cache version {version}")
    key = data[off: off + 32]
    off += 32
    (n_cells,) = struct.unpack_from("<I", data, off)
    off += 4
    bases = []
    for _ in range(n_cells):
        n_m, n_k, n_faces, n_arr = struct.unpack_from("<IIII", data, off)
        off += 16
        arrays = {}
        for _ in range(n_arr):
            (ln,) = struct.unpack_from("<B", data, off)
            off += 1
            name = data[off: off + ln].decode("ascii")
            off += ln
            (nd,) = struct.unpack_from("<B", data, off)
            off += 1
            shape = struct.unpack_from(f"<{nd}Q", data, off)
            off += 8 * nd
            count = int(np.prod(shape)) if nd else 1
            arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).copy()
            off += 8 * count
        bases.append(LocalBasisSet(k, m, n_m, n_k, n_faces, **arrays))
    if off != len(data):
        raise CacheError(f"{path}: trailing bytes in cache")
    return {"version": version, "k": k, "m": m, "r": r, "key": key, "n_cells": n_cells}, bases
