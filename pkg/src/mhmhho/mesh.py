"""Polygonal coarse meshes and their conforming simplicial submeshes.

The coarse mesh carries the global unknowns.  Each coarse face is a straight
segment stored once, with a fixed unit normal ``n_F``: the outward normal of
the domain on boundary faces, and the outward normal of the lower-indexed
neighbour on interfaces.  ``sign[K][i] = n_{K,F} . n_F`` for the i-th face of K.

The fine mesh fan-triangulates every cell from its centroid and refines each
fan triangle uniformly ``r`` times.  Sub-edge nodes on a coarse face are
generated once per face, so the submesh is conforming across coarse faces.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


class MeshError(ValueError):
    """Invalid mesh input."""


def _polygon_area_centroid(pts):
    x, y = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    if area == 0.0:
        return 0.0, pts.mean(axis=0)
    cx = ((x + xn) * cross).sum() / (6.0 * area)
    cy = ((y + yn) * cross).sum() / (6.0 * area)
    return area, np.array([cx, cy])


@dataclass(frozen=True, eq=False)
class CoarseMesh:
    vertices: np.ndarray          # (nv, 2)
    cells: tuple                  # tuple of int arrays, CCW vertex loops
    faces: np.ndarray             # (nf, 2) vertex ids, ordered along n_F rotated
    face_cells: np.ndarray        # (nf, 2) adjacent cells, -1 for none
    cell_faces: tuple             # per cell: face ids in loop order
    cell_signs: tuple             # per cell: sigma_{K,F} in {+1, -1}
    centroids: np.ndarray
    diameters: np.ndarray
    areas: np.ndarray

    @property
    def n_cells(self):
        return len(self.cells)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def boundary_faces(self):
        return np.flatnonzero(self.face_cells[:, 1] < 0)

    @property
    def interior_faces(self):
        return np.flatnonzero(self.face_cells[:, 1] >= 0)

    @property
    def H(self):
        return float(self.diameters.max())

    def face_length(self, f):
        a, b = self.vertices[self.faces[f]]
        return float(np.hypot(*(b - a)))

    def face_normal(self, f):
        """Fixed unit normal n_F."""
        a, b = self.vertices[self.faces[f]]
        d = (b - a) / np.hypot(*(b - a))
        return np.array([d[1], -d[0]])

    def face_points(self, f):
        a, b = self.vertices[self.faces[f]]
        return a.copy(), b.copy()

    def closure_defect(self, c):
        """|sum_F |F| sigma_{K,F} n_F| for cell ``c``."""
        s = np.zeros(2)
        for f, sg in zip(self.cell_faces[c], self.cell_signs[c]):
            s += self.face_length(f) * sg * self.face_normal(f)
        return float(np.hypot(*s))

    def summary(self):
        return {
            "n_vertices": int(len(self.vertices)),
            "n_cells": self.n_cells,
            "n_faces": self.n_faces,
            "n_interior_faces": int(len(self.interior_faces)),
            "n_boundary_faces": int(len(self.boundary_faces)),
            "H": self.H,
            "min_area": float(self.areas.min()),
        }

    def summary_json(self):
        return json.dumps(self.summary(), indent=2)

    def fingerprint(self):
        """Bytes identifying the geometry, for cache keys."""
        parts = [np.ascontiguousarray(self.vertices, dtype="<f8").tobytes()]
        for c in self.cells:
            parts.append(np.asarray(c, dtype="<i8").tobytes() + b"|")
        return b"".join(parts)


def from_polygons(vertices, cells, *, tol=1e-12):
    """Build a :class:`CoarseMesh` from vertex coordinates and CCW loops.

    Faces are deduplicated by their vertex pair.  Rejects clockwise or
    degenerate cells, edges shared with the same orientation (inconsistent
    orientation), edges used more than twice, hanging vertices and holes.
    """
    vertices = np.asarray(vertices, dtype=float)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshError("vertices must have shape (n, 2)")
    cells = tuple(np.asarray(c, dtype=np.int64) for c in cells)
    if not cells:
        raise MeshError("mesh has no cells")

    edge_map = {}
    faces, face_cells = [], []
    cell_faces, cell_signs = [], []
    areas, cents, diams = [], [], []
    for ci, loop in enumerate(cells):
        if len(loop) < 3:
            raise MeshError(f"cell {ci}: fewer than 3 vertices")
        if len(set(loop.tolist())) != len(loop):
            raise MeshError(f"cell {ci}: repeated vertex")
        if loop.min() < 0 or loop.max() >= len(vertices):
            raise MeshError(f"cell {ci}: vertex index out of range")
        pts = vertices[loop]
        area, cen = _polygon_area_centroid(pts)
        scale = np.ptp(pts, axis=0).max()
        if area <= tol * scale**2:
            raise MeshError(f"cell {ci}: non-positive area {area:.3e} (clockwise or degenerate)")
        areas.append(area)
        cents.append(cen)
        diams.append(max(np.hypot(*(p - q)) for p in pts for q in pts))
        fl, sl = [], []
        for i in range(len(loop)):
            a, b = int(loop[i]), int(loop[(i + 1) % len(loop)])
            key = (min(a, b), max(a, b))
            if key in edge_map:
                f = edge_map[key]
                if face_cells[f][1] >= 0:
                    raise MeshError(f"edge {key} shared by more than two cells")
                if tuple(faces[f]) != (b, a):
                    raise MeshError(f"cell {ci}: inconsistent orientation on edge {key}")
                face_cells[f][1] = ci
                fl.append(f)
                sl.append(-1)
            else:
                edge_map[key] = len(faces)
                fl.append(len(faces))
                sl.append(1)
                faces.append([a, b])
                face_cells.append([ci, -1])
        cell_faces.append(np.array(fl, dtype=np.int64))
        cell_signs.append(np.array(sl, dtype=np.int64))

    faces = np.array(faces, dtype=np.int64)
    face_cells = np.array(face_cells, dtype=np.int64)
    _check_boundary(vertices, faces, face_cells, float(np.sum(areas)), tol)
    mesh = CoarseMesh(vertices, cells, faces, face_cells, tuple(cell_faces),
                      tuple(cell_signs), np.array(cents), np.array(diams), np.array(areas))
    for c in range(mesh.n_cells):
        if mesh.closure_defect(c) > 1e-12 * mesh.diameters[c]:
            raise MeshError(f"cell {c}: polygon closure violated")
    return mesh


def _check_boundary(vertices, faces, face_cells, total_area, tol):
    bnd = faces[face_cells[:, 1] < 0]
    nxt = {}
    for a, b in bnd:
        if a in nxt:
            raise MeshError(f"boundary is not a simple loop at vertex {a}")
        nxt[int(a)] = int(b)
    start = int(bnd[0, 0])
    loop = [start]
    v = nxt[start]
    while v != start:
        loop.append(v)
        if v not in nxt or len(loop) > len(bnd):
            raise MeshError("boundary edges do not close into a loop")
        v = nxt[v]
    if len(loop) != len(bnd):
        raise MeshError("domain boundary has several components (gap or hole)")
    outer, _ = _polygon_area_centroid(vertices[loop])
    if abs(outer - total_area) > 1e-10 * max(abs(outer), 1.0):
        raise MeshError(f"cells do not cover the domain: {total_area} vs {outer}")


def build_structured_coarse(nx, ny, domain=(0.0, 1.0, 0.0, 1.0)):
    """``nx * ny`` rectangles on ``domain = (x0, x1, y0, y1)``."""
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be >= 1")
    x0, x1, y0, y1 = map(float, domain)
    if not (x1 > x0 and y1 > y0):
        raise MeshError("degenerate rectangle")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    vid = lambda i, j: j * (nx + 1) + i
    cells = [[vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)]
             for j in range(ny) for i in range(nx)]
    return from_polygons(verts, cells)


def parse_mesh_text(text):
    verts, cells = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            if tok[0] == "v" and len(tok) == 3:
                verts.append([float(tok[1]), float(tok[2])])
            elif tok[0] == "c" and len(tok) >= 4:
                cells.append([int(t) for t in tok[1:]])
            else:
                raise ValueError
        except ValueError:
            raise MeshError(f"line {lineno}: cannot parse {line!r}") from None
    return np.array(verts, dtype=float).reshape(-1, 2), cells


def load_polygonal_mesh(path):
    """Read the ``v x y`` / ``c i1 ... in`` text format."""
    text = Path(path).read_text()
    verts, cells = parse_mesh_text(text)
    return from_polygons(verts, cells)


def write_polygonal_mesh(mesh, path):
    lines = [f"v {float(x)!r} {float(y)!r}" for x, y in mesh.vertices]
    lines += ["c " + " ".join(str(int(i)) for i in c) for c in mesh.cells]
    Path(path).write_text("\n".join(lines) + "\n")


def voronoi_polygons(n_seeds, seed=0, lloyd=5, domain=(0.0, 1.0, 0.0, 1.0)):
    """Bounded Voronoi partition of a rectangle by seed reflection.

    A few Lloyd sweeps keep cells away from sliver faces.  Returns
    ``(vertices, cells)`` with CCW loops and merged duplicate vertices.
    """
    from scipy.spatial import Voronoi

    x0, x1, y0, y1 = domain
    rng = np.random.default_rng(seed)
    pts = np.column_stack([rng.uniform(x0, x1, n_seeds), rng.uniform(y0, y1, n_seeds)])
    for it in range(lloyd + 1):
        mirrored = np.vstack([
            pts,
            np.column_stack([2 * x0 - pts[:, 0], pts[:, 1]]),
            np.column_stack([2 * x1 - pts[:, 0], pts[:, 1]]),
            np.column_stack([pts[:, 0], 2 * y0 - pts[:, 1]]),
            np.column_stack([pts[:, 0], 2 * y1 - pts[:, 1]]),
        ])
        vor = Voronoi(mirrored)
        polys = []
        for i in range(n_seeds):
            region = vor.regions[vor.point_region[i]]
            poly = np.clip(vor.vertices[region], [x0, y0], [x1, y1])
            c = poly.mean(axis=0)
            order = np.argsort(np.arctan2(poly[:, 1] - c[1], poly[:, 0] - c[0]))
            polys.append(poly[order])
        if it < lloyd:
            pts = np.array([_polygon_area_centroid(p)[1] for p in polys])

    # merge vertices that coincide up to rounding
    scale = max(x1 - x0, y1 - y0)
    verts, cells = [], []
    for poly in polys:
        loop = []
        for p in poly:
            for vi, q in enumerate(verts):
                if np.hypot(*(p - q)) < 1e-10 * scale:
                    break
            else:
                vi = len(verts)
                verts.append(p)
            if not loop or loop[-1] != vi:
                loop.append(vi)
        if loop[0] == loop[-1]:
            loop.pop()
        cells.append(loop)
    return np.array(verts), cells


def voronoi_mesh(n_seeds=10, seed=0, lloyd=5):
    return from_polygons(*voronoi_polygons(n_seeds, seed, lloyd))


def sample_mesh_path(name="voronoi10.mesh"):
    return Path(__file__).parent / "data" / name


# --------------------------------------------------------------------------
# fine submesh
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FineMesh:
    """Conforming triangulation of the whole domain grouped by coarse cell.

    ``cell_nodes[c]`` lists the global node ids of cell ``c``;
    ``cell_tris[c]`` its triangles in *local* node numbering;
    ``face_nodes[f]`` the ordered global node ids along face ``f`` (from
    ``faces[f, 0]`` to ``faces[f, 1]``), shared by both neighbours.
    """

    coarse: CoarseMesh
    level: int
    points: np.ndarray
    triangles: np.ndarray          # (T, 3) global ids
    tri_cell: np.ndarray           # (T,) owning coarse cell
    cell_nodes: tuple
    cell_tris: tuple
    face_nodes: tuple

    @property
    def n_nodes(self):
        return len(self.points)

    def local_face_nodes(self, c, i):
        """Local (cell ``c``) ids of the nodes on its i-th face, face order."""
        f = self.coarse.cell_faces[c][i]
        return np.searchsorted(self.cell_nodes[c], self.face_nodes[f])

    def cell_points(self, c):
        return self.points[self.cell_nodes[c]]

    def boundary_nodes(self):
        ids = [self.face_nodes[f] for f in self.coarse.boundary_faces]
        return np.unique(np.concatenate(ids))

    def fingerprint(self):
        return self.coarse.fingerprint() + f"|r={self.level}".encode()


def build_fine(coarse, r):
    """Fan-triangulate every cell from its centroid, then refine r times."""
    if r < 0:
        raise MeshError("refinement level must be >= 0")
    n = 2 ** r
    pts, index = [], {}

    def node(key, xy):
        i = index.get(key)
        if i is None:
            i = index[key] = len(pts)
            pts.append(xy)
        return i

    V = coarse.vertices
    tris, tri_cell, cell_nodes, cell_tris = [], [], [], []
    face_nodes = []
    for f, (a, b) in enumerate(coarse.faces):
        ids = [node(("v", int(a)), V[a])]
        for j in range(1, n):
            ids.append(node(("f", f, j), V[a] + (j / n) * (V[b] - V[a])))
        ids.append(node(("v", int(b)), V[b]))
        face_nodes.append(np.array(ids, dtype=np.int64))

    for c, loop in enumerate(coarse.cells):
        cen = coarse.centroids[c]
        nv = len(loop)
        P = V[loop]
        fan_area = 0.5 * ((P[:, 0] - cen[0]) * (np.roll(P[:, 1], -1) - cen[1])
                          - (np.roll(P[:, 0], -1) - cen[0]) * (P[:, 1] - cen[1]))
        if np.any(fan_area <= 1e-12 * coarse.diameters[c] ** 2):
            raise MeshError(f"cell {c} is not star-shaped with respect to its centroid")
        gids = {}
        for e in range(nv):
            va, vb = P[e], P[(e + 1) % nv]
            f = coarse.cell_faces[c][e]
            fwd = coarse.cell_signs[c][e] > 0
            spoke_a, spoke_b = e, (e + 1) % nv
            grid = np.empty((n + 1, n + 1), dtype=np.int64)
            for i in range(n + 1):
                for j in range(n + 1 - i):
                    # point = cen + i/n (va - cen) + j/n (vb - cen)
                    if i + j == n:
                        pos = j if fwd else n - j
                        gid = face_nodes[f][pos]
                    elif j == 0:
                        gid = node(("c", c, 0) if i == 0 else ("s", c, spoke_a, i),
                                   cen + (i / n) * (va - cen))
                    elif i == 0:
                        gid = node(("s", c, spoke_b, j), cen + (j / n) * (vb - cen))
                    else:
                        gid = node(("i", c, e, i, j),
                                   cen + (i / n) * (va - cen) + (j / n) * (vb - cen))
                    grid[i, j] = gid
            for i in range(n):
                for j in range(n - i):
                    t1 = (grid[i, j], grid[i + 1, j], grid[i, j + 1])
                    tris.append(t1)
                    if i + j < n - 1:
                        tris.append((grid[i + 1, j], grid[i + 1, j + 1], grid[i, j + 1]))
            gids[e] = grid
        nt_cell = nv * n * n
        cell_tri = np.array(tris[len(tris) - nt_cell:], dtype=np.int64)
        nodes = np.unique(cell_tri)
        tri_cell.extend([c] * nt_cell)
        cell_nodes.append(nodes)
        cell_tris.append(np.searchsorted(nodes, cell_tri))

    points = np.array(pts, dtype=float)
    triangles = np.array(tris, dtype=np.int64)
    fine = FineMesh(coarse, r, points, triangles, np.array(tri_cell), tuple(cell_nodes),
                    tuple(cell_tris), tuple(face_nodes))
    from .kernels import triangle_areas

    if np.any(triangle_areas(points, triangles) <= 0.0):
        raise MeshError("fine triangle with non-positive area")
    return fine
