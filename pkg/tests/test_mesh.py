import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mhmhho.kernels import triangle_areas
from mhmhho.mesh import (MeshError, build_fine, build_structured_coarse, from_polygons,
                         load_polygonal_mesh, parse_mesh_text, sample_mesh_path, voronoi_mesh,
                         write_polygonal_mesh)


@pytest.mark.parametrize("nx, ny, n_cells, n_faces, n_interior", [
    (1, 1, 1, 4, 0),
    (2, 1, 2, 7, 1),
    (4, 4, 16, 40, 24),
])
def test_structured_counts(nx, ny, n_cells, n_faces, n_interior):
    m = build_structured_coarse(nx, ny)
    assert (m.n_cells, m.n_faces, len(m.interior_faces)) == (n_cells, n_faces, n_interior)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 7), st.integers(1, 7))
def test_structured_face_formula(nx, ny):
    m = build_structured_coarse(nx, ny)
    assert m.n_faces == 2 * nx * ny + nx + ny
    assert len(m.boundary_faces) == 2 * (nx + ny)


@pytest.mark.parametrize("bad", [(0, 1, (0, 1, 0, 1)), (1, 1, (0, 0, 0, 1)), (1, 1, (0, 1, 1, 1))])
def test_structured_rejects_degenerate(bad):
    nx, ny, dom = bad
    with pytest.raises(MeshError):
        build_structured_coarse(nx, ny, dom)


def test_closure_and_areas_voronoi():
    m = load_polygonal_mesh(sample_mesh_path())
    for c in range(m.n_cells):
        assert m.closure_defect(c) <= 1e-13 * m.diameters[c]
    assert np.all(m.areas > 0)
    assert m.areas.sum() == pytest.approx(1.0, rel=1e-13)


def test_normals_orientation():
    m = build_structured_coarse(3, 2)
    for f in m.interior_faces:
        kp, km = m.face_cells[f]
        assert kp < km
        n = m.face_normal(f)
        assert np.dot(n, m.centroids[km] - m.centroids[kp]) > 0
    for f in m.boundary_faces:
        (k,) = [c for c in m.face_cells[f] if c >= 0]
        a, b = m.face_points(f)
        assert np.dot(m.face_normal(f), 0.5 * (a + b) - m.centroids[k]) > 0
    for c in range(m.n_cells):
        for f, s in zip(m.cell_faces[c], m.cell_signs[c]):
            a, b = m.face_points(f)
            assert np.dot(s * m.face_normal(f), 0.5 * (a + b) - m.centroids[c]) > 0


def test_load_unit_square_equals_structured(tmp_path):
    p = tmp_path / "sq.mesh"
    p.write_text("v 0 0\nv 1 0\nv 1 1\nv 0 1\nc 0 1 2 3\n")
    a = load_polygonal_mesh(p)
    b = build_structured_coarse(1, 1)
    assert a.summary() == b.summary()
    assert sorted(map(tuple, a.vertices[a.cells[0]])) == sorted(map(tuple, b.vertices[b.cells[0]]))
    assert a.n_faces == 4 and len(a.interior_faces) == 0


def test_two_triangles():
    m = from_polygons(np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float), [[0, 1, 2], [0, 2, 3]])
    assert m.n_cells == 2 and len(m.interior_faces) == 1


def test_voronoi_sample_euler():
    m = load_polygonal_mesh(sample_mesh_path())
    assert m.n_cells == 10
    assert len(m.vertices) - m.n_faces + m.n_cells == 1


def test_voronoi_sample_matches_generator():
    assert load_polygonal_mesh(sample_mesh_path()).fingerprint() == voronoi_mesh(10, 0).fingerprint()


def test_write_read_roundtrip(tmp_path):
    m = voronoi_mesh(7, seed=3)
    write_polygonal_mesh(m, tmp_path / "v.mesh")
    assert load_polygonal_mesh(tmp_path / "v.mesh").fingerprint() == m.fingerprint()


SQ = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
TRI = np.array([[0, 0], [1, 0], [0.5, 1], [0.5, -1], [0.5, 2]], float)


@pytest.mark.parametrize("verts, cells, msg", [
    (SQ, [[0, 3, 2, 1]], "clockwise"),
    (TRI, [[0, 1, 2], [1, 0, 3], [0, 1, 4]], "more than two"),
    (TRI, [[0, 1, 2], [0, 1, 4]], "orientation"),
    (np.vstack([SQ, [[2, 0], [3, 0], [3, 1], [2, 1]]]), [[0, 1, 2, 3], [4, 5, 6, 7]], "several components"),
    (np.array([[0, 0], [3, 0], [3, 3], [0, 3], [1, 1], [2, 1], [2, 2], [1, 2]], float),
     [[0, 1, 5, 4], [1, 2, 6, 5], [2, 3, 7, 6], [3, 0, 4, 7]], "several components"),
    (SQ, [[0, 1, 1, 2]], "repeated"),
])
def test_invalid_meshes_rejected(verts, cells, msg):
    with pytest.raises(MeshError, match=msg):
        from_polygons(verts, cells)


def test_parse_errors():
    with pytest.raises(MeshError, match="line 2"):
        parse_mesh_text("v 0 0\nq 1 2\n")
    with pytest.raises(MeshError, match="no cells"):
        from_polygons(*parse_mesh_text("v 0 0\nv 1 0\n"))


def test_summary_json():
    s = json.loads(build_structured_coarse(4, 4).summary_json())
    assert s["n_cells"] == 16 and s["n_faces"] == 40
    assert s["H"] == pytest.approx(np.sqrt(2) / 4)
    assert s["min_area"] == pytest.approx(1 / 16)


@pytest.mark.parametrize("r", [0, 1, 2, 3])
def test_fine_counts(r):
    fine = build_fine(build_structured_coarse(1, 1), r)
    assert len(fine.triangles) == 4 * 4 ** r
    for f in range(4):
        assert len(fine.face_nodes[f]) - 1 == 2 ** r


@pytest.mark.parametrize("mesh", ["structured", "voronoi"])
def test_fine_tiling_and_conformity(mesh):
    coarse = build_structured_coarse(3, 2) if mesh == "structured" else voronoi_mesh(10)
    fine = build_fine(coarse, 2)
    area = triangle_areas(fine.points, fine.triangles)
    assert np.all(area > 0)
    assert area.sum() == pytest.approx(1.0, rel=1e-13)
    for c in range(coarse.n_cells):
        a = triangle_areas(fine.cell_points(c), fine.cell_tris[c]).sum()
        assert a == pytest.approx(coarse.areas[c], rel=1e-13)
    # both neighbours see the same subedge points on shared faces
    for f in coarse.interior_faces:
        kp, km = coarse.face_cells[f]
        ip = list(coarse.cell_faces[kp]).index(f)
        im = list(coarse.cell_faces[km]).index(f)
        pp = fine.cell_points(kp)[fine.local_face_nodes(kp, ip)]
        pm = fine.cell_points(km)[fine.local_face_nodes(km, im)]
        np.testing.assert_array_equal(pp, pm)
    # no hanging nodes: every edge is shared by two triangles or lies on the boundary
    edges = np.sort(np.vstack([fine.triangles[:, [0, 1]], fine.triangles[:, [1, 2]], fine.triangles[:, [2, 0]]]), axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    n_boundary = int((counts == 1).sum())
    assert set(counts) <= {1, 2}
    assert n_boundary == len(coarse.boundary_faces) * 4


def test_fine_rejects_non_star_shaped():
    L = np.array([[0, 0], [1, 0], [1, 0.1], [0.1, 0.1], [0.1, 1], [0, 1]], float)
    coarse = from_polygons(L, [[0, 1, 2, 3, 4, 5]])
    with pytest.raises(MeshError, match="star-shaped"):
        build_fine(coarse, 1)
    with pytest.raises(MeshError):
        build_fine(build_structured_coarse(1, 1), -1)
