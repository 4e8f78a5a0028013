import numpy as np
import pytest

from mhmhho.localsolver import UnisolvenceError, _checked_inverse, data_of, reconstruct
from conftest import disc_for

CASES = [("4x4", 0, 0), ("4x4", 1, 0), ("4x4", 2, 1), ("voronoi", 1, 0), ("voronoi", 2, 1)]


def zero_mean_tests(space, rng, n=20):
    v = rng.standard_normal((space.nn, n))
    return v - np.outer(np.ones(space.nn), space.mass_row @ v / space.area)


def unit_square_space(k=1):
    return disc_for("1x1", k=k, m=0, r=3).spaces[0]


def test_stiffness_kernel_is_constants():
    s = disc_for("4x4", 1).spaces[5]
    K = s.stiffness.toarray()
    assert np.abs(K - K.T).max() <= 1e-14 * np.abs(K).max()
    ev = np.linalg.eigvalsh(K)
    assert abs(ev[0]) < 1e-12 * ev[-1] and ev[1] > 1e-8 * ev[-1]
    for i in range(s.n_faces):
        np.testing.assert_allclose(s.face_moments[i] @ np.ones(s.nn), s.face_one[i], rtol=1e-13, atol=1e-16)


def test_lift_neumann_zero():
    s = unit_square_space()
    assert np.abs(s.lift_neumann([np.zeros(s.n_k)] * s.n_faces)).max() == 0.0


def test_lift_neumann_affine():
    s = unit_square_space()
    coarse = s.fine.coarse
    mu = []
    for f, sg in zip(s.faces, s.signs):
        mu.append(np.r_[sg * coarse.face_normal(f)[0], 0.0])     # n_K . e_x
    u = s.lift_neumann(mu)
    np.testing.assert_allclose(u, s.points[:, 0] - 0.5, atol=1e-10)


@pytest.mark.parametrize("mesh, k, m", CASES)
def test_lift_neumann_weak_form(mesh, k, m, rng):
    s = disc_for(mesh, k, m).spaces[3]
    mu = [rng.standard_normal(s.n_k) for _ in range(s.n_faces)]
    u = s.lift_neumann(mu)
    v = zero_mean_tests(s, rng)
    lhs = u @ (s.stiffness @ v)
    rhs = sum(mu[i] @ (s.face_moments[i] @ v) for i in range(s.n_faces))
    assert np.abs(lhs - rhs).max() <= 1e-11 * np.abs(rhs).max()
    assert abs(s.mass_row @ u) <= 1e-12 * np.abs(u).max() * s.area


@pytest.mark.parametrize("mesh, k, m", CASES)
def test_lift_source(mesh, k, m, rng):
    s = disc_for(mesh, k, m).spaces[2]
    const = np.zeros(s.n_m)
    const[0] = 7.3
    assert np.abs(s.lift_source(const)).max() <= 1e-12
    assert np.abs(s.lift_source(np.zeros(s.n_m))).max() == 0.0
    g = rng.standard_normal(s.n_m)
    u = s.lift_source(g)
    v = zero_mean_tests(s, rng)
    lhs = u @ (s.stiffness @ v)
    rhs = g @ (s.cell_moments @ v)
    scale = (np.abs(g) @ np.abs(s.cell_moments) @ np.abs(v)).max()
    assert np.abs(lhs - rhs).max() <= 1e-11 * scale


@pytest.mark.parametrize("mesh, k, m", CASES)
def test_primal_basis(mesh, k, m):
    d = disc_for(mesh, k, m)
    for s, b in zip(d.spaces, d.bases):
        assert b.P.shape[1] == b.n_m + b.n_k * b.n_faces
        np.testing.assert_array_equal(b.P[:, 0], 1.0)
        means = s.mass_row @ b.P[:, 1:]
        assert np.abs(means).max() <= 1e-12 * np.abs(b.P).max() * s.area
        for i in range(s.n_faces):
            for j in range(s.n_k):
                col = b.face_slice(i).start + j
                energy = s.energy(b.P[:, col])
                pairing = s.face_moments[i][j] @ b.P[:, col]
                assert energy == pytest.approx(pairing, rel=1e-11)


@pytest.mark.parametrize("mesh, k, m", CASES)
def test_energy_gram(mesh, k, m):
    d = disc_for(mesh, k, m)
    for b in d.bases:
        E = b.E
        assert np.abs(E - E.T).max() <= 1e-13 * np.abs(E).max()
        ev = np.linalg.eigvalsh(E)
        assert abs(ev[0]) <= 1e-12 * ev[-1]
        if len(ev) > 1:
            assert ev[1] > 1e-10 * ev[-1]
        assert np.abs(E[:, 0]).max() <= 1e-12 * np.abs(E).max()


@pytest.mark.parametrize("mesh, k, m", CASES)
def test_dual_basis(mesh, k, m):
    d = disc_for(mesh, k, m)
    for s, b in zip(d.spaces, d.bases):
        n = b.ndof
        np.testing.assert_allclose(b.S @ b.D, np.eye(n), atol=1e-11)
        np.testing.assert_allclose(b.D @ b.S, np.eye(n), atol=1e-11)
        dofs = s.dof_matrix() @ b.dual
        np.testing.assert_allclose(dofs, np.eye(n), atol=1e-10)


@pytest.mark.parametrize("mesh, k, m", CASES[1:4])
def test_dual_energy_minimality(mesh, k, m, rng):
    """Adding any fine function with zero DOFs cannot lower the energy."""
    d = disc_for(mesh, k, m)
    s, b = d.spaces[1], d.bases[1]
    Sig = s.dof_matrix()
    phi = b.dual[:, b.face_slice(0).start]
    e0 = s.energy(phi)
    for _ in range(10):
        v = rng.standard_normal(s.nn)
        w = v - b.P @ (b.D @ (Sig @ v))                 # zero DOFs
        assert np.abs(Sig @ w).max() <= 1e-10 * np.abs(w).max()
        assert s.energy(phi + 1e-2 * w) > e0
        assert abs(s.energy(phi, w)) <= 1e-10 * np.sqrt(e0 * s.energy(w))


@pytest.mark.parametrize("mesh, k, m", CASES)
def test_face_based_basis(mesh, k, m):
    d = disc_for(mesh, k, m)
    for s, b in zip(d.spaces, d.bases):
        Sig = s.dof_matrix()
        fb = b.face_based
        cell_cols = fb[:, : b.n_m]
        assert np.abs(Sig[b.n_m:] @ cell_cols).max() <= 1e-10
        face_div = b.div @ b.C[:, b.n_m:]
        assert np.abs(face_div).max() <= 1e-12
        np.testing.assert_allclose(b.div @ b.C[:, : b.n_m], np.eye(b.n_m), atol=1e-12)
        for i in range(b.n_m):
            mu = b.fb_flux[:, i]
            total = s.cell_gram[i, 0] + sum(
                s.face_one[f] @ mu[b.flux_rows(f)] for f in range(b.n_faces))
            assert abs(total) <= 1e-11


@pytest.mark.parametrize("mesh, k, m", CASES)
def test_change_of_basis_round_trips(mesh, k, m):
    d = disc_for(mesh, k, m)
    for b in d.bases:
        np.testing.assert_allclose(b.D @ (b.S @ b.C), b.C, atol=1e-9 * np.abs(b.C).max())
        back = np.linalg.solve(b.C, b.D)               # dual in face-based coordinates
        np.testing.assert_allclose(b.C @ back, b.D, atol=1e-9 * np.abs(b.D).max())
        np.testing.assert_allclose(b.P @ (b.D @ b.S), b.P, atol=1e-9 * np.abs(b.P).max())


@pytest.mark.parametrize("mesh, k, m", CASES)
def test_reconstruction_identities(mesh, k, m, rng):
    d = disc_for(mesh, k, m)
    for s, b in zip(d.spaces, d.bases):
        Sig = s.dof_matrix()
        for _ in range(50):
            vK = rng.standard_normal(b.n_m)
            vF = [rng.standard_normal(b.n_k) for _ in range(b.n_faces)]
            u = reconstruct(b, vK, vF)
            dofs = Sig @ u
            assert np.abs(dofs[: b.n_m] - vK).max() <= 1e-10
            assert np.abs(dofs[b.n_m:] - np.concatenate(vF)).max() <= 1e-10
        closure = sum(s.face_moments[i][0] @ u for i in range(b.n_faces))
        assert closure == pytest.approx(sum(s.face_one[i] @ vF[i] for i in range(b.n_faces)), abs=1e-10)


def test_reconstruct_right_inverse(rng):
    d = disc_for("voronoi", 2, 1)
    s, b = d.spaces[4], d.bases[4]
    w = b.P @ rng.standard_normal(b.ndof)
    dofs = s.dof_matrix() @ w
    u = reconstruct(b, dofs[: b.n_m], np.split(dofs[b.n_m:], b.n_faces))
    assert np.abs(u - w).max() <= 1e-10 * np.abs(w).max()
    assert np.abs(reconstruct(b, np.zeros(b.n_m), [np.zeros(b.n_k)] * b.n_faces)).max() == 0.0
    with pytest.raises(ValueError):
        reconstruct(b, np.zeros(b.n_m + 1), [np.zeros(b.n_k)] * b.n_faces)


@pytest.mark.parametrize("mesh", ["4x4", "voronoi"])
def test_reconstruct_affine(mesh):
    d = disc_for(mesh, 1, 0)
    for s, b in zip(d.spaces, d.bases):
        xK = s.cell_basis.center
        w = s.points[:, 0] - xK[0] + 0.3 * (s.points[:, 1] - xK[1])
        dofs = s.dof_matrix() @ w
        u = reconstruct(b, dofs[: b.n_m], np.split(dofs[b.n_m:], b.n_faces))
        assert np.abs(u - w).max() <= 1e-10


def test_data_of_matches_weak_form(rng):
    d = disc_for("voronoi", 1, 0)
    s, b = d.spaces[0], d.bases[0]
    coords = rng.standard_normal(b.ndof)
    g, mu = data_of(b, coords)
    u = b.P @ coords
    v = rng.standard_normal((s.nn, 5))
    lhs = u @ (s.stiffness @ v)
    rhs = g @ (s.cell_moments @ v) + sum(mu[b.flux_rows(i)] @ (s.face_moments[i] @ v) for i in range(b.n_faces))
    assert np.abs(lhs - rhs).max() <= 1e-10 * np.abs(lhs).max()


def test_unisolvence_failure_detected():
    M = np.array([[1.0, 1.0], [1.0, 1.0 + 1e-14]])
    with pytest.raises(UnisolvenceError, match="numerically singular"):
        _checked_inverse(M, "S", 0)
