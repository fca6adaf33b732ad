import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import fluxbound.geometry as geo
from fluxbound.errors import (DegenerateSimplex, KappaJumpWarning,
                              MeshFormatError, NonConformingMesh)

from conftest import random_simplex


# ---------------------------------------------------------------------------
# single-simplex operations
# ---------------------------------------------------------------------------

def test_volume_reference_simplices(unit_triangle):
    tet = np.vstack([np.zeros(3), np.eye(3)])
    assert geo.simplex_volume(tet) == pytest.approx(1.0 / 6.0)
    assert geo.simplex_volume(unit_triangle) == pytest.approx(0.5)
    big = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]])
    assert geo.simplex_volume(big) == pytest.approx(2.0)


def test_volume_degenerate_raises():
    flat = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 1e-16]])
    with pytest.raises(DegenerateSimplex):
        geo.simplex_volume(flat)


def test_barycentric_gradients_unit_triangle(unit_triangle):
    g = geo.barycentric_gradients(unit_triangle)
    assert np.allclose(g, [[-1, -1], [1, 0], [0, 1]])


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2 ** 31))
def test_gradient_partition_of_unity(d, seed):
    pts = random_simplex(d, np.random.default_rng(seed))
    g = geo.barycentric_gradients(pts)
    assert np.abs(g.sum(axis=0)).max() < 1e-10 * np.abs(g).max()
    # lambda_m(x_n) = delta_mn
    for n in range(d + 1):
        lam = (pts[n] - pts[0]) @ g.T
        lam[0] += 1.0
        assert np.allclose(lam, np.eye(d + 1)[n], atol=1e-10)


def test_gradient_facet_measure_identity(rng):
    # d |K| |grad lambda_m| equals the independently computed facet area
    for _ in range(10):
        pts = random_simplex(3, rng)
        vol = geo.simplex_volume(pts)
        g = geo.barycentric_gradients(pts)
        for m in range(4):
            fpts = np.delete(pts, m, axis=0)
            v = fpts[1:] - fpts[0]
            area = math.sqrt(np.linalg.det(v @ v.T)) / 2.0
            assert 3 * vol * np.linalg.norm(g[m]) == pytest.approx(area, rel=1e-12)


def test_geometric_quantities_unit_triangle(unit_triangle):
    q = geo.geometric_quantities(unit_triangle)
    assert q.diameter == pytest.approx(math.sqrt(2.0))
    assert q.inradius == pytest.approx(1.0 / (2.0 + math.sqrt(2.0)), rel=1e-12)
    # altitude over the hypotenuse (facet opposite vertex 0)
    assert q.altitudes[0] == pytest.approx(2 * 0.5 / math.sqrt(2.0), rel=1e-12)


def test_regular_simplex_incentre_is_centroid():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, math.sqrt(3) / 2]])
    q = geo.geometric_quantities(pts)
    assert np.allclose(q.incentre, q.centroid, atol=1e-14)


def test_incentre_distance_to_facets_is_inradius(rng):
    for d in (2, 3, 4):
        pts = random_simplex(d, rng)
        q = geo.geometric_quantities(pts)
        g = geo.barycentric_gradients(pts)
        for i in range(d + 1):
            fpts = np.delete(pts, i, axis=0)
            n = g[i] / np.linalg.norm(g[i])
            dist = abs((q.incentre - fpts[0]) @ n)
            assert dist == pytest.approx(q.inradius, rel=1e-12)


def test_local_facet_frame(unit_triangle, rng):
    origin, frame = geo.local_facet_frame(unit_triangle, 2)  # facet on the x-axis
    assert np.allclose(frame[-1], [0.0, 1.0], atol=1e-14)
    for d in (2, 3, 4):
        pts = random_simplex(d, rng)
        q = geo.geometric_quantities(pts)
        inside = rng.dirichlet(np.ones(d + 1), size=30) @ pts
        for i in range(d + 1):
            origin, frame = geo.local_facet_frame(pts, i)
            assert np.abs(frame @ frame.T - np.eye(d)).max() < 1e-12
            xd = (q.incentre - origin) @ frame[-1]
            assert xd == pytest.approx(q.inradius, rel=1e-11)
            # facet vertices sit at height zero, the rest of K above it
            fpts = np.delete(pts, i, axis=0)
            assert np.abs((fpts - origin) @ frame[-1]).max() < 1e-12 * q.diameter
            assert ((inside - origin) @ frame[-1]).min() > -1e-12 * q.diameter


# ---------------------------------------------------------------------------
# facet adjacency and meshes
# ---------------------------------------------------------------------------

def test_two_triangle_square_facets(two_triangle_square):
    mesh = two_triangle_square
    assert mesh.n_facets == 5
    interior = mesh.facet_tag == geo.INTERIOR
    assert interior.sum() == 1
    assert (~interior).sum() == 4


def test_sigma_signs_cancel():
    mesh = geo.build_cube_mesh(2, 3, 1.0)
    for fi in np.flatnonzero(mesh.facet_elems[:, 1] >= 0):
        (ea, eb), (la, lb) = mesh.facet_elems[fi], mesh.facet_local[fi]
        assert mesh.elem_sigma[ea, la] + mesh.elem_sigma[eb, lb] == 0
        assert ea < eb and mesh.elem_sigma[ea, la] == 1


def test_t_junction_raises():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 1.0], [0.5, -1.0], [0.5, 2.0]])
    cells = np.array([[0, 1, 2], [0, 1, 3], [0, 1, 4]])
    with pytest.raises(NonConformingMesh):
        geo.build_facet_adjacency(cells)


def test_cube_mesh_counts_and_volume():
    mesh = geo.build_cube_mesh(16, 3, 1.0)
    assert mesh.n_elements == 6 * 16 ** 3
    ndof = mesh.n_points - len(mesh.dirichlet_vertices)
    assert ndof == 15 * 17 ** 2  # (M-1)(M+1)^2
    assert mesh.volumes.sum() == pytest.approx(8.0, rel=1e-12)

    for m, d in ((3, 2), (2, 3), (1, 4)):
        mesh = geo.build_cube_mesh(m, d, 1.0)
        assert mesh.n_elements == math.factorial(d) * m ** d
        assert mesh.volumes.sum() == pytest.approx(2.0 ** d, rel=1e-12)


def test_cube_mesh_m1_d2():
    mesh = geo.build_cube_mesh(1, 2, 1.0)
    assert mesh.n_elements == 2
    interior = np.flatnonzero(mesh.facet_tag == geo.INTERIOR)
    assert len(interior) == 1 and mesh.n_facets == 5


def test_nondirichlet_count_3d():
    for m in (2, 3):
        mesh = geo.build_cube_mesh(m, 3, 1.0)
        free = mesh.n_points - len(mesh.dirichlet_vertices)
        assert free == (m - 1) * (m + 1) ** 2


def test_boundary_tags_benchmark_rule():
    mesh = geo.build_cube_mesh(2, 3, 1.0)
    for fi in np.flatnonzero(mesh.facet_tag != geo.INTERIOR):
        cent = mesh.points[mesh.facets[fi]].mean(axis=0)
        on_x1 = abs(abs(cent[0]) - 1.0) < 1e-12
        assert (mesh.facet_tag[fi] == geo.DIRICHLET) == on_x1


def test_element_permutation_invariance(rng):
    base = geo.build_cube_mesh(2, 2, lambda c: 1.0 + np.abs(c[:, 0]))
    perm = rng.permutation(base.n_elements)
    tags = {tuple(int(v) for v in base.facets[fi]):
            ("D" if base.facet_tag[fi] == geo.DIRICHLET else "N")
            for fi in np.flatnonzero(base.facet_tag != geo.INTERIOR)}
    other = geo.build_mesh(base.points, base.simplices[perm], base.kappa[perm], tags)
    assert np.array_equal(base.simplices, other.simplices)
    assert np.array_equal(base.kappa, other.kappa)
    assert np.array_equal(base.facets, other.facets)
    assert np.array_equal(base.elem_sigma, other.elem_sigma)


def test_kappa_jump_warning():
    with pytest.warns(KappaJumpWarning):
        geo.build_cube_mesh(2, 2, lambda c: np.where(c[:, 0] < 0, 1e-3, 1e3))


def test_mesh_immutable():
    mesh = geo.build_cube_mesh(1, 2, 1.0)
    with pytest.raises(ValueError):
        mesh.points[0, 0] = 5.0


def test_vertex_patch_consistency():
    mesh = geo.build_cube_mesh(2, 3, 1.0)
    for v in (0, 13, mesh.n_points - 1):
        els, locs = mesh.vertex_patch(v)
        assert np.all(mesh.simplices[els, locs] == v)
        expected = np.flatnonzero((mesh.simplices == v).any(axis=1))
        assert np.array_equal(np.sort(els), expected)
        fids, slots = mesh.vertex_facets(v)
        assert np.all(mesh.facets[fids, slots] == v)


# ---------------------------------------------------------------------------
# mesh file format
# ---------------------------------------------------------------------------

def test_mesh_file_roundtrip(tmp_path):
    mesh = geo.build_cube_mesh(2, 2, lambda c: np.where(c[:, 0] < 0, 2.0, 3.0),
                               kappa_jump_warn=np.inf)
    path = tmp_path / "square.mesh"
    geo.write_mesh(mesh, str(path))
    back = geo.read_mesh(str(path))
    assert back.dim == mesh.dim
    assert np.array_equal(back.simplices, mesh.simplices)
    assert np.allclose(back.points, mesh.points)
    assert np.array_equal(back.facet_tag, mesh.facet_tag)
    assert np.allclose(back.kappa, mesh.kappa)


def test_mesh_text_parsing_with_comments():
    text = """
    # a single reference triangle with one Dirichlet edge
    DIM 2
    POINTS 3
    0 0
    1 0   # second vertex
    0 1
    CELLS 1
    0 1 2 0.5
    BOUNDARY 3
    0 1 D
    0 2 N
    1 2 N
    """
    mesh = geo.read_mesh(text)
    assert mesh.n_elements == 1
    assert mesh.kappa[0] == 0.5
    assert (mesh.facet_tag == geo.DIRICHLET).sum() == 1


def test_mesh_file_errors():
    with pytest.raises(MeshFormatError):
        geo.read_mesh("DIM 2\nPOINTS 1\n0 0\nCELLS 0\nBOUNDARY 0\nJUNK")
    # untagged boundary facet
    with pytest.raises(MeshFormatError):
        geo.read_mesh("DIM 2\nPOINTS 3\n0 0\n1 0\n0 1\nCELLS 1\n0 1 2 1.0\n"
                      "BOUNDARY 2\n0 1 D\n0 2 N")
    # tag for a non-boundary facet
    with pytest.raises(MeshFormatError):
        geo.read_mesh("DIM 2\nPOINTS 4\n0 0\n1 0\n0 1\n1 1\nCELLS 2\n"
                      "0 1 2 1.0\n1 3 2 1.0\nBOUNDARY 5\n0 1 D\n0 2 N\n1 3 N\n"
                      "2 3 N\n1 2 N")
