"""Mesh construction, connectivity, and geometry invariants."""
import numpy as np
import pytest

from nsfemdg.mesh import (
    build_box_mesh,
    barycentric_coordinates,
    find_elements,
    mesh_metrics,
)


@pytest.fixture(scope="module")
def mesh1():
    return build_box_mesh(1)


@pytest.fixture(scope="module")
def mesh2():
    return build_box_mesh(2)


def test_unit_cube_counts(mesh1):
    assert mesh1.n_verts == 8
    assert mesh1.n_elems == 6
    assert mesh1.n_faces == 18
    assert int(mesh1.is_boundary_face.sum()) == 12
    assert len(mesh1.interior_faces) == 6


def test_refined_counts(mesh2):
    assert mesh2.n_elems == 48
    # 4 face slots per tet, two boundary triangles per cube facet per cell face
    assert int(mesh2.is_boundary_face.sum()) == 2 * 6 * 4
    assert 2 * len(mesh2.interior_faces) + int(mesh2.is_boundary_face.sum()) == 4 * 48


@pytest.mark.parametrize("n", [1, 2, 3])
def test_volumes_fill_box(n):
    mesh = build_box_mesh(n)
    assert mesh.elem_volume.min() > 0
    assert np.isclose(mesh.elem_volume.sum(), 1.0, rtol=0, atol=1e-14)


def test_scaled_box_volume_and_h():
    mesh = build_box_mesh(2, (0.0, -1.0, 0.5), (2.0, 1.0, 1.5))
    assert np.isclose(mesh.elem_volume.sum(), 2.0 * 2.0 * 1.0, atol=1e-13)
    # longest edge of a cell: the main diagonal of one grid cell
    assert np.isclose(mesh.h, np.sqrt(1.0 + 1.0 + 0.25), atol=1e-14)


def test_h_is_max_edge(mesh1):
    assert np.isclose(mesh1.h, np.sqrt(3.0), atol=1e-15)


def test_face_normals_are_unit(mesh2):
    norms = np.linalg.norm(mesh2.face_normal, axis=1)
    assert np.allclose(norms, 1.0, atol=1e-14)


def test_interior_normal_points_owner_to_neighbor(mesh2):
    for f in mesh2.interior_faces:
        e_m, e_p = mesh2.face_owner[f], mesh2.face_neighbor[f]
        assert e_m < e_p  # owner is the lower element index
        d = mesh2.elem_centroid[e_p] - mesh2.elem_centroid[e_m]
        assert np.dot(mesh2.face_normal[f], d) > 0


def test_boundary_normal_points_outward(mesh2):
    for f in mesh2.boundary_faces:
        assert mesh2.face_neighbor[f] == -1
        e = mesh2.face_owner[f]
        d = mesh2.face_centroid[f] - mesh2.elem_centroid[e]
        assert np.dot(mesh2.face_normal[f], d) > 0


def test_elem_face_sign_marks_outward(mesh2):
    for e in range(mesh2.n_elems):
        for l in range(4):
            f = mesh2.elem_faces[e, l]
            d = mesh2.face_centroid[f] - mesh2.elem_centroid[e]
            outward = np.dot(mesh2.face_normal[f], d) > 0
            assert mesh2.elem_face_sign[e, l] == (1.0 if outward else -1.0)


def test_closed_surface_sums_to_zero(mesh2):
    """Divergence theorem on constants: signed area-weighted normals cancel."""
    nu = mesh2.face_normal[mesh2.elem_faces]
    area = mesh2.face_area[mesh2.elem_faces]
    total = np.einsum("el,el,eli->ei", mesh2.elem_face_sign, area, nu)
    assert np.abs(total).max() < 1e-13


def test_face_area_total(mesh1):
    # cube surface 6, each facet split into 2 triangles of area 1/2
    assert np.isclose(mesh1.face_area[mesh1.boundary_faces].sum(), 6.0, atol=1e-13)


def test_find_elements_centroids(mesh2):
    found = find_elements(mesh2, mesh2.elem_centroid)
    assert np.array_equal(found, np.arange(mesh2.n_elems))


def test_find_elements_random_points(mesh2):
    rng = np.random.default_rng(11)
    pts = rng.uniform(0.05, 0.95, size=(50, 3))
    elems = find_elements(mesh2, pts)
    for p, e in zip(pts, elems):
        lam = barycentric_coordinates(mesh2, int(e), p)
        assert lam.min() >= -1e-10
        assert np.isclose(lam.sum(), 1.0, atol=1e-12)


def test_find_elements_outside_raises(mesh1):
    with pytest.raises(ValueError):
        find_elements(mesh1, np.array([[2.0, 0.5, 0.5]]))


def test_nested_refinement(mesh1):
    """Halving the grid keeps every fine element inside one coarse element."""
    fine = build_box_mesh(2)
    parent = find_elements(mesh1, fine.elem_centroid)
    for e in range(fine.n_elems):
        for vid in fine.tets[e]:
            lam = barycentric_coordinates(mesh1, int(parent[e]), fine.vertices[vid])
            assert lam.min() >= -1e-12
    # volumes of children sum to the parent volume
    child_vol = np.zeros(mesh1.n_elems)
    np.add.at(child_vol, parent, fine.elem_volume)
    assert np.allclose(child_vol, mesh1.elem_volume, atol=1e-14)


def test_mesh_metrics_shape_regularity():
    m = [mesh_metrics(build_box_mesh(n)) for n in (1, 2, 4)]
    ratios = [mm.shape_ratio_max for mm in m]
    # Kuhn subdivision is self-similar: the quality is refinement independent
    assert np.allclose(ratios, ratios[0], rtol=1e-10)
    assert ratios[0] < 20.0


def test_h_halves_under_refinement():
    h = [build_box_mesh(n).h for n in (1, 2, 4)]
    assert np.isclose(h[0] / h[1], 2.0, atol=1e-13)
    assert np.isclose(h[1] / h[2], 2.0, atol=1e-13)


def test_positive_orientation(mesh2):
    v = mesh2.vertices[mesh2.tets]
    det = np.linalg.det(v[:, 1:] - v[:, :1])
    assert det.min() > 0
