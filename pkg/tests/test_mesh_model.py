import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finray.fixtures import ShapeSpec, box_points, icosphere, make_object_mesh, _hull_mesh
from finray.mesh_model import (
    DeformableSurface,
    DeformedState,
    MeshError,
    SurfaceMesh,
    TetMesh,
    WatertightError,
    closest_point_on_triangles,
    enclosed_volume,
    extract_surface,
    intersect_approx,
    is_watertight,
    load_obj,
    load_off,
    point_inside,
    project_to_inner_surface,
    save_obj,
    save_off,
    surface_sample_points,
    tet_volumes,
)


def unit_cube(center=(0.0, 0.0, 0.0), size=1.0):
    return _hull_mesh(box_points((size, size, size)) + np.asarray(center))


def single_tet():
    verts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
    tets = np.array([[0, 1, 2, 3]])
    return TetMesh(verts, tets, np.array([0]), np.array([3]))


class TestTetMesh:
    def test_rejects_inverted_tet(self):
        verts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0, 1.0, 0], [0, 0, -1.0]])
        with pytest.raises(MeshError):
            TetMesh(verts, np.array([[0, 1, 2, 3]]), np.array([0]), np.array([3]))

    def test_rejects_overlapping_sets(self):
        verts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
        with pytest.raises(MeshError):
            TetMesh(verts, np.array([[0, 1, 2, 3]]), np.array([0]), np.array([0, 3]))

    def test_rejects_bad_index(self):
        verts = np.eye(3)
        with pytest.raises(MeshError):
            TetMesh(verts, np.array([[0, 1, 2, 5]]), np.array([0]), np.array([1]))


class TestExtractSurface:
    def test_single_tet_surface(self):
        mesh = single_tet()
        surf = extract_surface(mesh)
        assert len(surf.triangles) == 4
        assert surf.watertight
        vol = enclosed_volume(surf.vertices, surf.triangles)
        assert vol == pytest.approx(1.0 / 6.0, rel=1e-12)

    def test_jaw_volume_identity(self, jaw):
        surf = jaw.mesh.surface()
        vol_s = enclosed_volume(surf.vertices, surf.triangles)
        vol_t = tet_volumes(jaw.mesh.vertices, jaw.mesh.tets).sum()
        assert abs(vol_s - vol_t) <= 1e-9 * vol_t

    def test_deformed_index_alignment(self, jaw):
        disp = np.zeros_like(jaw.mesh.vertices)
        disp[:, 0] = 1e-3 * np.arange(len(disp))
        state = DeformedState(disp)
        surf = extract_surface(jaw.mesh, state)
        k = int(jaw.candidate_ids[7])
        assert np.array_equal(surf.vertices[k], jaw.mesh.vertices[k] + disp[k])

    def test_mismatched_state_length(self, jaw):
        with pytest.raises(MeshError):
            extract_surface(jaw.mesh, DeformedState(np.zeros((10, 3))))


class TestPointInside:
    def test_cube_center(self):
        cube = unit_cube()
        assert point_inside(cube, np.array([0.0, 0.0, 0.0])) is True

    def test_cube_outside(self):
        cube = unit_cube()
        assert point_inside(cube, np.array([2.0, 0.0, 0.0])) is False

    def test_sphere_oracle(self, rng):
        # analytic oracle: containment in the icosphere agrees with the
        # radius sign away from the surface shell
        sphere = icosphere(3)
        assert len(sphere.triangles) == 1280
        pts = rng.normal(size=(1000, 3))
        r = np.linalg.norm(pts, axis=1)
        inside = point_inside(sphere, pts)
        clear = (r < 0.995) | (r > 1.005)
        assert np.all(inside[clear] == (r[clear] < 1.0))

    def test_orientation_flip_invariance(self, rng):
        sphere = icosphere(2)
        flipped = SurfaceMesh(sphere.vertices, sphere.triangles[:, [0, 2, 1]])
        pts = rng.normal(size=(200, 3)) * 0.8
        assert np.array_equal(point_inside(sphere, pts), point_inside(flipped, pts))

    def test_requires_watertight(self):
        open_mesh = SurfaceMesh(np.eye(3), np.array([[0, 1, 2]]))
        assert not open_mesh.watertight
        with pytest.raises(WatertightError):
            point_inside(open_mesh, np.zeros(3))


class TestIntersectApprox:
    def test_disjoint(self):
        a = unit_cube()
        b = unit_cube(center=(3.0, 0.0, 0.0))
        assert intersect_approx(a, b).is_empty

    def test_coincident_centroid(self):
        a = unit_cube()
        b = unit_cube()
        res = intersect_approx(a, b)
        assert not res.is_empty
        assert np.abs(res.centroid).max() < 1e-9

    def test_thin_overlap_centroid_in_box(self):
        # cube [-0.5,0.5]^3 against a slab pushed in so the analytic
        # overlap is x in [0.40, 0.50]
        cube = unit_cube()
        slab = _hull_mesh(box_points((1.0, 2.0, 2.0)) + np.array([0.9, 0.0, 0.0]))
        res = intersect_approx(cube, slab, density=4)
        assert not res.is_empty
        assert 0.40 - 1e-9 <= res.centroid[0] <= 0.50 + 1e-9
        assert abs(res.centroid[1]) <= 0.5
        assert abs(res.centroid[2]) <= 0.5

    def test_symmetry(self):
        a = unit_cube()
        b = unit_cube(center=(0.4, 0.2, 0.0))
        r1 = intersect_approx(a, b)
        r2 = intersect_approx(b, a)
        assert r1.sample_count == r2.sample_count
        assert np.abs(r1.centroid - r2.centroid).max() <= 1e-9

    def test_sample_count_scaling(self):
        a = unit_cube()
        n1 = len(surface_sample_points(a, 1))
        n3 = len(surface_sample_points(a, 3))
        assert n1 == 12 * 3
        assert n3 == 12 * 10


class TestProjectToInnerSurface:
    def test_idempotent(self, jaw):
        p = jaw.candidate_positions[5]
        q = project_to_inner_surface(jaw.mesh, p)
        assert np.linalg.norm(q - p) <= 1e-12

    def test_normal_offset(self, jaw):
        p = jaw.candidate_positions[5] + np.array([0.005, 0.0, 0.0])
        q = project_to_inner_surface(jaw.mesh, p)
        assert np.linalg.norm(q - jaw.candidate_positions[5]) <= 1e-12
        assert np.linalg.norm(p - q) == pytest.approx(0.005, rel=1e-9)

    def test_interior_point_brute_force(self, jaw, rng):
        # dense barycentric sampling as the independent closest-point oracle
        tris = jaw.mesh.inner_triangles()
        tv = jaw.mesh.vertices[tris]
        n = 40
        ij = np.array([(i, j) for i in range(n + 1) for j in range(n + 1 - i)])
        bary = np.column_stack([ij[:, 0], ij[:, 1], n - ij[:, 0] - ij[:, 1]]) / n
        dense = np.einsum("sb,tbx->tsx", bary, tv).reshape(-1, 3)
        max_edge = max(np.linalg.norm(tv[:, a] - tv[:, b], axis=1).max()
                       for a, b in ((0, 1), (1, 2), (2, 0)))
        for _ in range(10):
            p = jaw.mesh.vertices.mean(axis=0) + rng.normal(scale=0.01, size=3)
            q = project_to_inner_surface(jaw.mesh, p)
            d_impl = np.linalg.norm(p - q)
            d_oracle = np.linalg.norm(dense - p, axis=1).min()
            assert d_impl <= d_oracle + 1e-12
            assert d_oracle - d_impl <= 2.0 * max_edge / n

    def test_result_on_surface(self, jaw, rng):
        tris = jaw.mesh.inner_triangles()
        for _ in range(5):
            p = rng.normal(scale=0.02, size=3) + np.array([0.0, 0.0, 0.04])
            q = project_to_inner_surface(jaw.mesh, p)
            _, d2 = closest_point_on_triangles(q, jaw.mesh.vertices[tris])
            assert np.sqrt(d2.min()) <= 1e-12

    def test_empty_inner_surface(self):
        mesh = single_tet()
        bare = TetMesh(mesh.vertices, mesh.tets, np.array([0]), np.array([], dtype=int))
        with pytest.raises(MeshError):
            project_to_inner_surface(bare, np.zeros(3))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_closest_point_never_farther_than_vertices(seed):
    rng = np.random.default_rng(seed)
    tri = rng.normal(size=(1, 3, 3))
    p = rng.normal(size=3)
    q, d2 = closest_point_on_triangles(p, tri)
    d_verts = np.linalg.norm(tri[0] - p, axis=1).min()
    assert np.sqrt(d2[0]) <= d_verts + 1e-12


class TestDeformableSurface:
    def test_tracks_updates(self, jaw, rng):
        surf = DeformableSurface(jaw.mesh.surface())
        # half a band thickness behind the inner contact face
        probe = jaw.candidate_positions[7] - np.array(
            [0.5 * jaw.params.band_thickness, 0.0, 0.0])
        assert point_inside(surf, probe)
        shift = jaw.mesh.vertices + np.array([0.05, 0.0, 0.0])
        surf.update(shift)
        assert not point_inside(surf, probe)
        assert point_inside(surf, probe + np.array([0.05, 0.0, 0.0]))


class TestMeshIO:
    def test_off_roundtrip_with_tets(self, tmp_path, jaw):
        path = tmp_path / "jaw.off"
        surf = jaw.mesh.surface()
        save_off(path, jaw.mesh.vertices, surf.triangles, jaw.mesh.tets)
        v, t, tets = load_off(path)
        assert np.array_equal(v, jaw.mesh.vertices)
        assert np.array_equal(t, surf.triangles)
        assert np.array_equal(tets, jaw.mesh.tets)

    def test_obj_roundtrip(self, tmp_path):
        cube = unit_cube()
        path = tmp_path / "cube.obj"
        save_obj(path, cube.vertices, cube.triangles)
        v, t = load_obj(path)
        assert np.array_equal(v, cube.vertices)
        assert np.array_equal(t, cube.triangles)

    def test_watertight_check(self):
        cube = unit_cube()
        assert is_watertight(cube.triangles)
        assert not is_watertight(cube.triangles[:-1])


class TestObjectMeshes:
    @pytest.mark.parametrize("spec,vol", [
        (ShapeSpec.cylinder(0.015, 0.08), np.pi * 0.0075 ** 2 * 0.08),
        (ShapeSpec.cuboid((0.03, 0.08, 0.03)), 0.03 * 0.08 * 0.03),
    ])
    def test_watertight_and_volume(self, spec, vol):
        mesh = make_object_mesh(spec)
        assert mesh.watertight
        v = enclosed_volume(mesh.vertices, mesh.triangles)
        assert v == pytest.approx(vol, rel=0.05)

    def test_wedge_watertight(self):
        mesh = make_object_mesh(ShapeSpec.wedge())
        assert mesh.watertight
        assert enclosed_volume(mesh.vertices, mesh.triangles) > 0
