import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sympose.errors import GeometryError
from sympose.geometry import (
    CameraIntrinsics,
    ColoredPointCloud,
    RigidTransform,
    TriangleMesh,
    apply_transform,
    axis_angle_matrix,
    compose,
    mesh_diagonal,
    nearest_rotation,
    orthonormalize,
    random_rotation,
    rotation_about_axis,
    sample_mesh_surface,
    voxel_downsample,
)


def rand_pose(rng):
    q = rng.normal(size=3)
    return RigidTransform(axis_angle_matrix(q, rng.uniform(-math.pi, math.pi)), rng.normal(size=3))


def test_transform_validation():
    with pytest.raises(GeometryError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(GeometryError):
        RigidTransform(np.eye(3) * 1.001, np.zeros(3))
    with pytest.raises(GeometryError):
        RigidTransform(np.eye(3), [0.0, np.nan, 0.0])


def test_apply_transform_examples():
    cloud = ColoredPointCloud(np.random.default_rng(0).normal(size=(20, 3)), np.full((20, 3), 0.5))
    out = apply_transform(RigidTransform.identity(), cloud)
    np.testing.assert_array_equal(out.positions, cloud.positions)
    np.testing.assert_array_equal(out.colors, cloud.colors)
    t = RigidTransform(np.eye(3), [0, 0, 0.005])
    np.testing.assert_allclose(t.apply([[0.0, 0.0, 0.0]]), [[0, 0, 0.005]])
    half = RigidTransform(axis_angle_matrix([0, 0, 1], math.pi), np.zeros(3))
    np.testing.assert_allclose(half.apply([[1.0, 0, 0]]), [[-1.0, 0, 0]], atol=1e-15)


def test_compose_examples():
    rng = np.random.default_rng(1)
    T = rand_pose(rng)
    assert compose(T, RigidTransform.identity()).allclose(T, 0.0)
    assert compose(T, T.inverse()).allclose(RigidTransform.identity(), 1e-9)
    q = RigidTransform(axis_angle_matrix([0, 0, 1], math.pi / 2), np.zeros(3))
    h = RigidTransform(axis_angle_matrix([0, 0, 1], math.pi), np.zeros(3))
    assert compose(q, q).allclose(h, 1e-12)


def test_compose_order_and_associativity_1000():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        a, b, c = rand_pose(rng), rand_pose(rng), rand_pose(rng)
        v = rng.normal(size=(4, 3))
        np.testing.assert_allclose(compose(a, b).apply(v), a.apply(b.apply(v)), atol=1e-9)
        assert compose(compose(a, b), c).allclose(compose(a, compose(b, c)), 1e-9)


def test_rotation_about_offset_axis():
    T = rotation_about_axis([0, 0, 1], [1, 0, 0], math.pi)
    np.testing.assert_allclose(T.translation, [2, 0, 0], atol=1e-12)
    # a point on the axis is fixed
    np.testing.assert_allclose(T.apply([[1.0, 0, 5.0]]), [[1.0, 0, 5.0]], atol=1e-12)


def test_orthonormalize_tolerance():
    R = axis_angle_matrix([1, 2, 3], 0.7)
    drift = R + 1e-5 * np.random.default_rng(3).normal(size=(3, 3))
    fixed = orthonormalize(drift)
    # polar factor oracle: R = U V^T from the SVD of the drifted matrix
    u, _, vt = np.linalg.svd(drift)
    np.testing.assert_allclose(fixed, u @ vt, atol=1e-12)
    with pytest.raises(GeometryError):
        orthonormalize(R + 1e-2)
    assert np.linalg.det(nearest_rotation(np.diag([1.0, 1.0, -1.0]))) > 0


def _tri_mesh(v, f, c=None):
    return TriangleMesh(np.asarray(v, float), np.asarray(f), c)


def test_mesh_validation():
    with pytest.raises(GeometryError):
        _tri_mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 3]])
    with pytest.raises(GeometryError):
        _tri_mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 1]])


def test_sample_surface_centroid_and_determinism():
    tri = _tri_mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    a = sample_mesh_surface(tri, 10000, seed=5)
    b = sample_mesh_surface(tri, 10000, seed=5)
    np.testing.assert_array_equal(a.positions, b.positions)
    # uniform density on a triangle has its mean at the vertex centroid
    np.testing.assert_allclose(a.positions.mean(axis=0), [1 / 3, 1 / 3, 0], atol=0.02)
    p = a.positions
    assert np.all(p[:, 0] >= -1e-12) and np.all(p[:, 1] >= -1e-12) and np.all(p[:, 0] + p[:, 1] <= 1 + 1e-12)
    assert np.all(p[:, 2] == 0)


def test_sample_surface_area_weighting():
    # face 0 has area 1, face 1 has area 3 (disjoint, both in z=0 plane)
    v = [[0, 0, 0], [2, 0, 0], [0, 1, 0], [10, 0, 0], [13, 0, 0], [10, 2, 0]]
    mesh = _tri_mesh(v, [[0, 1, 2], [3, 4, 5]])
    np.testing.assert_allclose(mesh.face_areas(), [1.0, 3.0])
    pts = sample_mesh_surface(mesh, 10000, seed=0).positions
    frac = np.mean(pts[:, 0] >= 10)
    assert abs(frac - 0.75) <= 0.02


def test_sample_surface_on_faces_and_colors():
    rng = np.random.default_rng(4)
    v = rng.normal(size=(4, 3))
    c = rng.uniform(size=(4, 3))
    mesh = _tri_mesh(v, [[0, 1, 2], [0, 2, 3]], c)
    cloud = sample_mesh_surface(mesh, 500, seed=1)
    for p in cloud.positions:
        d = min(abs(np.dot(p - v[f[0]], np.cross(v[f[1]] - v[f[0]], v[f[2]] - v[f[0]]) / np.linalg.norm(np.cross(v[f[1]] - v[f[0]], v[f[2]] - v[f[0]])))) for f in mesh.faces)
        assert d < 1e-9
    assert cloud.colors.min() >= 0 and cloud.colors.max() <= 1
    assert cloud.colors.min() >= c.min() - 1e-12 and cloud.colors.max() <= c.max() + 1e-12


def test_sample_surface_degenerate():
    mesh = _tri_mesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])
    with pytest.raises(GeometryError, match="degenerate mesh"):
        sample_mesh_surface(mesh, 10)


def test_voxel_examples():
    c = voxel_downsample(ColoredPointCloud([[0.0001, 0.0001, 0.0001], [0.0006, 0.0001, 0.0001]]), 0.002)
    assert len(c) == 1
    np.testing.assert_allclose(c.positions[0], [0.00035, 0.0001, 0.0001], atol=1e-15)
    np.testing.assert_array_equal(c.colors, 0.0)
    c = voxel_downsample(ColoredPointCloud([[0.0, 0, 0], [1.0, 0, 0]]), 0.002)
    assert len(c) == 2
    with pytest.raises(ValueError):
        voxel_downsample(c, 0.0)


def test_voxel_order_and_color_mean():
    pts = [[0.0105, 0, 0], [-0.001, 0, 0], [0.0101, 0, 0]]
    cols = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]
    out = voxel_downsample(ColoredPointCloud(pts, cols), 0.002)
    # ascending voxel key: key -1 first, then key 5
    np.testing.assert_allclose(out.positions[:, 0], [-0.001, 0.0103])
    np.testing.assert_allclose(out.colors[1], [0.5, 0, 0.5])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_voxel_identity_when_fine(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, size=(30, 3))
    diff = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    dmin = diff[np.triu_indices(30, 1)].min()
    out = voxel_downsample(ColoredPointCloud(pts), dmin / 2)
    assert len(out) == 30
    a = np.array(sorted(map(tuple, pts)))
    b = np.array(sorted(map(tuple, out.positions)))
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_random_rotation_modes():
    for s in range(20):
        R = random_rotation("z_axis", s).rotation
        np.testing.assert_allclose(R @ [0, 0, 1], [0, 0, 1], atol=1e-12)
        for mode in ("z_axis", "any_axis"):
            T = random_rotation(mode, s)
            assert np.abs(T.rotation.T @ T.rotation - np.eye(3)).max() <= 1e-9
            np.testing.assert_array_equal(T.translation, 0)
    assert random_rotation("any_axis", 3).allclose(random_rotation("any_axis", 3), 0.0)
    with pytest.raises(ValueError):
        random_rotation("bogus")


def test_random_rotation_z_uniform():
    from scipy import stats

    angles = np.array([math.atan2(R[1, 0], R[0, 0]) for R in (random_rotation("z_axis", s).rotation for s in range(10000))])
    counts, _ = np.histogram(angles, bins=20, range=(-math.pi, math.pi))
    assert stats.chisquare(counts).pvalue > 0.01


def test_mesh_diagonal_examples():
    cube = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)
    assert mesh_diagonal(TriangleMesh(cube, np.zeros((0, 3), int))) == pytest.approx(math.sqrt(3))
    assert mesh_diagonal(TriangleMesh([[1.0, 2, 3]], np.zeros((0, 3), int))) == 0.0
    assert mesh_diagonal(TriangleMesh([[0.0, 0, 0], [3, 4, 0]], np.zeros((0, 3), int))) == 5.0


def test_camera_projection_roundtrip():
    cam = CameraIntrinsics(500, 500, 320, 240, 640, 480)
    np.testing.assert_array_equal(np.stack(cam.pixel_of([[0.0, 0, 1]])).ravel(), [320, 240])
    rng = np.random.default_rng(0)
    u, v, z = rng.uniform(0, 639, 50), rng.uniform(0, 479, 50), rng.uniform(0.2, 3, 50)
    uv = cam.project(cam.backproject(u, v, z))
    np.testing.assert_allclose(uv, np.stack([u, v], axis=1), atol=1e-9)
    with pytest.raises(GeometryError):
        CameraIntrinsics(500, 500, 640, 240, 640, 480)
