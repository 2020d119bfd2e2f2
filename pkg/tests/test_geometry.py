import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from semnbv.geometry import (
    CameraModel,
    Pose,
    VoxelIndex,
    camera_basis,
    frustum_contains,
    generate_rays,
    optical_axis,
    voxel_center,
    voxel_of,
    wrap_angle,
)

angles = st.floats(min_value=-50.0, max_value=50.0, allow_nan=False)


@given(angles)
def test_wrap_angle_range(a):
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi


@given(angles, st.integers(min_value=-5, max_value=5))
def test_wrap_angle_periodic(a, k):
    assert wrap_angle(a + 2 * math.pi * k) == pytest.approx(wrap_angle(a), abs=1e-9)


def test_wrap_angle_boundaries():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    # -pi maps to the +pi end of the half-open interval
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    assert wrap_angle(0.0) == 0.0


def test_pose_normalizes_yaw_and_freezes_position():
    p = Pose(position=np.array([1.0, 2.0, 3.0]), yaw=3 * math.pi)
    assert p.yaw == pytest.approx(math.pi)
    with pytest.raises(ValueError):
        p.position[0] = 9.0


def test_voxel_of_examples():
    vs = 0.2
    assert voxel_of(np.array([0.05, 0.05, 0.05]), vs) == VoxelIndex(0, 0, 0)
    assert voxel_of(np.array([-0.05, -0.05, -0.05]), vs) == VoxelIndex(-1, -1, -1)
    # boundary points belong to the voxel they open
    assert voxel_of(np.array([0.2, 0.0, -0.2]), vs) == VoxelIndex(1, 0, -1)


@given(
    st.integers(min_value=-1000, max_value=1000),
    st.integers(min_value=-1000, max_value=1000),
    st.integers(min_value=-1000, max_value=1000),
)
def test_voxel_center_roundtrip(i, j, k):
    vs = 0.2
    c = voxel_center(VoxelIndex(i, j, k), vs)
    assert voxel_of(c, vs) == VoxelIndex(i, j, k)


def test_optical_axis_cardinal_directions():
    p0 = Pose(position=np.zeros(3), yaw=0.0)
    np.testing.assert_allclose(optical_axis(p0), [1.0, 0.0, 0.0], atol=1e-12)
    p1 = Pose(position=np.zeros(3), yaw=math.pi / 2)
    np.testing.assert_allclose(optical_axis(p1), [0.0, 1.0, 0.0], atol=1e-12)
    p2 = Pose(position=np.zeros(3), yaw=math.pi)
    np.testing.assert_allclose(optical_axis(p2), [-1.0, 0.0, 0.0], atol=1e-12)


@given(angles, st.floats(min_value=-1.4, max_value=1.4))
def test_camera_basis_orthonormal_right_handed(yaw, pitch):
    pose = Pose(position=np.zeros(3), yaw=yaw, pitch=pitch)
    f, r, u = camera_basis(pose)
    for v in (f, r, u):
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-9)
    assert abs(f @ r) < 1e-9
    assert abs(f @ u) < 1e-9
    assert abs(r @ u) < 1e-9
    np.testing.assert_allclose(np.cross(r, f), u, atol=1e-9)
    np.testing.assert_allclose(f, optical_axis(pose), atol=1e-12)


def test_camera_basis_level_pose_up_is_world_z():
    pose = Pose(position=np.zeros(3), yaw=0.7)
    _, _, u = camera_basis(pose)
    np.testing.assert_allclose(u, [0.0, 0.0, 1.0], atol=1e-12)


@pytest.fixture
def cam():
    return CameraModel(
        horizontal_fov=math.radians(90.0),
        vertical_fov=math.radians(60.0),
        width=64,
        height=48,
        max_range=5.0,
    )


def test_frustum_contains_basic(cam):
    pose = Pose(position=np.zeros(3), yaw=0.0)
    assert frustum_contains(cam, pose, np.array([1.0, 0.0, 0.0]))
    assert not frustum_contains(cam, pose, np.array([-1.0, 0.0, 0.0]))
    assert not frustum_contains(cam, pose, np.array([6.0, 0.0, 0.0]))
    # range boundary is inside
    assert frustum_contains(cam, pose, np.array([5.0, 0.0, 0.0]))
    # the sensor origin itself is not visible
    assert not frustum_contains(cam, pose, np.zeros(3))


def test_frustum_lateral_boundary(cam):
    pose = Pose(position=np.zeros(3), yaw=0.0)
    # 90 deg horizontal fov: the face sits at bearing 45 deg
    assert frustum_contains(cam, pose, np.array([1.0, 0.999, 0.0]))
    assert not frustum_contains(cam, pose, np.array([1.0, 1.001, 0.0]))
    # 60 deg vertical: the face sits at elevation 30 deg
    z = math.tan(math.radians(30.0))
    assert frustum_contains(cam, pose, np.array([1.0, 0.0, z - 1e-3]))
    assert not frustum_contains(cam, pose, np.array([1.0, 0.0, z + 1e-3]))


@given(
    angles,
    st.floats(min_value=-3.0, max_value=3.0),
    st.floats(min_value=-3.0, max_value=3.0),
    st.floats(min_value=-3.0, max_value=3.0),
    angles,
)
def test_frustum_invariant_under_rigid_transform(yaw, px, py, pz, rot):
    cam = CameraModel(
        horizontal_fov=math.radians(80.0),
        vertical_fov=math.radians(50.0),
        width=8,
        height=6,
        max_range=4.0,
    )
    pose = Pose(position=np.array([0.4, -0.2, 1.0]), yaw=yaw)
    point = np.array([px, py, pz])
    before = frustum_contains(cam, pose, point)
    c, s = math.cos(rot), math.sin(rot)
    R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    shift = np.array([1.3, -0.7, 0.25])
    moved_pose = Pose(position=R @ pose.position + shift, yaw=pose.yaw + rot)
    moved_point = R @ point + shift
    # stay away from decision boundaries where rounding may flip the result
    f, r, u = camera_basis(pose)
    d = point - pose.position
    xf = d @ f
    margins = [
        abs(np.linalg.norm(d) - cam.max_range),
        abs(abs(d @ r) - xf * math.tan(cam.horizontal_fov / 2)),
        abs(abs(d @ u) - xf * math.tan(cam.vertical_fov / 2)),
        abs(xf),
    ]
    if min(margins) > 1e-6:
        assert frustum_contains(cam, moved_pose, moved_point) == before


def test_frustum_respects_yaw(cam):
    pose = Pose(position=np.zeros(3), yaw=math.pi / 2)
    assert frustum_contains(cam, pose, np.array([0.0, 1.0, 0.0]))
    assert not frustum_contains(cam, pose, np.array([1.0, 0.0, 0.0]))


def test_generate_rays_count_and_norm(cam):
    pose = Pose(position=np.array([1.0, -2.0, 0.5]), yaw=0.3)
    rays = generate_rays(cam, pose, step=1)
    assert rays.shape == (48 * 64, 3)
    np.testing.assert_allclose(np.linalg.norm(rays, axis=1), 1.0, atol=1e-9)
    sub = generate_rays(cam, pose, step=4)
    assert sub.shape == (12 * 16, 3)


def test_generate_rays_subsample_count_rounds_up(cam):
    pose = Pose(position=np.zeros(3), yaw=0.0)
    rays = generate_rays(cam, pose, step=5)
    assert rays.shape == (math.ceil(48 / 5) * math.ceil(64 / 5), 3)


def test_generate_rays_center_pixel_matches_axis():
    cam = CameraModel(
        horizontal_fov=math.radians(90.0),
        vertical_fov=math.radians(60.0),
        width=3,
        height=3,
        max_range=5.0,
    )
    pose = Pose(position=np.zeros(3), yaw=1.1)
    rays = generate_rays(cam, pose, step=1).reshape(3, 3, 3)
    np.testing.assert_allclose(rays[1, 1], optical_axis(pose), atol=1e-12)


def test_generate_rays_pixel_tangents():
    # ray through a pixel center must reproduce the pinhole tangents exactly
    cam = CameraModel(
        horizontal_fov=math.radians(90.0),
        vertical_fov=math.radians(60.0),
        width=4,
        height=4,
        max_range=5.0,
    )
    pose = Pose(position=np.zeros(3), yaw=-0.4)
    f, r, u = camera_basis(pose)
    rays = generate_rays(cam, pose, step=1).reshape(4, 4, 3)
    tan_h = math.tan(cam.horizontal_fov / 2)
    tan_v = math.tan(cam.vertical_fov / 2)
    for v in range(4):
        for h in range(4):
            d = rays[v, h]
            x = (2 * (h + 0.5) / 4 - 1) * tan_h
            y = (1 - 2 * (v + 0.5) / 4) * tan_v
            assert d @ r / (d @ f) == pytest.approx(x, abs=1e-12)
            assert d @ u / (d @ f) == pytest.approx(y, abs=1e-12)


def test_generate_rays_all_inside_frustum(cam):
    pose = Pose(position=np.zeros(3), yaw=2.0)
    rays = generate_rays(cam, pose, step=3)
    for d in rays:
        assert frustum_contains(cam, pose, pose.position + d * 1.0)


def test_camera_model_validation():
    with pytest.raises(ValueError):
        CameraModel(horizontal_fov=0.0, vertical_fov=1.0, width=4, height=4, max_range=5.0)
    with pytest.raises(ValueError):
        CameraModel(horizontal_fov=1.0, vertical_fov=math.pi, width=4, height=4, max_range=5.0)
    with pytest.raises(ValueError):
        CameraModel(horizontal_fov=1.0, vertical_fov=1.0, width=0, height=4, max_range=5.0)
    with pytest.raises(ValueError):
        CameraModel(horizontal_fov=1.0, vertical_fov=1.0, width=4, height=4, max_range=-1.0)
