import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from voxmap.errors import ConfigurationError, PoseError
from voxmap.layer import position_to_indices
from voxmap.sensor import (
    BEHIND,
    OUTSIDE,
    VALID,
    CameraIntrinsics,
    LidarIntrinsics,
    Pose,
    _traverse,
    blocks_in_view,
    format_intrinsics,
    parse_intrinsics,
    project,
    sample_depth,
)

CAM = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
LIDAR = LidarIntrinsics(1024, 32, -math.pi, math.pi / 2 - math.pi / 8, 2 * math.pi, math.pi / 4)


def test_camera_examples():
    p = project([[0, 0, 2], [1, 0, 2], [0, 0, -1]], CAM)
    assert (p.u[0], p.v[0], p.status[0]) == (320.0, 240.0, VALID)
    assert (p.u[1], p.v[1]) == (570.0, 240.0)
    assert p.status[2] == BEHIND
    assert np.all(np.isfinite(p.u)) and np.all(np.isfinite(p.v))


def test_lidar_examples():
    p = project([[1, 0, 0], [0, 0, 1], [0, 0, 0]], LIDAR)
    assert p.u[0] == pytest.approx(512.0, abs=1e-9)
    assert p.v[0] == pytest.approx(16.0, abs=1e-9)
    assert p.status[0] == VALID
    assert p.status[1] == OUTSIDE
    assert p.status[2] == BEHIND


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.1, 5), st.floats(0.01, 100))
def test_camera_scale_invariance(x, y, z, lam):
    a = project([[x, y, z]], CAM)
    b = project([[lam * x, lam * y, lam * z]], CAM)
    assert a.u[0] == pytest.approx(b.u[0], rel=1e-9, abs=1e-9)
    assert a.v[0] == pytest.approx(b.v[0], rel=1e-9, abs=1e-9)


@given(st.floats(-math.pi, math.pi), st.integers(-3, 3))
def test_lidar_azimuth_periodic(theta, k):
    phi = math.pi / 2
    a = project([[math.cos(theta), math.sin(theta), 0.0]], LIDAR)
    t2 = theta + 2 * math.pi * k
    b = project([[math.cos(t2), math.sin(t2), 0.0]], LIDAR)
    du = abs(a.u[0] - b.u[0])
    assert min(du, 1024 - du) < 1e-6
    assert a.v[0] == pytest.approx((phi - LIDAR.phi_start) * LIDAR.beta)


def test_lidar_v_increases_with_polar_angle():
    phis = np.linspace(LIDAR.phi_start, LIDAR.phi_start + LIDAR.elevation_fov - 1e-3, 50)
    pts = np.stack([np.sin(phis), np.zeros_like(phis), np.cos(phis)], axis=1)
    v = project(pts, LIDAR).v
    assert np.all(np.diff(v) > 0)


@pytest.mark.parametrize("intr", [CAM, LIDAR], ids=["camera", "lidar"])
def test_rays_reproject_to_own_pixel(intr):
    rays = intr.ray_directions().reshape(-1, 3)
    depth = np.linspace(0.5, 9.0, rays.shape[0])
    pts = rays / np.linalg.norm(rays, axis=1, keepdims=True) * depth[:, None]
    p = project(pts, intr)
    vv, uu = np.meshgrid(np.arange(intr.shape[0]), np.arange(intr.shape[1]), indexing="ij")
    du = np.abs(p.u - uu.reshape(-1))
    du = np.minimum(du, intr.shape[1] - du) if intr is LIDAR else du
    assert du.max() < 0.5 and np.abs(p.v - vv.reshape(-1)).max() < 0.5


def test_sample_depth_examples():
    img = np.full((4, 4), 2.0, np.float32)
    assert sample_depth(img, 1.3, 2.7, "linear")[0] == pytest.approx(2.0)
    img = np.array([[1.0, 1.0], [5.0, 1.0]], np.float32)
    assert sample_depth(img, 0.5, 0.5, "linear", max_gap=0.5)[0] == 0.0
    img = np.array([[1.0, 1.1], [1.0, 1.1]], np.float32)
    assert sample_depth(img, 0.5, 0.5, "linear")[0] == pytest.approx(1.05, abs=1e-6)
    assert sample_depth(img, 0.4, 0.6, "nearest")[0] == pytest.approx(1.0)
    assert sample_depth(img, -1.0, 0.0, "nearest")[0] == 0.0
    assert sample_depth(img, 5.0, 0.0, "linear")[0] == 0.0


def test_sample_depth_lidar_wraps_azimuth():
    img = np.array([[1.0, 2.0, 3.0, 1.1]], np.float32).repeat(2, 0)
    assert sample_depth(img, 3.5, 0.0, "linear", wrap=True)[0] == pytest.approx(1.05, abs=1e-6)
    assert sample_depth(img, 4.2, 0.0, "nearest", wrap=True)[0] == pytest.approx(1.0)


@given(st.lists(st.floats(0.1, 10.0), min_size=4, max_size=4), st.floats(0, 1), st.floats(0, 1))
def test_linear_sample_within_neighbour_range(vals, fu, fv):
    img = np.array(vals, np.float32).reshape(2, 2)
    d = sample_depth(img, fu, fv, "linear", max_gap=100.0)[0]
    assert img.min() - 1e-5 <= d <= img.max() + 1e-5


def _dense_traversal(o, e, bs, n=200000):
    t = np.linspace(0.0, 1.0, n)[:, None]
    pts = o[None] + t * (e - o)[None]
    return {tuple(r) for r in np.floor(pts / bs).astype(np.int64)}


@pytest.mark.parametrize("seed", range(5))
def test_traverse_matches_dense_sampling(seed):
    r = np.random.default_rng(seed)
    o = r.uniform(-1, 1, 3)
    e = o + r.uniform(-3, 3, 3)
    out = np.empty((1000, 3), np.int64)
    n = _traverse(o, e[None], 0.4, out)
    got = {tuple(x) for x in out[:n]}
    assert got == _dense_traversal(o, e, 0.4)


def test_blocks_in_view_single_pixel_contains_ray_blocks():
    intr = CameraIntrinsics(50.0, 50.0, 16.0, 16.0, 33, 33, 0.05, 10.0)
    depth = np.zeros((33, 33), np.float32)
    depth[16, 16] = 1.0
    trunc = 0.2
    got = {tuple(x) for x in blocks_in_view(Pose.identity(), intr, depth, 0.4, trunc)}
    ray = _dense_traversal(np.zeros(3), np.array([0.0, 0.0, 1.0 + trunc]), 0.4)
    assert ray <= got


def test_blocks_in_view_empty_image():
    out = blocks_in_view(Pose.identity(), CAM, np.zeros((480, 640), np.float32), 0.4, 0.2)
    assert out.shape == (0, 3)


@pytest.mark.parametrize("intr, seed", [
    (CameraIntrinsics(40.0, 40.0, 31.5, 23.5, 64, 48, 0.05, 3.0), 0),
    (CameraIntrinsics(40.0, 40.0, 31.5, 23.5, 64, 48, 0.05, 3.0), 1),
    (LidarIntrinsics(96, 8, -math.pi, math.pi / 2 - 0.3, 2 * math.pi, 0.6, 0.1, 2.5), 2),
])
def test_blocks_in_view_superset_of_projected_voxels(intr, seed):
    r = np.random.default_rng(seed)
    depth = r.uniform(0.5, 2.2, intr.shape).astype(np.float32)
    depth[r.random(intr.shape) < 0.2] = 0.0
    yaw = r.uniform(-1, 1)
    R = np.array([[math.cos(yaw), -math.sin(yaw), 0], [math.sin(yaw), math.cos(yaw), 0], [0, 0, 1]])
    pose = Pose(R, r.uniform(-0.5, 0.5, 3))
    vs, trunc = 0.05, 0.2
    got = {tuple(x) for x in blocks_in_view(pose, intr, depth, 8 * vs, trunc)}
    # brute force: every voxel center within reach, projected and compared with its depth sample
    g = np.arange(-2.8, 2.8, vs) + vs / 2
    for zs in np.array_split(np.arange(-2.8, 2.8, vs) + vs / 2, 8):
        X, Y, Z = np.meshgrid(g, g, zs, indexing="ij")
        pts = np.stack([X, Y, Z], -1).reshape(-1, 3) + np.floor(pose.translation / vs) * vs
        local = (pts - pose.translation) @ pose.rotation
        p = project(local, intr)
        ok = p.valid
        d = sample_depth(depth, p.u[ok], p.v[ok], "nearest", wrap=isinstance(intr, LidarIntrinsics))
        hit = (d > 0) & (p.depth[ok] <= d + trunc)
        blocks, _ = position_to_indices(pts[ok][hit], vs)
        need = {tuple(b) for b in np.unique(blocks, axis=0)}
        assert need <= got


def test_pose_validation_and_inverse(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    pose = Pose.from_quaternion(rng.normal(size=3), q).validate()
    ident = pose.inverse().compose(pose)
    np.testing.assert_allclose(ident.matrix, np.eye(4), atol=1e-9)
    np.testing.assert_allclose(np.abs(pose.quaternion), np.abs(q), atol=1e-9)
    with pytest.raises(PoseError):
        Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3)).validate()
    with pytest.raises(PoseError):
        Pose(np.eye(3) * 1.1, np.zeros(3)).validate()


def test_look_at_points_z_forward():
    p = Pose.look_at([0, 0, 1], [2, 0, 1])
    np.testing.assert_allclose(p.rotation[:, 2], [1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(p.rotation[:, 1], [0, 0, -1], atol=1e-12)
    p.validate()


@pytest.mark.parametrize("intr", [CAM, LIDAR], ids=["camera", "lidar"])
def test_intrinsics_text_round_trip(intr):
    assert parse_intrinsics(format_intrinsics(intr)) == intr


def test_intrinsics_errors():
    with pytest.raises(ConfigurationError):
        parse_intrinsics("kind=camera\nfu=1\n")
    with pytest.raises(ConfigurationError):
        parse_intrinsics("kind=sonar\n")
    with pytest.raises(ConfigurationError):
        CameraIntrinsics(-1.0, 1.0, 0, 0, 10, 10)
    with pytest.raises(ConfigurationError):
        blocks_in_view(Pose.identity(), CAM, np.zeros((10, 10)), 0.4, 0.2)
