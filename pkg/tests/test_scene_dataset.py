import numpy as np
import pytest
from PIL import Image

from voxmap.dataset import (
    Dataset,
    canonical_pose,
    depth_to_meters,
    depth_to_millimeters,
    load_dataset,
    normalize_quaternion,
    parse_poses,
    synthesize,
    write_dataset,
)
from voxmap.errors import (
    DatasetError,
    DimensionMismatchError,
    MissingFileError,
    QuaternionError,
    TimestampOrderError,
)
from voxmap.mapper import Mapper, MapperConfig
from voxmap.oracle import surface_error
from voxmap.scene import SCENES, Box, Plane, Sphere, SyntheticScene, default_intrinsics, named_scene, trajectory
from voxmap.sensor import CameraIntrinsics, LidarIntrinsics, Pose


def small_camera(w=64, h=48):
    return CameraIntrinsics(fu=50.0, fv=50.0, cu=w / 2, cv=h / 2, width=w, height=h, min_depth=0.05, max_depth=10.0)


def test_head_on_plane_center_pixel():
    scene = SyntheticScene([Plane((0, 0, 2.0), (0, 0, -1.0))])
    depth = scene.render(Pose.identity(), small_camera())
    assert depth[24, 32] == pytest.approx(2.0, abs=1e-3)


def test_all_rays_miss():
    scene = SyntheticScene([Sphere((0, 0, -5.0), 0.5)])
    depth = scene.render(Pose.identity(), small_camera())
    assert (depth == 0).all()


def test_sphere_depth_matches_closed_form(rng):
    c, r = np.array([0.1, -0.2, 3.0]), 0.8
    scene = SyntheticScene([Sphere(tuple(c), r)])
    cam = CameraIntrinsics(fu=400.0, fv=400.0, cu=100.0, cv=75.0, width=200, height=150, min_depth=0.05,
                           max_depth=10.0)
    pose = Pose.look_at((0.3, 0.1, -0.2), (0.1, -0.2, 3.0))
    depth = scene.render(pose, cam)
    us, vs = rng.integers(0, 200, 1000), rng.integers(0, 150, 1000)
    R, t = pose.rotation, pose.translation
    checked = 0
    for u, v in zip(us, vs):
        ray_c = np.array([(u - cam.cu) / cam.fu, (v - cam.cv) / cam.fv, 1.0])
        d = R @ ray_c
        oc = t - c
        b = d @ oc
        a = d @ d
        disc = b * b - a * (oc @ oc - r * r)
        if disc < 0:
            assert depth[v, u] == 0
            continue
        s = (-b - np.sqrt(disc)) / a  # ray parameter equals camera-frame depth since ray_c has z = 1
        assert depth[v, u] == pytest.approx(s, abs=1e-3)
        checked += 1
    assert checked > 500


def test_lidar_render_hits_room_walls():
    scene = named_scene("room")
    lidar = default_intrinsics("lidar", 256, 16)
    depth = scene.render(trajectory("room", 1, "lidar")[0], lidar)
    assert depth.shape == (16, 256)
    assert (depth > 0).mean() > 0.9


def test_scene_sdf_is_1_lipschitz(rng):
    for name in SCENES:
        scene = named_scene(name)
        a = rng.uniform(-4, 4, (2000, 3))
        b = a + rng.normal(0, 0.3, a.shape)
        lhs = np.abs(scene.sdf(a) - scene.sdf(b))
        assert (lhs <= np.linalg.norm(a - b, axis=1) + 1e-9).all()


def test_scene_json_round_trip(tmp_path):
    scene = SyntheticScene([Sphere((1, 2, 3), 0.5), Box((0, 0, 0), (1, 1, 1), hollow=True, thickness=0.1),
                            Plane((0, 0, 0), (0, 0, 1))], "mixed")
    path = tmp_path / "s.json"
    path.write_text(scene.to_json())
    back = SyntheticScene.load(path)
    pts = np.random.default_rng(0).uniform(-2, 2, (500, 3))
    np.testing.assert_array_equal(back.sdf(pts), scene.sdf(pts))
    assert back.name == "mixed"


def test_depth_units():
    mm = np.array([[2000, 0, 1]], np.uint16)
    m = depth_to_meters(mm)
    assert m[0, 0] == np.float32(2.0) and m[0, 1] == 0 and m[0, 2] == np.float32(0.001)
    np.testing.assert_array_equal(depth_to_millimeters(np.array([2.0, np.nan, -1.0, 70.0, 0.0])),
                                  [2000, 0, 0, 0, 0])


def test_quaternion_normalization():
    q = normalize_quaternion([0, 0, 0, 1.0004])
    assert np.array_equal(q / np.linalg.norm(q), q)
    with pytest.raises(QuaternionError):
        normalize_quaternion([0, 0, 0, 1.01])
    pose, q = canonical_pose(Pose.look_at((1, 2, 3), (0, 0, 0)))
    _, again = canonical_pose(pose)
    np.testing.assert_array_equal(q, again)


def test_pose_file_errors():
    with pytest.raises(TimestampOrderError):
        parse_poses("0 0 0 0 0 0 0 1\n0 0 0 0 0 0 0 1\n")
    with pytest.raises(DatasetError):
        parse_poses("0 0 0 0 0 0 1\n")
    with pytest.raises(DatasetError):
        parse_poses("0 a 0 0 0 0 0 1\n")
    ts, poses, _ = parse_poses("# header\n0.5 1 2 3 0 0 0 1\n\n")
    assert ts.tolist() == [0.5] and np.allclose(poses[0].translation, [1, 2, 3])


@pytest.fixture(scope="module")
def tiny_dataset():
    return synthesize("sphere_in_box", 3, "camera", 80, 60, with_color=True)


def test_dataset_round_trip_is_bit_exact(tmp_path, tiny_dataset):
    write_dataset(tmp_path / "ds", tiny_dataset)
    back = load_dataset(tmp_path / "ds")
    assert len(back) == 3
    np.testing.assert_array_equal(back.timestamps, tiny_dataset.timestamps)
    for a, b in zip(tiny_dataset, back):
        np.testing.assert_array_equal(a.depth, b.depth)
        np.testing.assert_array_equal(a.color, b.color)
        np.testing.assert_array_equal(a.pose.matrix, b.pose.matrix)
    assert back.intrinsics == tiny_dataset.intrinsics
    pts = np.random.default_rng(1).uniform(-2, 2, (200, 3))
    np.testing.assert_array_equal(back.scene.sdf(pts), tiny_dataset.scene.sdf(pts))


def test_lidar_dataset_round_trip(tmp_path):
    ds = synthesize("corridor", 2, "lidar", 128, 8)
    assert isinstance(ds.intrinsics, LidarIntrinsics)
    write_dataset(tmp_path / "l", ds)
    back = load_dataset(tmp_path / "l")
    for a, b in zip(ds, back):
        np.testing.assert_array_equal(a.depth, b.depth)
        np.testing.assert_array_equal(a.pose.matrix, b.pose.matrix)


def test_dataset_errors_are_distinct(tmp_path, tiny_dataset):
    root = write_dataset(tmp_path / "ds", tiny_dataset)
    with pytest.raises(MissingFileError):
        load_dataset(tmp_path / "nope")
    (root / "depth" / "000001.png").unlink()
    with pytest.raises(MissingFileError):
        load_dataset(root)
    Image.fromarray(np.zeros((10, 10), np.uint16)).save(root / "depth" / "000001.png")
    with pytest.raises(DimensionMismatchError):
        load_dataset(root)
    Image.fromarray(tiny_dataset.depth_millimeters(1)).save(root / "depth" / "000001.png")
    lines = (root / "poses.txt").read_text().splitlines()
    lines[2] = "0.0 " + lines[2].split(" ", 1)[1]
    (root / "poses.txt").write_text("\n".join(lines) + "\n")
    with pytest.raises(TimestampOrderError):
        load_dataset(root)
    with pytest.raises(DatasetError):
        Dataset(tiny_dataset.intrinsics, [0.0], [], [])


@pytest.mark.parametrize("name", sorted(SCENES))
def test_rendered_scene_meshes_within_half_voxel(name):
    vs = 0.05
    ds = synthesize(name, 12, "camera", 160, 120)
    mapper = Mapper(MapperConfig(voxel_size=vs)).run(ds)
    assert surface_error(mapper.mesh, ds.scene.sdf).rms_abs <= vs / 2
