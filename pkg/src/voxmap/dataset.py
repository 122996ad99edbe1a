"""On-disk datasets: intrinsics, a pose list and 16-bit depth images.

Layout of a dataset directory::

    intrinsics.txt        key=value sensor description
    poses.txt             one line per frame: t tx ty tz qx qy qz qw
    depth/000000.png      16-bit grayscale, millimeters, 0 = invalid
    color/000000.png      optional 8-bit RGB
    scene.json            optional analytic scene (synthetic datasets)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    DatasetError,
    DimensionMismatchError,
    MissingFileError,
    QuaternionError,
    TimestampOrderError,
)
from .scene import SyntheticScene, default_intrinsics, named_scene, trajectory
from .sensor import Pose, format_intrinsics, load_intrinsics, matrix_to_quaternion

QUATERNION_TOLERANCE = 1e-3
DEPTH_SCALE = 1000.0
MAX_DEPTH_MM = 65535


@dataclass
class Frame:
    index: int
    timestamp: float
    pose: Pose
    depth: np.ndarray
    color: np.ndarray | None = None


@dataclass
class Dataset:
    """Ordered frames sharing one set of intrinsics.

    Depth is held as 16-bit millimeters, either in memory or as file paths
    that are read on access.
    """

    intrinsics: object
    timestamps: np.ndarray
    poses: list
    depth_mm: list
    color: list | None = None
    scene: SyntheticScene | None = None
    root: Path | None = None
    quaternions: np.ndarray | None = None
    _shape: tuple = field(init=False, repr=False)

    def __post_init__(self):
        self._shape = tuple(self.intrinsics.shape)
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        if not (len(self.timestamps) == len(self.poses) == len(self.depth_mm)):
            raise DatasetError("timestamps, poses and depth frames differ in count")
        if self.color is not None and len(self.color) != len(self.poses):
            raise DatasetError("color frames and poses differ in count")
        check_timestamps(self.timestamps)

    def __len__(self):
        return len(self.poses)

    def __iter__(self):
        for i in range(len(self)):
            yield self.frame(i)

    def depth_millimeters(self, i):
        d = self.depth_mm[i]
        if isinstance(d, (str, Path)):
            d = _read_png(d, self._shape, "depth")
        return np.asarray(d, dtype=np.uint16)

    def frame(self, i) -> Frame:
        depth = depth_to_meters(self.depth_millimeters(i))
        color = None
        if self.color is not None:
            c = self.color[i]
            color = _read_png(c, self._shape + (3,), "color") if isinstance(c, (str, Path)) else c
        return Frame(i, float(self.timestamps[i]), self.poses[i], depth, color)


def depth_to_meters(mm):
    """16-bit millimeters to float32 meters; 0 stays 0 (invalid)."""
    return (np.asarray(mm, dtype=np.float64) / DEPTH_SCALE).astype(np.float32)


def depth_to_millimeters(depth):
    """Float meters to 16-bit millimeters; invalid or out-of-range pixels become 0."""
    d = np.asarray(depth, dtype=np.float64)
    mm = np.rint(np.where(np.isfinite(d) & (d > 0), d, 0.0) * DEPTH_SCALE)
    mm[(mm < 0) | (mm > MAX_DEPTH_MM)] = 0
    return mm.astype(np.uint16)


def check_timestamps(ts):
    ts = np.asarray(ts, dtype=np.float64)
    bad = np.nonzero(np.diff(ts) <= 0)[0]
    if bad.size:
        i = int(bad[0]) + 1
        raise TimestampOrderError(f"timestamp of frame {i} ({ts[i]!r}) does not increase")


def normalize_quaternion(q, where="pose"):
    """Unit quaternion, renormalized until it is a fixed point of normalization."""
    q = np.asarray(q, dtype=np.float64)
    n = float(np.linalg.norm(q))
    if not np.isfinite(n) or abs(n - 1.0) > QUATERNION_TOLERANCE:
        raise QuaternionError(f"{where}: quaternion norm {n:.6g} deviates from 1 by more than {QUATERNION_TOLERANCE}")
    for _ in range(8):
        nq = q / np.linalg.norm(q)
        if np.array_equal(nq, q):
            break
        q = nq
    return q


def pose_from_record(translation, q, where="pose"):
    """Pose from a (possibly slightly unnormalized) quaternion, as done on load."""
    return Pose.from_quaternion(np.asarray(translation, dtype=np.float64), normalize_quaternion(q, where))


def canonical_pose(pose: Pose):
    """(pose, quaternion) exactly as they read back from a poses file."""
    q = normalize_quaternion(matrix_to_quaternion(pose.rotation))
    return Pose.from_quaternion(pose.translation, q), q


def parse_poses(text, where="poses.txt"):
    """(timestamps, poses, normalized quaternions) from pose-file text."""
    ts, poses, quats = [], [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise DatasetError(f"{where}:{lineno}: expected 8 values, got {len(parts)}")
        try:
            v = [float(p) for p in parts]
        except ValueError:
            raise DatasetError(f"{where}:{lineno}: non-numeric value") from None
        ts.append(v[0])
        q = normalize_quaternion(v[4:8], f"{where}:{lineno}")
        quats.append(q)
        poses.append(Pose.from_quaternion(np.array(v[1:4]), q))
    check_timestamps(ts)
    return np.array(ts, np.float64), poses, np.array(quats).reshape(-1, 4)


def format_poses(timestamps, poses, quaternions=None):
    lines = []
    for i, (t, p) in enumerate(zip(timestamps, poses)):
        q = p.quaternion if quaternions is None else quaternions[i]
        vals = [float(t), *map(float, p.translation), *map(float, q)]
        lines.append(" ".join(repr(v) for v in vals))
    return "\n".join(lines) + "\n"


def _read_png(path, shape, what):
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"{what} image not found: {path}")
    with Image.open(path) as im:
        arr = np.array(im)
    if arr.shape != tuple(shape):
        raise DimensionMismatchError(f"{path}: image shape {arr.shape} does not match sensor {tuple(shape)}")
    return arr.astype(np.uint16) if what == "depth" else arr.astype(np.uint8)


def _check_png_size(path, shape, what):
    if not path.is_file():
        raise MissingFileError(f"{what} image not found: {path}")
    with Image.open(path) as im:
        w, h = im.size
    if (h, w) != tuple(shape[:2]):
        raise DimensionMismatchError(f"{path}: image is {w}x{h}, sensor expects {shape[1]}x{shape[0]}")


def frame_name(i):
    return f"{i:06d}.png"


def load_dataset(directory) -> Dataset:
    """Open a dataset directory; images are validated now and decoded lazily."""
    root = Path(directory)
    if not root.is_dir():
        raise MissingFileError(f"dataset directory not found: {root}")
    intr = load_intrinsics(root / "intrinsics.txt")
    pose_file = root / "poses.txt"
    if not pose_file.is_file():
        raise MissingFileError(f"pose file not found: {pose_file}")
    ts, poses, quats = parse_poses(pose_file.read_text(), str(pose_file))
    if not poses:
        raise DatasetError(f"{pose_file} lists no frames")
    shape = tuple(intr.shape)
    depth = [root / "depth" / frame_name(i) for i in range(len(poses))]
    for p in depth:
        _check_png_size(p, shape, "depth")
    color = None
    if (root / "color").is_dir():
        color = [root / "color" / frame_name(i) for i in range(len(poses))]
        for p in color:
            _check_png_size(p, shape, "color")
    scene = SyntheticScene.load(root / "scene.json") if (root / "scene.json").is_file() else None
    return Dataset(intr, ts, poses, depth, color, scene, root, quats)


def write_dataset(directory, dataset: Dataset):
    """Write every frame of ``dataset`` in the directory layout above."""
    root = Path(directory)
    (root / "depth").mkdir(parents=True, exist_ok=True)
    (root / "intrinsics.txt").write_text(format_intrinsics(dataset.intrinsics))
    (root / "poses.txt").write_text(format_poses(dataset.timestamps, dataset.poses, dataset.quaternions))
    for i in range(len(dataset)):
        Image.fromarray(dataset.depth_millimeters(i)).save(root / "depth" / frame_name(i))
    if dataset.color is not None:
        (root / "color").mkdir(exist_ok=True)
        for i in range(len(dataset)):
            Image.fromarray(np.asarray(dataset.frame(i).color, np.uint8), "RGB").save(root / "color" / frame_name(i))
    if dataset.scene is not None:
        (root / "scene.json").write_text(dataset.scene.to_json())
    return root


def synthesize(scene_name, n_frames, sensor="camera", width=None, height=None, with_color=False,
               frame_period=0.1) -> Dataset:
    """Render a named scene along its scripted trajectory into an in-memory dataset."""
    if n_frames <= 0:
        raise DatasetError("a dataset needs at least one frame")
    scene = named_scene(scene_name)
    if sensor == "camera":
        intr = default_intrinsics("camera", width or 640, height or 480)
    else:
        intr = default_intrinsics(sensor, width or 1024, height or 32)
    canon = [canonical_pose(p) for p in trajectory(scene_name, n_frames, sensor)]
    poses = [p for p, _ in canon]
    depth, color = [], [] if with_color else None
    for p in poses:
        if with_color:
            d, c = scene.render(p, intr, with_color=True)
            color.append(c)
        else:
            d = scene.render(p, intr)
        depth.append(depth_to_millimeters(d))
    ts = np.arange(n_frames) * frame_period
    return Dataset(intr, ts, poses, depth, color, scene, quaternions=np.array([q for _, q in canon]))
