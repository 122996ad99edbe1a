"""Analytic test scenes and a sphere-tracing depth renderer.

A scene is a union of primitives; its signed distance is the minimum over the
primitives.  Boxes may be hollow shells of a given wall thickness, which is
how rooms and corridors are built.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .errors import ConfigurationError
from .sensor import CAMERA, CameraIntrinsics, LidarIntrinsics, Pose, sensor_kind

SPHERE, BOX, PLANE = 0, 1, 2
HIT_EPS = 1e-4
MAX_STEPS = 1024
REFINE_STEPS = 8

PALETTE = np.array(
    [[200, 60, 60], [60, 160, 80], [70, 90, 200], [220, 180, 60], [150, 80, 180], [60, 180, 190], [180, 180, 180]],
    np.uint8,
)


@dataclass
class Sphere:
    center: tuple
    radius: float

    def encode(self):
        return [SPHERE, *self.center, self.radius]


@dataclass
class Box:
    min: tuple
    max: tuple
    hollow: bool = False
    thickness: float = 0.1

    def encode(self):
        return [BOX, *self.min, *self.max, float(self.hollow), self.thickness]


@dataclass
class Plane:
    point: tuple
    normal: tuple

    def encode(self):
        n = np.asarray(self.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        return [PLANE, *self.point, *n]


@nb.njit(cache=True, inline="always")
def _prim_sdf(p, x, y, z):
    kind = int(p[0])
    if kind == SPHERE:
        dx = x - p[1]
        dy = y - p[2]
        dz = z - p[3]
        return math.sqrt(dx * dx + dy * dy + dz * dz) - p[4]
    if kind == BOX:
        cx = 0.5 * (p[1] + p[4])
        cy = 0.5 * (p[2] + p[5])
        cz = 0.5 * (p[3] + p[6])
        qx = abs(x - cx) - 0.5 * (p[4] - p[1])
        qy = abs(y - cy) - 0.5 * (p[5] - p[2])
        qz = abs(z - cz) - 0.5 * (p[6] - p[3])
        ox = max(qx, 0.0)
        oy = max(qy, 0.0)
        oz = max(qz, 0.0)
        d = math.sqrt(ox * ox + oy * oy + oz * oz) + min(max(qx, max(qy, qz)), 0.0)
        if p[7] != 0.0:
            d = abs(d) - 0.5 * p[8]
        return d
    return (x - p[1]) * p[4] + (y - p[2]) * p[5] + (z - p[3]) * p[6]


@nb.njit(cache=True)
def _scene_sdf(prims, x, y, z):
    best = np.inf
    arg = -1
    for i in range(prims.shape[0]):
        d = _prim_sdf(prims[i], x, y, z)
        if d < best:
            best = d
            arg = i
    return best, arg


@nb.njit(cache=True)
def _sdf_many(prims, pts):
    out = np.empty(pts.shape[0])
    for i in range(pts.shape[0]):
        out[i], _ = _scene_sdf(prims, pts[i, 0], pts[i, 1], pts[i, 2])
    return out


@nb.njit(cache=True)
def _refine_hit(prims, origin, dr, t, d):
    """Newton steps on the SDF along the ray; grazing rays stop short of the surface otherwise."""
    t_hit = t + d
    for _ in range(REFINE_STEPS):
        if abs(d) < 1e-12:
            break
        h = 1e-6
        d2, _ = _scene_sdf(prims, origin[0] + (t + h) * dr[0], origin[1] + (t + h) * dr[1], origin[2] + (t + h) * dr[2])
        slope = (d2 - d) / h
        if slope > -1e-3:
            break
        t_new = t - d / slope
        dn, _ = _scene_sdf(prims, origin[0] + t_new * dr[0], origin[1] + t_new * dr[1], origin[2] + t_new * dr[2])
        if abs(dn) >= abs(d):
            break
        t, d = t_new, dn
        t_hit = t
    return t_hit


@nb.njit(cache=True)
def _trace(prims, origin, dirs, t_min, t_max):
    """Sphere-trace unit rays; returns hit distance (0 for a miss) and primitive id."""
    n = dirs.shape[0]
    dist = np.zeros(n)
    prim = np.full(n, -1, np.int64)
    for r in range(n):
        t = t_min
        for _ in range(MAX_STEPS):
            if t > t_max:
                break
            x = origin[0] + t * dirs[r, 0]
            y = origin[1] + t * dirs[r, 1]
            z = origin[2] + t * dirs[r, 2]
            d, a = _scene_sdf(prims, x, y, z)
            if d < HIT_EPS:
                t = _refine_hit(prims, origin, dirs[r], t, d)
                if t <= t_max:
                    dist[r] = t
                    prim[r] = a
                break
            t += d
    return dist, prim


@dataclass
class SyntheticScene:
    primitives: list = field(default_factory=list)
    name: str = "custom"

    def encoded(self):
        if not self.primitives:
            raise ConfigurationError("scene has no primitives")
        out = np.zeros((len(self.primitives), 9))
        for i, p in enumerate(self.primitives):
            row = p.encode()
            out[i, : len(row)] = row
        return out

    def sdf(self, points):
        """Signed distance of (N, 3) points: minimum over primitives."""
        pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        return _sdf_many(self.encoded(), pts)

    def to_dict(self):
        out = []
        for p in self.primitives:
            d = {"type": type(p).__name__.lower()}
            d.update({k: (list(v) if isinstance(v, (tuple, list, np.ndarray)) else v) for k, v in vars(p).items()})
            out.append(d)
        return {"name": self.name, "primitives": out}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d):
        kinds = {"sphere": Sphere, "box": Box, "plane": Plane}
        prims = []
        for p in d.get("primitives", []):
            p = dict(p)
            kind = kinds.get(p.pop("type", None))
            if kind is None:
                raise ConfigurationError(f"unknown primitive in scene: {p}")
            prims.append(kind(**{k: tuple(v) if isinstance(v, list) else v for k, v in p.items()}))
        return cls(prims, d.get("name", "custom"))

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def render(self, pose: Pose, intrinsics, with_color=False):
        """Depth image (meters, 0 = miss) and optionally an RGB image by primitive."""
        kind = sensor_kind(intrinsics)
        rays = intrinsics.ray_directions().reshape(-1, 3)
        norm = np.linalg.norm(rays, axis=1)
        unit = rays / norm[:, None]
        world = np.ascontiguousarray(unit @ pose.rotation.T)
        if kind == CAMERA:
            t_min, t_max = intrinsics.min_depth, intrinsics.max_depth * norm.max()
        else:
            t_min, t_max = intrinsics.min_range, intrinsics.max_range
        t, prim = _trace(self.encoded(), pose.translation, world, float(t_min), float(t_max))
        depth = t / norm if kind == CAMERA else t
        if kind == CAMERA:
            depth[(depth > intrinsics.max_depth) | (depth < intrinsics.min_depth)] = 0.0
        else:
            depth[(depth > intrinsics.max_range) | (depth < intrinsics.min_range)] = 0.0
        depth = depth.reshape(intrinsics.shape).astype(np.float32)
        if not with_color:
            return depth
        color = PALETTE[np.where(prim >= 0, prim, len(PALETTE) - 1) % len(PALETTE)].reshape(intrinsics.shape + (3,))
        color[depth == 0] = 0
        return depth, color


# ---------------------------------------------------------------------------
# Named scenes and trajectories


def _room_shell(lo, hi, thickness=0.1):
    return Box(tuple(lo), tuple(hi), hollow=True, thickness=thickness)


SCENES = {
    "sphere_in_box": lambda: SyntheticScene(
        [_room_shell((-1.5, -1.5, 0.0), (1.5, 1.5, 2.5)), Sphere((0.0, 0.0, 1.0), 0.5)], "sphere_in_box"
    ),
    "room": lambda: SyntheticScene(
        [
            _room_shell((-3.0, -2.5, 0.0), (3.0, 2.5, 3.0)),
            Box((-1.2, -0.6, 0.0), (0.0, 0.6, 0.75)),
            Sphere((1.5, 1.0, 0.6), 0.4),
            Box((1.8, -1.6, 0.0), (2.2, -1.2, 3.0)),
            Box((-2.2, 1.0, 0.0), (-1.6, 2.0, 1.2)),
        ],
        "room",
    ),
    "corridor": lambda: SyntheticScene(
        [
            _room_shell((-5.0, -1.0, 0.0), (5.0, 1.0, 2.5)),
            Box((-3.0, 0.5, 0.0), (-2.4, 1.0, 1.0)),
            Box((1.0, -1.0, 0.0), (1.6, -0.5, 1.4)),
            Sphere((3.2, 0.4, 0.4), 0.35),
        ],
        "corridor",
    ),
}


def named_scene(name) -> SyntheticScene:
    if name not in SCENES:
        raise ConfigurationError(f"unknown scene {name!r}; choose from {sorted(SCENES)}")
    return SCENES[name]()


def _lidar_pose(eye, yaw):
    c, s = math.cos(yaw), math.sin(yaw)
    return Pose(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]), eye)


def trajectory(name, n_frames, sensor="camera"):
    """Scripted sensor poses that stay in free space for each named scene."""
    poses = []
    for i in range(n_frames):
        a = 2.0 * math.pi * i / max(n_frames, 1)
        if name == "sphere_in_box":
            eye = np.array([1.05 * math.cos(a), 1.05 * math.sin(a), 1.0 + 0.3 * math.sin(2 * a)])
            target = np.array([0.0, 0.0, 1.0])
            yaw = a + math.pi
        elif name == "room":
            eye = np.array([0.6 + 0.5 * math.cos(a), -0.6 + 0.5 * math.sin(a), 1.5 + 0.2 * math.sin(3 * a)])
            yaw = 2.0 * a
            target = eye + np.array([math.cos(yaw), math.sin(yaw), -0.35])
        elif name == "corridor":
            x = -4.0 + 8.0 * i / max(n_frames - 1, 1)
            eye = np.array([x, 0.2 * math.sin(a), 1.3])
            yaw = 0.5 * math.sin(2 * a)
            target = eye + np.array([math.cos(yaw), math.sin(yaw), -0.15])
        else:
            raise ConfigurationError(f"unknown scene {name!r}")
        if sensor == "camera":
            poses.append(Pose.look_at(eye, target))
        elif sensor == "lidar":
            poses.append(_lidar_pose(eye, yaw))
        else:
            raise ConfigurationError(f"unknown sensor {sensor!r}")
    return poses


def default_intrinsics(sensor="camera", width=640, height=480):
    if sensor == "camera":
        f = 0.5 * width / math.tan(math.radians(60.0) / 2.0)
        return CameraIntrinsics(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height, 0.1, 8.0)
    if sensor == "lidar":
        return LidarIntrinsics(num_azimuth=width, num_elevation=height, theta_start=-math.pi,
                               phi_start=math.pi / 2 - math.pi / 8, azimuth_fov=2 * math.pi,
                               elevation_fov=math.pi / 4, min_range=0.2, max_range=15.0)
    raise ConfigurationError(f"unknown sensor {sensor!r}")
