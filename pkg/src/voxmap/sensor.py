"""Sensor models: poses, pinhole and rotating-LiDAR projection, depth sampling.

Depth images are float32 arrays in meters where 0 marks an invalid pixel.
Image coordinates put pixel centers on integers: pixel (i, j) covers
u in [i - 0.5, i + 0.5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numba as nb
import numpy as np

from . import _hash
from .errors import ConfigurationError, MissingFileError, PoseError

CAMERA = 0
LIDAR = 1

VALID = 0
BEHIND = 1
OUTSIDE = 2

NEAREST = 0
LINEAR = 1
DEFAULT_MAX_GAP = 0.2


# ---------------------------------------------------------------------------
# Poses


def quaternion_to_matrix(q):
    """Rotation matrix from a unit quaternion given as (qx, qy, qz, qw)."""
    x, y, z, w = (float(v) for v in q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quaternion(R):
    """Unit quaternion (qx, qy, qz, qw) with qw >= 0 for a rotation matrix."""
    R = np.asarray(R, dtype=np.float64)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s, 0.25 * s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = [0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s]
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = [(R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s]
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = [(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s, (R[1, 0] - R[0, 1]) / s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return -q if q[3] < 0 else q


@dataclass
class Pose:
    """Rigid transform mapping sensor-frame points into the layer frame."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T):
        T = np.asarray(T, dtype=np.float64)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_quaternion(cls, translation, q):
        return cls(quaternion_to_matrix(q), translation)

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0)):
        """Camera pose (z forward, x right, y down) at ``eye`` looking at ``target``."""
        eye = np.asarray(eye, dtype=np.float64)
        f = np.asarray(target, dtype=np.float64) - eye
        f /= np.linalg.norm(f)
        r = np.cross(f, up)
        r /= np.linalg.norm(r)
        d = np.cross(f, r)
        return cls(np.stack([r, d, f], axis=1), eye)

    @property
    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    @property
    def quaternion(self):
        return matrix_to_quaternion(self.rotation)

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def transform(self, points):
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def validate(self, tol=1e-6):
        R = self.rotation
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(self.translation))):
            raise PoseError("pose contains non-finite values")
        if abs(np.linalg.det(R) - 1.0) > tol or np.abs(R.T @ R - np.eye(3)).max() > tol:
            raise PoseError("pose rotation is not orthonormal with determinant +1")
        return self


# ---------------------------------------------------------------------------
# Intrinsics


@dataclass(frozen=True)
class CameraIntrinsics:
    fu: float
    fv: float
    cu: float
    cv: float
    width: int
    height: int
    min_depth: float = 0.05
    max_depth: float = 10.0

    kind = "camera"

    def __post_init__(self):
        if not (self.fu > 0 and self.fv > 0 and self.width > 0 and self.height > 0):
            raise ConfigurationError("camera focal lengths and image size must be positive")

    @property
    def shape(self):
        return (self.height, self.width)

    def params(self):
        return np.array(
            [self.fu, self.fv, self.cu, self.cv, self.width, self.height, self.min_depth, self.max_depth]
        )

    def ray_directions(self):
        """(H, W, 3) unnormalized sensor-frame rays with unit z."""
        u, v = np.meshgrid(np.arange(self.width), np.arange(self.height))
        return np.stack([(u - self.cu) / self.fu, (v - self.cv) / self.fv, np.ones(u.shape)], axis=-1)

    def to_dict(self):
        return {
            "kind": "camera",
            "fu": self.fu, "fv": self.fv, "cu": self.cu, "cv": self.cv,
            "width": self.width, "height": self.height,
            "min_depth": self.min_depth, "max_depth": self.max_depth,
        }


@dataclass(frozen=True)
class LidarIntrinsics:
    """Rotating LiDAR with uniformly spaced azimuth columns and elevation beams.

    Angles: azimuth is atan2(y, x); the polar angle is measured from +z.
    ``theta_start`` and ``phi_start`` are the angles of column 0 and beam 0.
    """

    num_azimuth: int
    num_elevation: int
    theta_start: float = -math.pi
    phi_start: float = math.pi / 2 - math.pi / 12
    azimuth_fov: float = 2 * math.pi
    elevation_fov: float = math.pi / 6
    min_range: float = 0.2
    max_range: float = 30.0

    kind = "lidar"

    def __post_init__(self):
        if not (self.num_azimuth > 0 and self.num_elevation > 0 and self.azimuth_fov > 0 and self.elevation_fov > 0):
            raise ConfigurationError("lidar resolution and field of view must be positive")

    @property
    def alpha(self):
        return self.num_azimuth / self.azimuth_fov

    @property
    def beta(self):
        return self.num_elevation / self.elevation_fov

    @property
    def width(self):
        return self.num_azimuth

    @property
    def height(self):
        return self.num_elevation

    @property
    def shape(self):
        return (self.num_elevation, self.num_azimuth)

    def params(self):
        return np.array(
            [self.num_azimuth, self.num_elevation, self.theta_start, self.phi_start,
             self.alpha, self.beta, self.min_range, self.max_range]
        )

    def ray_directions(self):
        """(H, W, 3) unit rays for every beam."""
        u, v = np.meshgrid(np.arange(self.num_azimuth), np.arange(self.num_elevation))
        theta = self.theta_start + u / self.alpha
        phi = self.phi_start + v / self.beta
        return np.stack([np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)], axis=-1)

    def to_dict(self):
        return {
            "kind": "lidar",
            "num_azimuth": self.num_azimuth, "num_elevation": self.num_elevation,
            "theta_start": self.theta_start, "phi_start": self.phi_start,
            "azimuth_fov": self.azimuth_fov, "elevation_fov": self.elevation_fov,
            "min_range": self.min_range, "max_range": self.max_range,
        }


def sensor_kind(intrinsics) -> int:
    return LIDAR if isinstance(intrinsics, LidarIntrinsics) else CAMERA


def max_range(intrinsics) -> float:
    return intrinsics.max_range if isinstance(intrinsics, LidarIntrinsics) else intrinsics.max_depth


_INT_KEYS = {"width", "height", "num_azimuth", "num_elevation"}


def parse_intrinsics(text: str):
    """Parse key=value intrinsics; ``kind`` selects camera or lidar."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"intrinsics line {lineno} is not key=value: {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        values[k] = v
    kind = values.pop("kind", "camera")
    cls = {"camera": CameraIntrinsics, "lidar": LidarIntrinsics}.get(kind)
    if cls is None:
        raise ConfigurationError(f"unknown sensor kind {kind!r}")
    try:
        kwargs = {k: int(v) if k in _INT_KEYS else float(v) for k, v in values.items()}
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"bad intrinsics keys: {exc}") from None
    except ValueError as exc:
        raise ConfigurationError(f"bad intrinsics value: {exc}") from None


def load_intrinsics(path):
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"intrinsics file not found: {path}")
    return parse_intrinsics(path.read_text())


def format_intrinsics(intrinsics) -> str:
    lines = []
    for k, v in intrinsics.to_dict().items():
        lines.append(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Projection and sampling kernels


@nb.njit(cache=True, inline="always")
def project_point(kind, params, x, y, z):
    """Project a sensor-frame point; returns (u, v, depth, status)."""
    if kind == CAMERA:
        if z <= 0.0:
            return 0.0, 0.0, 0.0, BEHIND
        u = params[0] * x / z + params[2]
        v = params[1] * y / z + params[3]
        status = VALID if (0.0 <= u < params[4] and 0.0 <= v < params[5]) else OUTSIDE
        return u, v, z, status
    r = math.sqrt(x * x + y * y + z * z)
    if r <= 0.0:
        return 0.0, 0.0, 0.0, BEHIND
    n_az = params[0]
    u = (math.atan2(y, x) - params[2]) * params[4]
    u = u - n_az * math.floor(u / n_az)
    if u >= n_az:
        u -= n_az
    c = z / r
    c = min(1.0, max(-1.0, c))
    v = (math.acos(c) - params[3]) * params[5]
    status = VALID if 0.0 <= v < params[1] else OUTSIDE
    return u, v, r, status


@nb.njit(cache=True, inline="always")
def sample_depth_at(depth, u, v, mode, max_gap, wrap):
    """Depth at continuous pixel coordinates or 0.0 when invalid."""
    h, w = depth.shape
    if mode == NEAREST:
        iu = int(math.floor(u + 0.5))
        iv = int(math.floor(v + 0.5))
        if wrap:
            iu = iu % w
        if iu < 0 or iu >= w or iv < 0 or iv >= h:
            return 0.0
        return depth[iv, iu]
    if v < 0.0 or v > h - 1 or h < 2:
        return 0.0
    if wrap:
        if w < 2:
            return 0.0
        u0 = int(math.floor(u))
        fu = u - u0
        u0 = u0 % w
        u1 = (u0 + 1) % w
    else:
        if u < 0.0 or u > w - 1 or w < 2:
            return 0.0
        u0 = min(int(math.floor(u)), w - 2)
        fu = u - u0
        u1 = u0 + 1
    v0 = min(int(math.floor(v)), h - 2)
    fv = v - v0
    d00 = depth[v0, u0]
    d10 = depth[v0, u1]
    d01 = depth[v0 + 1, u0]
    d11 = depth[v0 + 1, u1]
    lo = min(min(d00, d10), min(d01, d11))
    hi = max(max(d00, d10), max(d01, d11))
    if lo <= 0.0 or hi - lo > max_gap:
        return 0.0
    return (d00 * (1.0 - fu) + d10 * fu) * (1.0 - fv) + (d01 * (1.0 - fu) + d11 * fu) * fv


@nb.njit(cache=True)
def _project_many(kind, params, pts):
    n = pts.shape[0]
    u = np.empty(n)
    v = np.empty(n)
    d = np.empty(n)
    st = np.empty(n, np.int8)
    for i in range(n):
        u[i], v[i], d[i], st[i] = project_point(kind, params, pts[i, 0], pts[i, 1], pts[i, 2])
    return u, v, d, st


@nb.njit(cache=True)
def _sample_many(depth, u, v, mode, max_gap, wrap):
    out = np.empty(u.shape[0], np.float32)
    for i in range(u.shape[0]):
        out[i] = sample_depth_at(depth, u[i], v[i], mode, max_gap, wrap)
    return out


@dataclass
class Projection:
    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    status: np.ndarray

    @property
    def valid(self):
        return self.status == VALID


def project(points, intrinsics) -> Projection:
    """Project sensor-frame points. Status is VALID, BEHIND or OUTSIDE per point."""
    pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    u, v, d, st = _project_many(sensor_kind(intrinsics), intrinsics.params(), pts)
    return Projection(u, v, d, st)


def project_camera(points, camera: CameraIntrinsics) -> Projection:
    return project(points, camera)


def project_lidar(points, lidar: LidarIntrinsics) -> Projection:
    return project(points, lidar)


def sample_depth(depth, u, v, mode="nearest", max_gap=DEFAULT_MAX_GAP, wrap=False):
    """Sample depth at continuous coordinates; returns 0.0 where invalid.

    ``linear`` mode is foreground-safe: if any of the four neighbours is
    invalid, or their spread exceeds ``max_gap``, the sample is invalid.
    """
    m = {"nearest": NEAREST, "linear": LINEAR}.get(mode, mode)
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    depth = np.ascontiguousarray(depth, dtype=np.float32)
    return _sample_many(depth, u, v, m, float(max_gap), bool(wrap))


# ---------------------------------------------------------------------------
# Blocks in view


@nb.njit(cache=True)
def _tile_rays(kind, params, depth, R, t, k, margin, max_dist):
    """One ray per k x k pixel tile, reaching the tile's farthest depth plus margin.

    Returns (origin, ends) where ends[i] is the far point of ray i in the layer
    frame. The tile depth is the max over the tile grown by one pixel so that
    bilinear neighbours are covered.
    """
    h, w = depth.shape
    nt_u = (w + k - 1) // k
    nt_v = (h + k - 1) // k
    ends = np.empty((nt_u * nt_v, 3))
    n = 0
    for tv in range(nt_v):
        for tu in range(nt_u):
            u_lo = tu * k
            v_lo = tv * k
            u_hi = min(u_lo + k, w)
            v_hi = min(v_lo + k, h)
            dmax = 0.0
            for j in range(max(v_lo - 1, 0), min(v_hi + 1, h)):
                for i in range(u_lo - 1, u_hi + 1):
                    ii = i
                    if ii < 0 or ii >= w:
                        if kind == LIDAR:
                            ii = ii % w
                        else:
                            continue
                    d = depth[j, ii]
                    if d > dmax:
                        dmax = d
            if dmax <= 0.0:
                continue
            reach = min(dmax + margin, max_dist)
            uc = 0.5 * (u_lo + u_hi - 1)
            vc = 0.5 * (v_lo + v_hi - 1)
            if kind == CAMERA:
                dx = (uc - params[2]) / params[0] * reach
                dy = (vc - params[3]) / params[1] * reach
                dz = reach
            else:
                th = params[2] + uc / params[4]
                ph = params[3] + vc / params[5]
                dx = math.sin(ph) * math.cos(th) * reach
                dy = math.sin(ph) * math.sin(th) * reach
                dz = math.cos(ph) * reach
            for a in range(3):
                ends[n, a] = R[a, 0] * dx + R[a, 1] * dy + R[a, 2] * dz + t[a]
            n += 1
    return ends[:n]


@nb.njit(cache=True)
def _traverse(origin, ends, block_size, out):
    """Amanatides-Woo block traversal of segments origin -> ends[i]."""
    n = 0
    cap = out.shape[0]
    for r in range(ends.shape[0]):
        cur = np.empty(3, np.int64)
        step = np.empty(3, np.int64)
        tmax = np.empty(3)
        tdelta = np.empty(3)
        last = np.empty(3, np.int64)
        for a in range(3):
            o = origin[a] / block_size
            e = ends[r, a] / block_size
            cur[a] = int(math.floor(o))
            last[a] = int(math.floor(e))
            d = e - o
            if d > 0:
                step[a] = 1
                tdelta[a] = 1.0 / d
                tmax[a] = (cur[a] + 1 - o) / d
            elif d < 0:
                step[a] = -1
                tdelta[a] = -1.0 / d
                tmax[a] = (o - cur[a]) / -d
            else:
                step[a] = 0
                tdelta[a] = np.inf
                tmax[a] = np.inf
        while True:
            if n >= cap:
                return -1
            out[n, 0] = cur[0]
            out[n, 1] = cur[1]
            out[n, 2] = cur[2]
            n += 1
            if cur[0] == last[0] and cur[1] == last[1] and cur[2] == last[2]:
                break
            a = 0
            if tmax[1] < tmax[a]:
                a = 1
            if tmax[2] < tmax[a]:
                a = 2
            if tmax[a] > 1.0:
                break
            cur[a] += step[a]
            tmax[a] += tdelta[a]
    return n


def _dilate(indices, radius):
    if indices.shape[0] == 0 or radius <= 0:
        return indices
    r = np.arange(-radius, radius + 1)
    offs = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    return np.unique((indices[:, None, :] + offs[None, :, :]).reshape(-1, 3), axis=0)


def view_tiling(intrinsics, block_size, reach):
    """Tile edge in pixels and block dilation that keep the view set a superset.

    Every voxel ray in a tile stays within ``lateral`` meters of the tile's
    center ray at equal depth or range; dilating by ceil(lateral / block_size)
    blocks then covers all blocks those rays touch.
    """
    if isinstance(intrinsics, LidarIntrinsics):
        ang = math.hypot(1.0 / intrinsics.alpha, 1.0 / intrinsics.beta)
    else:
        ang = math.sqrt(1.0 / intrinsics.fu**2 + 1.0 / intrinsics.fv**2)
    # lateral offset of a ray that is (k/2 + 1) pixels from the tile center
    k = int(math.floor(2.0 * (block_size / (ang * max(reach, 1e-9)) - 1.0)))
    k = max(1, min(k, 64))
    lateral = (0.5 * k + 1.0) * ang * reach
    return k, max(1, int(math.ceil(lateral / block_size - 1e-12)))


def blocks_in_view(pose: Pose, intrinsics, depth, block_size, truncation, max_distance=None):
    """Block indices that may contain a voxel updated by this depth frame.

    The result is a superset of blocks holding any voxel whose center projects
    onto a valid pixel and lies no deeper than the measured depth plus
    ``truncation`` (and within ``max_distance``). Sorted lexicographically.
    """
    depth = np.ascontiguousarray(depth, dtype=np.float32)
    if depth.shape != intrinsics.shape:
        raise ConfigurationError(f"depth image shape {depth.shape} does not match sensor {intrinsics.shape}")
    max_d = max_range(intrinsics) if max_distance is None else max_distance
    valid = depth[depth > 0]
    if valid.size == 0:
        return np.empty((0, 3), np.int64)
    reach = min(float(valid.max()) + truncation, max_d)
    k, dil = view_tiling(intrinsics, block_size, reach)
    ends = _tile_rays(sensor_kind(intrinsics), intrinsics.params(), depth, pose.rotation, pose.translation,
                      k, float(truncation), float(max_d))
    steps = int(3 * (reach / block_size + 2))
    out = np.empty((max(ends.shape[0], 1) * steps, 3), np.int64)
    n = _traverse(pose.translation, ends, float(block_size), out)
    if n < 0:
        raise RuntimeError("block traversal buffer overflow")
    hit = np.unique(out[:n], axis=0)
    res = _dilate(hit, dil)
    lim = (res >= _hash.COORD_MIN) & (res <= _hash.COORD_MAX)
    return res[lim.all(axis=1)]
