"""Projective integration of depth and color frames into voxel layers.

Every voxel of every candidate block is projected into the frame; the
measured depth at that pixel minus the voxel's own depth (camera z, or range
for LiDAR) gives the projective distance ``d_p`` that feeds the update
functors below.  Blocks are only allocated when at least one of their voxels
actually changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .errors import ConfigurationError
from .layer import BLOCK_EDGE, COLOR, OCCUPANCY, TSDF, Layer, require_same_voxel_size, sort_indices
from .sensor import (
    LINEAR,
    NEAREST,
    VALID,
    LidarIntrinsics,
    Pose,
    blocks_in_view,
    max_range,
    project_point,
    sample_depth_at,
    sensor_kind,
)

LOG_ODDS_HIT = 0.8473
LOG_ODDS_MISS = -0.4055
LOG_ODDS_LIMIT = 5.0
LOG_ODDS_QUANTUM = 2.0**-20

CONSTANT = 0
INVERSE_SQUARE = 1


@dataclass
class IntegratorConfig:
    """Integration parameters. ``truncation`` defaults to four voxels."""

    truncation: float | None = None
    max_weight: float = 100.0
    weighting: str = "constant"
    interpolation: str = "nearest"
    max_gap: float = 0.2
    max_integration_distance: float | None = None
    log_odds_hit: float = LOG_ODDS_HIT
    log_odds_miss: float = LOG_ODDS_MISS
    log_odds_min: float = -LOG_ODDS_LIMIT
    log_odds_max: float = LOG_ODDS_LIMIT
    color_max_weight: float = 100.0

    def truncation_for(self, voxel_size):
        return 4.0 * voxel_size if self.truncation is None else float(self.truncation)

    def check(self):
        if self.weighting not in ("constant", "inverse_square"):
            raise ConfigurationError(f"unknown weighting {self.weighting!r}")
        if self.interpolation not in ("nearest", "linear"):
            raise ConfigurationError(f"unknown interpolation {self.interpolation!r}")
        if self.truncation is not None and not self.truncation > 0:
            raise ConfigurationError("truncation must be positive")
        if not self.max_weight > 0:
            raise ConfigurationError("max_weight must be positive")
        if not self.log_odds_min < 0 < self.log_odds_max:
            raise ConfigurationError("log-odds clamps must satisfy min < 0 < max")
        reach = max(-self.log_odds_min, self.log_odds_max) + max(abs(self.log_odds_hit), abs(self.log_odds_miss))
        if reach >= 8.0:
            raise ConfigurationError("log-odds clamp plus increment must stay below 8 for exact float32 sums")
        return self


# ---------------------------------------------------------------------------
# Update functors (usable from Python and from kernels)


def projective_distance(d, d_v):
    """Measured depth minus voxel depth; None when the sample is invalid."""
    if not (d > 0 and np.isfinite(d)):
        return None
    return d - d_v


@nb.njit(cache=True)
def tsdf_update(distance, weight, d_p, w_new, truncation, max_weight):
    """Weighted running average of the truncated projective distance.

    Returns the new (distance, weight); voxels more than ``truncation`` behind
    the surface are left unchanged.
    """
    if d_p < -truncation:
        return distance, weight
    d_t = min(max(d_p, -truncation), truncation)
    w_sum = weight + w_new
    d = (weight * distance + w_new * d_t) / w_sum
    return d, min(w_sum, max_weight)


@nb.njit(cache=True)
def quantize_log_odds(x):
    """Round to a multiple of LOG_ODDS_QUANTUM.

    On this grid every partial sum of up to thousands of updates within the
    clamp range is exact in float32, so addition order cannot change results.
    """
    return np.floor(x / LOG_ODDS_QUANTUM + 0.5) * LOG_ODDS_QUANTUM


@nb.njit(cache=True)
def occupancy_update(log_odds, d_p, truncation, hit, miss, lo, hi):
    """Log-odds hit behind the surface (within the band), miss in front of it."""
    if d_p < -truncation:
        return log_odds
    l = log_odds + quantize_log_odds(hit if d_p < 0.0 else miss)
    return min(max(l, quantize_log_odds(lo)), quantize_log_odds(hi))


@nb.njit(cache=True)
def _voxel_measurement(kind, params, R, t, px, py, pz, depth, mode, max_gap, wrap, max_dist):
    """Measured depth and voxel depth for a layer-frame point; (0, 0) when unusable."""
    x = R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz + t[0]
    y = R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz + t[1]
    z = R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz + t[2]
    u, v, d_v, status = project_point(kind, params, x, y, z)
    if status != VALID or d_v > max_dist:
        return 0.0, 0.0
    d = sample_depth_at(depth, u, v, mode, max_gap, wrap)
    if d <= params[6] or d > params[7]:
        return 0.0, 0.0
    return d, d_v


@nb.njit(cache=True)
def _integrate_tsdf_kernel(dist, wgt, slots, coords, vs, R, t, kind, params, depth, mode, max_gap, wrap,
                           max_dist, trunc, weighting, max_w, changed):
    for b in range(slots.shape[0]):
        s = slots[b]
        ox = coords[b, 0] * BLOCK_EDGE
        oy = coords[b, 1] * BLOCK_EDGE
        oz = coords[b, 2] * BLOCK_EDGE
        for l in range(512):
            px = (ox + (l & 7) + 0.5) * vs
            py = (oy + ((l >> 3) & 7) + 0.5) * vs
            pz = (oz + (l >> 6) + 0.5) * vs
            d, d_v = _voxel_measurement(kind, params, R, t, px, py, pz, depth, mode, max_gap, wrap, max_dist)
            if d <= 0.0:
                continue
            d_p = d - d_v
            if d_p < -trunc:
                continue
            w_new = 1.0 if weighting == CONSTANT else 1.0 / (d * d)
            old_d = dist[s, l]
            old_w = wgt[s, l]
            nd, nw = tsdf_update(np.float64(old_d), np.float64(old_w), d_p, w_new, trunc, max_w)
            nd32 = np.float32(nd)
            nw32 = np.float32(nw)
            if nd32 != old_d or nw32 != old_w:
                dist[s, l] = nd32
                wgt[s, l] = nw32
                changed[b] = True


@nb.njit(cache=True)
def _integrate_occupancy_kernel(lo_arr, slots, coords, vs, R, t, kind, params, depth, mode, max_gap, wrap,
                                max_dist, trunc, hit, miss, lmin, lmax, changed):
    for b in range(slots.shape[0]):
        s = slots[b]
        ox = coords[b, 0] * BLOCK_EDGE
        oy = coords[b, 1] * BLOCK_EDGE
        oz = coords[b, 2] * BLOCK_EDGE
        for l in range(512):
            px = (ox + (l & 7) + 0.5) * vs
            py = (oy + ((l >> 3) & 7) + 0.5) * vs
            pz = (oz + (l >> 6) + 0.5) * vs
            d, d_v = _voxel_measurement(kind, params, R, t, px, py, pz, depth, mode, max_gap, wrap, max_dist)
            if d <= 0.0:
                continue
            d_p = d - d_v
            if d_p < -trunc:
                continue
            old = lo_arr[s, l]
            new = np.float32(occupancy_update(np.float64(old), d_p, trunc, hit, miss, lmin, lmax))
            if new != old:
                lo_arr[s, l] = new
                changed[b] = True


@nb.njit(cache=True)
def _integrate_color_kernel(col, cw, slots, coords, tsdf_d, tsdf_w, tsdf_slots, vs, R, t, params, image,
                            depth, use_depth, trunc, max_w, changed):
    h = image.shape[0]
    w = image.shape[1]
    for b in range(slots.shape[0]):
        s = slots[b]
        ts = tsdf_slots[b]
        ox = coords[b, 0] * BLOCK_EDGE
        oy = coords[b, 1] * BLOCK_EDGE
        oz = coords[b, 2] * BLOCK_EDGE
        for l in range(512):
            if not (tsdf_w[ts, l] > 0.0 and abs(tsdf_d[ts, l]) < trunc):
                continue
            px = (ox + (l & 7) + 0.5) * vs
            py = (oy + ((l >> 3) & 7) + 0.5) * vs
            pz = (oz + (l >> 6) + 0.5) * vs
            x = R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz + t[0]
            y = R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz + t[1]
            z = R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz + t[2]
            u, v, d_v, status = project_point(0, params, x, y, z)
            if status != VALID:
                continue
            iu = int(math.floor(u + 0.5))
            iv = int(math.floor(v + 0.5))
            if iu >= w or iv >= h:
                continue
            if use_depth:
                d = depth[iv, iu]
                if d <= 0.0 or abs(d - d_v) > trunc:
                    continue
            old_w = np.float64(cw[s, l])
            changed_here = False
            for c in range(3):
                nc = math.floor((old_w * col[s, l, c] + image[iv, iu, c]) / (old_w + 1.0) + 0.5)
                nc = min(max(nc, 0.0), 255.0)
                if np.uint8(nc) != col[s, l, c]:
                    col[s, l, c] = np.uint8(nc)
                    changed_here = True
            nw = np.float32(min(old_w + 1.0, max_w))
            if nw != cw[s, l]:
                cw[s, l] = nw
                changed_here = True
            if changed_here:
                changed[b] = True


# ---------------------------------------------------------------------------
# Public API


def _frame_setup(layer, depth, pose, sensor, cfg):
    cfg = (cfg or IntegratorConfig()).check()
    pose = pose.validate() if isinstance(pose, Pose) else Pose.from_matrix(pose).validate()
    depth = np.ascontiguousarray(depth, dtype=np.float32)
    if depth.shape != sensor.shape:
        raise ConfigurationError(f"depth image shape {depth.shape} does not match sensor {sensor.shape}")
    trunc = cfg.truncation_for(layer.voxel_size)
    max_dist = max_range(sensor) if cfg.max_integration_distance is None else cfg.max_integration_distance
    return cfg, pose, depth, trunc, float(max_dist)


def _run_on_candidates(layer, candidates, run):
    """Apply ``run(arrays, slots, coords, changed)`` to existing and fresh blocks.

    Fresh blocks are integrated into scratch storage and only allocated when
    something changed, so empty space in view does not grow the map.
    """
    if candidates.shape[0] == 0:
        return np.empty((0, 3), np.int64)
    slots = layer.slots(candidates)
    exist = slots >= 0
    updated = []
    if exist.any():
        ex_coords = np.ascontiguousarray(candidates[exist])
        changed = np.zeros(ex_coords.shape[0], np.bool_)
        run(layer.data, slots[exist], ex_coords, changed)
        updated.append(ex_coords[changed])
    if (~exist).any():
        new_coords = np.ascontiguousarray(candidates[~exist])
        scratch = {
            f.name: np.full((new_coords.shape[0], 512) + f.shape, f.default, np.dtype(f.dtype).newbyteorder("="))
            for f in layer.voxel_type.fields
        }
        changed = np.zeros(new_coords.shape[0], np.bool_)
        run(scratch, np.arange(new_coords.shape[0]), new_coords, changed)
        keep = np.nonzero(changed)[0]
        if keep.size:
            new_slots, _ = layer.allocate_many(new_coords[keep])
            for name, arr in scratch.items():
                layer.data[name][new_slots] = arr[keep]
            updated.append(new_coords[keep])
    if not updated:
        return np.empty((0, 3), np.int64)
    return sort_indices(np.concatenate(updated))


def integrate_depth(layer: Layer, depth, pose, sensor, cfg: IntegratorConfig | None = None) -> np.ndarray:
    """Fuse one depth frame into a TSDF or occupancy layer.

    Returns the sorted (k, 3) indices of blocks in which at least one voxel
    changed.
    """
    if layer.voxel_type not in (TSDF, OCCUPANCY):
        raise ConfigurationError(f"cannot integrate depth into a {layer.voxel_type.name} layer")
    cfg, pose, depth, trunc, max_dist = _frame_setup(layer, depth, pose, sensor, cfg)
    candidates = blocks_in_view(pose, sensor, depth, layer.block_size, trunc, max_dist)
    inv = pose.inverse()
    R = np.ascontiguousarray(inv.rotation)
    t = np.ascontiguousarray(inv.translation)
    kind = sensor_kind(sensor)
    params = sensor.params()
    mode = LINEAR if cfg.interpolation == "linear" else NEAREST
    wrap = isinstance(sensor, LidarIntrinsics)
    vs = layer.voxel_size

    if layer.voxel_type is TSDF:
        weighting = CONSTANT if cfg.weighting == "constant" else INVERSE_SQUARE

        def run(data, slots, coords, changed):
            _integrate_tsdf_kernel(data["distance"], data["weight"], slots, coords, vs, R, t, kind, params,
                                   depth, mode, cfg.max_gap, wrap, max_dist, trunc, weighting,
                                   float(cfg.max_weight), changed)
    else:

        def run(data, slots, coords, changed):
            _integrate_occupancy_kernel(data["log_odds"], slots, coords, vs, R, t, kind, params, depth, mode,
                                        cfg.max_gap, wrap, max_dist, trunc, cfg.log_odds_hit,
                                        cfg.log_odds_miss, cfg.log_odds_min, cfg.log_odds_max, changed)

    return _run_on_candidates(layer, candidates, run)


def integrate_color(color_layer: Layer, color, pose, camera, tsdf_layer: Layer,
                    cfg: IntegratorConfig | None = None, depth=None) -> np.ndarray:
    """Fuse an RGB frame into voxels that lie inside the TSDF surface band.

    Only voxels with positive TSDF weight and |distance| strictly below the
    truncation distance are colored. When ``depth`` is given, voxels whose
    depth disagrees with the measured depth by more than the truncation
    distance are treated as occluded.
    """
    if color_layer.voxel_type is not COLOR or tsdf_layer.voxel_type is not TSDF:
        raise ConfigurationError("integrate_color needs a color layer and a TSDF layer")
    if isinstance(camera, LidarIntrinsics):
        raise ConfigurationError("color integration requires a pinhole camera")
    require_same_voxel_size(color_layer, tsdf_layer)
    cfg = (cfg or IntegratorConfig()).check()
    pose = pose.validate() if isinstance(pose, Pose) else Pose.from_matrix(pose).validate()
    image = np.ascontiguousarray(color, dtype=np.uint8)
    if image.shape != camera.shape + (3,):
        raise ConfigurationError(f"color image shape {image.shape} does not match camera {camera.shape}")
    trunc = cfg.truncation_for(tsdf_layer.voxel_size)
    if depth is not None:
        depth = np.ascontiguousarray(depth, dtype=np.float32)
        cand = blocks_in_view(pose, camera, depth, tsdf_layer.block_size, trunc,
                              cfg.max_integration_distance or camera.max_depth)
        tslots = tsdf_layer.slots(cand)
        cand = cand[tslots >= 0]
    else:
        depth = np.zeros((1, 1), np.float32)
        cand = tsdf_layer.indices()
    tsdf_slots_all = tsdf_layer.slots(cand)
    inv = pose.inverse()
    R = np.ascontiguousarray(inv.rotation)
    t = np.ascontiguousarray(inv.translation)
    params = camera.params()
    use_depth = depth.shape == camera.shape
    slot_of = {tuple(c): s for c, s in zip(cand.tolist(), tsdf_slots_all.tolist())}

    def run(data, slots, coords, changed):
        ts = np.array([slot_of[tuple(c)] for c in coords.tolist()], np.int64)
        _integrate_color_kernel(data["color"], data["weight"], slots, coords, tsdf_layer.data["distance"],
                                tsdf_layer.data["weight"], ts, tsdf_layer.voxel_size, R, t, params, image,
                                depth, use_depth, trunc, float(cfg.color_max_weight), changed)

    return _run_on_candidates(color_layer, cand, run)
