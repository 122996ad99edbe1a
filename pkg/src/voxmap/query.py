"""Batched distance and gradient queries against an ESDF layer."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numba as nb
import numpy as np

from . import _hash
from .errors import ConfigurationError
from .layer import ESDF, MAX_SQUARED_DISTANCE, Layer

TRILINEAR = 0
NEAREST = 1
_MAXSQ = MAX_SQUARED_DISTANCE
CACHE_BITS = 3
CACHE_MASK = (1 << CACHE_BITS) - 1
CACHE_SIZE = 1 << (3 * CACHE_BITS)


@dataclass
class QueryResult:
    distance: np.ndarray
    gradient: np.ndarray
    valid: np.ndarray


@nb.njit(cache=True, inline="always")
def _signed(sqd, inside, max_sq, cap):
    if sqd == _MAXSQ:
        m = math.sqrt(max_sq)
    else:
        m = math.sqrt(sqd)
    if inside:
        return -min(m, cap)
    return m


@nb.njit(cache=True)
def _query_kernel(pts, obs, ins, sqd, off, keys, vals, vs, max_sq, cap, mode, want_grad):
    n = pts.shape[0]
    dist = np.full(n, np.nan)
    grad = np.zeros((n, 3))
    valid = np.zeros(n, np.bool_)
    # direct-mapped block cache indexed by the low bits of the block coordinates
    ckey = np.full(CACHE_SIZE, -1, np.int64)
    cslot = np.empty(CACHE_SIZE, np.int64)
    cv = np.empty(8)
    u = np.empty(3)
    base = np.empty(3, np.int64)
    for q in range(n):
        if not (math.isfinite(pts[q, 0]) and math.isfinite(pts[q, 1]) and math.isfinite(pts[q, 2])):
            continue
        # nearest voxel (the one containing the point)
        nx = int(math.floor(pts[q, 0] / vs))
        ny = int(math.floor(pts[q, 1] / vs))
        nz = int(math.floor(pts[q, 2] / vs))
        done = False
        if mode == TRILINEAR:
            for a in range(3):
                x = pts[q, a] / vs - 0.5
                r = math.floor(x + 0.5)
                if abs(x - r) < 1e-9:
                    x = r
                base[a] = int(math.floor(x))
                u[a] = x - base[a]
            ok = True
            for c in range(8):
                gx = base[0] + (c & 1)
                gy = base[1] + ((c >> 1) & 1)
                gz = base[2] + (c >> 2)
                bx, by, bz = gx >> 3, gy >> 3, gz >> 3
                key = _hash.pack(bx, by, bz)
                h = (bx & CACHE_MASK) | ((by & CACHE_MASK) << CACHE_BITS) | ((bz & CACHE_MASK) << (2 * CACHE_BITS))
                if ckey[h] != key:
                    ckey[h] = key
                    cslot[h] = _hash.lookup(keys, vals, key)
                s = cslot[h]
                if s < 0:
                    ok = False
                    break
                l = (gx & 7) + 8 * (gy & 7) + 64 * (gz & 7)
                if not obs[s, l]:
                    ok = False
                    break
                cv[c] = _signed(sqd[s, l], ins[s, l], max_sq, cap)
            if ok:
                fx, fy, fz = u[0], u[1], u[2]
                val = 0.0
                g0 = 0.0
                g1 = 0.0
                g2 = 0.0
                for c in range(8):
                    wx = fx if (c & 1) else 1.0 - fx
                    wy = fy if ((c >> 1) & 1) else 1.0 - fy
                    wz = fz if (c >> 2) else 1.0 - fz
                    sx = 1.0 if (c & 1) else -1.0
                    sy = 1.0 if ((c >> 1) & 1) else -1.0
                    sz = 1.0 if (c >> 2) else -1.0
                    val += wx * wy * wz * cv[c]
                    g0 += sx * wy * wz * cv[c]
                    g1 += wx * sy * wz * cv[c]
                    g2 += wx * wy * sz * cv[c]
                dist[q] = val * vs
                valid[q] = True
                done = True
                if want_grad:
                    gn = math.sqrt(g0 * g0 + g1 * g1 + g2 * g2)
                    if gn > 1e-9:
                        grad[q, 0] = g0 / gn
                        grad[q, 1] = g1 / gn
                        grad[q, 2] = g2 / gn
                    else:
                        done = False
        if not done or (want_grad and valid[q] and grad[q, 0] == 0.0 and grad[q, 1] == 0.0 and grad[q, 2] == 0.0):
            bx, by, bz = nx >> 3, ny >> 3, nz >> 3
            key = _hash.pack(bx, by, bz)
            h = (bx & CACHE_MASK) | ((by & CACHE_MASK) << CACHE_BITS) | ((bz & CACHE_MASK) << (2 * CACHE_BITS))
            if ckey[h] != key:
                ckey[h] = key
                cslot[h] = _hash.lookup(keys, vals, key)
            s = cslot[h]
            if s < 0:
                continue
            l = (nx & 7) + 8 * (ny & 7) + 64 * (nz & 7)
            if not obs[s, l]:
                continue
            if not valid[q]:
                dist[q] = _signed(sqd[s, l], ins[s, l], max_sq, cap) * vs
                valid[q] = True
            if want_grad and sqd[s, l] != _MAXSQ and sqd[s, l] > 0:
                ox = off[s, l, 0]
                oy = off[s, l, 1]
                oz = off[s, l, 2]
                on = math.sqrt(ox * ox + oy * oy + oz * oz)
                sign = 1.0 if ins[s, l] else -1.0
                grad[q, 0] = sign * ox / on
                grad[q, 1] = sign * oy / on
                grad[q, 2] = sign * oz / on
    return dist, grad, valid


def query_batch(esdf: Layer, points, want_gradient=True, interpolation="trilinear") -> QueryResult:
    """Signed distance (meters) and unit gradient at arbitrary points.

    Trilinear mode interpolates the eight surrounding voxel centers and falls
    back to the containing voxel when any of them is unknown. Where the
    interpolated gradient vanishes, the direction away from the parent site
    is used. Unknown points get ``valid=False`` and NaN distance.
    """
    if esdf.voxel_type is not ESDF:
        raise ConfigurationError("queries need an ESDF layer")
    if interpolation not in ("trilinear", "nearest"):
        raise ConfigurationError(f"unknown interpolation {interpolation!r}")
    pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    keys, vals = esdf.hash_tables
    max_sq = int(esdf.params.get("max_squared_distance", 1))
    cap = float(esdf.params.get("interior_cap_voxels", 4.0))
    d, g, v = _query_kernel(
        pts, esdf.data["observed"], esdf.data["is_inside"], esdf.data["squared_distance"],
        esdf.data["parent_offset"], keys, vals, esdf.voxel_size, max_sq, cap,
        TRILINEAR if interpolation == "trilinear" else NEAREST, bool(want_gradient),
    )
    return QueryResult(d, g, v)


def sample_query_points(esdf: Layer, count, mode, seed=0, cluster_size=4096):
    """Query points for benchmarking.

    ``cor`` draws Gaussian clusters (sigma of two block edges) around random
    allocated blocks, emitted cluster by cluster with ``cluster_size`` points
    each; ``uncor`` draws uniformly over the bounding box of allocated blocks.
    """
    if mode not in ("cor", "uncor"):
        raise ConfigurationError(f"unknown query mode {mode!r}")
    rng = np.random.default_rng(seed)
    if count <= 0 or esdf.num_blocks == 0:
        return np.empty((0, 3))
    bs = esdf.block_size
    coords = esdf.indices()
    if mode == "uncor":
        lo = coords.min(axis=0) * bs
        hi = (coords.max(axis=0) + 1) * bs
        return rng.uniform(lo, hi, size=(count, 3))
    n_clusters = -(-count // cluster_size)
    centers = (coords[rng.integers(0, len(coords), n_clusters)] + 0.5) * bs
    pts = centers[:, None, :] + rng.normal(0.0, 2.0 * bs, size=(n_clusters, cluster_size, 3))
    return pts.reshape(-1, 3)[:count]


def benchmark_queries(esdf: Layer, count, mode="cor", seed=0, want_gradient=True, repeats=1) -> dict:
    """Time batched queries; returns a small report dict."""
    if esdf.num_blocks == 0:
        raise ConfigurationError("cannot benchmark queries on an empty map")
    pts = sample_query_points(esdf, count, mode, seed)
    if pts.shape[0] == 0:
        return {"mode": mode, "count": 0, "seconds": 0.0, "queries_per_second": 0.0, "valid_fraction": 0.0}
    query_batch(esdf, pts[:1], want_gradient)  # compile outside the timed region
    best = math.inf
    res = None
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        res = query_batch(esdf, pts, want_gradient)
        best = min(best, time.perf_counter() - t0)
    return {
        "mode": mode,
        "count": int(pts.shape[0]),
        "seconds": best,
        "queries_per_second": pts.shape[0] / best if best > 0 else math.inf,
        "valid_fraction": float(res.valid.mean()),
    }
