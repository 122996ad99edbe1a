"""Per-block marching-cubes meshing of a TSDF layer.

The cubes of block ``g`` have their minimum corner at the block's own voxel
centers; their far corners read the first voxel layer of the +x/+y/+z
neighbours (including edge and corner neighbours).  A cube is skipped when any
corner is missing or has weight below ``min_weight``.  Vertices are welded per
block on lattice edges.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba as nb
import numpy as np

from . import _hash
from ._mc_tables import CORNERS, EDGE_AXIS, EDGE_CORNERS, TRI_COUNT, TRI_TABLE
from .errors import ConfigurationError
from .layer import COLOR, TSDF, Layer, position_to_indices, require_same_voxel_size, sort_indices

DEFAULT_MIN_WEIGHT = 1e-4
_UPPER_OFFSETS = np.array([(i & 1, (i >> 1) & 1, (i >> 2) & 1) for i in range(8)], np.int64)


@dataclass
class MeshBlock:
    vertices: np.ndarray
    normals: np.ndarray
    triangles: np.ndarray
    colors: np.ndarray | None = None


@dataclass
class MeshLayer:
    """Mesh blocks keyed by block index; only non-empty blocks are stored."""

    voxel_size: float
    blocks: dict = field(default_factory=dict)

    def indices(self):
        return sort_indices(list(self.blocks.keys())) if self.blocks else np.empty((0, 3), np.int64)

    def combined(self):
        """Concatenate blocks in index order: (vertices, normals, colors or None, triangles)."""
        verts, norms, cols, tris = [], [], [], []
        base = 0
        has_color = any(b.colors is not None for b in self.blocks.values())
        for g in self.indices():
            b = self.blocks[tuple(int(v) for v in g)]
            verts.append(b.vertices)
            norms.append(b.normals)
            if has_color:
                cols.append(b.colors if b.colors is not None else np.zeros((len(b.vertices), 3), np.uint8))
            tris.append(b.triangles + base)
            base += len(b.vertices)
        if not verts:
            z = np.zeros((0, 3), np.float32)
            return z, z.copy(), None, np.zeros((0, 3), np.int32)
        return (
            np.concatenate(verts),
            np.concatenate(norms),
            np.concatenate(cols) if has_color else None,
            np.concatenate(tris).astype(np.int32),
        )


@nb.njit(cache=True)
def _gather(dist, wgt, coords, s, keys, vals, min_w, lat_d, lat_ok):
    """Fill the 9x9x9 corner lattice of block ``s`` from itself and its upper neighbours."""
    gx, gy, gz = coords[s, 0], coords[s, 1], coords[s, 2]
    for o in range(8):
        ox = o & 1
        oy = (o >> 1) & 1
        oz = (o >> 2) & 1
        ns = s if o == 0 else _hash.lookup(keys, vals, _hash.pack(gx + ox, gy + oy, gz + oz))
        for k in range(8 if oz == 0 else 1):
            for j in range(8 if oy == 0 else 1):
                for i in range(8 if ox == 0 else 1):
                    li = i + 8 * ox
                    lj = j + 8 * oy
                    lk = k + 8 * oz
                    if ns < 0:
                        lat_ok[li, lj, lk] = False
                        continue
                    l = i + 8 * j + 64 * k
                    w = wgt[ns, l]
                    lat_ok[li, lj, lk] = w >= min_w
                    lat_d[li, lj, lk] = dist[ns, l]


@nb.njit(cache=True)
def _mesh_blocks(dist, wgt, coords, targets, keys, vals, vs, min_w, tri_table, tri_count, edge_corners,
                 edge_axis, corners):
    m = targets.shape[0]
    max_v = 9 * 9 * 9 * 3
    max_t = 512 * 5
    verts = np.empty((m, max_v, 3), np.float64)
    norms = np.zeros((m, max_v, 3), np.float64)
    tris = np.empty((m, max_t, 3), np.int64)
    nv = np.zeros(m, np.int64)
    nt = np.zeros(m, np.int64)
    lat_d = np.empty((9, 9, 9), np.float32)
    lat_ok = np.empty((9, 9, 9), np.bool_)
    vmap = np.empty(max_v, np.int64)
    edge_vid = np.empty(12, np.int64)
    for b in range(m):
        s = targets[b]
        _gather(dist, wgt, coords, s, keys, vals, min_w, lat_d, lat_ok)
        vmap[:] = -1
        ox = coords[s, 0] * 8
        oy = coords[s, 1] * 8
        oz = coords[s, 2] * 8
        for k in range(8):
            for j in range(8):
                for i in range(8):
                    ok = True
                    case = 0
                    for c in range(8):
                        ci = i + corners[c, 0]
                        cj = j + corners[c, 1]
                        ck = k + corners[c, 2]
                        if not lat_ok[ci, cj, ck]:
                            ok = False
                            break
                        if lat_d[ci, cj, ck] < 0.0:
                            case |= 1 << c
                    if not ok or tri_count[case] == 0:
                        continue
                    for e in range(12):
                        edge_vid[e] = -1
                    for q in range(3 * tri_count[case]):
                        e = tri_table[case, q]
                        if edge_vid[e] >= 0:
                            continue
                        c0 = edge_corners[e, 0]
                        c1 = edge_corners[e, 1]
                        ax = edge_axis[e]
                        ai = i + corners[c0, 0]
                        aj = j + corners[c0, 1]
                        ak = k + corners[c0, 2]
                        key = ((ak * 9 + aj) * 9 + ai) * 3 + ax
                        v = vmap[key]
                        if v < 0:
                            d0 = np.float64(lat_d[ai, aj, ak])
                            d1 = np.float64(lat_d[i + corners[c1, 0], j + corners[c1, 1], k + corners[c1, 2]])
                            den = d0 - d1
                            t = d0 / den if den != 0.0 else 0.5
                            v = nv[b]
                            nv[b] += 1
                            verts[b, v, 0] = (ox + ai + 0.5) * vs
                            verts[b, v, 1] = (oy + aj + 0.5) * vs
                            verts[b, v, 2] = (oz + ak + 0.5) * vs
                            verts[b, v, ax] += t * vs
                            vmap[key] = v
                        edge_vid[e] = v
                    for q in range(tri_count[case]):
                        a = edge_vid[tri_table[case, 3 * q]]
                        bb = edge_vid[tri_table[case, 3 * q + 1]]
                        c = edge_vid[tri_table[case, 3 * q + 2]]
                        tt = nt[b]
                        tris[b, tt, 0] = a
                        tris[b, tt, 1] = bb
                        tris[b, tt, 2] = c
                        nt[b] += 1
                        ux = verts[b, bb, 0] - verts[b, a, 0]
                        uy = verts[b, bb, 1] - verts[b, a, 1]
                        uz = verts[b, bb, 2] - verts[b, a, 2]
                        wx = verts[b, c, 0] - verts[b, a, 0]
                        wy = verts[b, c, 1] - verts[b, a, 1]
                        wz = verts[b, c, 2] - verts[b, a, 2]
                        nx = uy * wz - uz * wy
                        ny = uz * wx - ux * wz
                        nz = ux * wy - uy * wx
                        for p in (a, bb, c):
                            norms[b, p, 0] += nx
                            norms[b, p, 1] += ny
                            norms[b, p, 2] += nz
                    # fall back to the crossing edge direction for degenerate fans
                    for e in range(12):
                        v = edge_vid[e]
                        if v < 0:
                            continue
                        nn = norms[b, v, 0] ** 2 + norms[b, v, 1] ** 2 + norms[b, v, 2] ** 2
                        if nn == 0.0:
                            c0 = edge_corners[e, 0]
                            inside0 = (case >> c0) & 1
                            norms[b, v, edge_axis[e]] = 1e-30 if inside0 else -1e-30
        for v in range(nv[b]):
            nn = np.sqrt(norms[b, v, 0] ** 2 + norms[b, v, 1] ** 2 + norms[b, v, 2] ** 2)
            for a in range(3):
                norms[b, v, a] /= nn
    return verts, norms, tris, nv, nt


def _color_lookup(color_layer: Layer, vertices):
    blk, vox = position_to_indices(vertices, color_layer.voxel_size)
    slots = color_layer.slots(blk)
    out = np.zeros((len(vertices), 3), np.uint8)
    ok = slots >= 0
    lin = vox[:, 0] + 8 * vox[:, 1] + 64 * vox[:, 2]
    out[ok] = color_layer.data["color"][slots[ok], lin[ok]]
    return out


def mesh_blocks(tsdf: Layer, indices, min_weight=DEFAULT_MIN_WEIGHT, color_layer: Layer | None = None) -> dict:
    """Mesh the given blocks; returns {index tuple: MeshBlock} for non-empty results."""
    if tsdf.voxel_type is not TSDF:
        raise ConfigurationError("meshing needs a TSDF layer")
    if color_layer is not None:
        if color_layer.voxel_type is not COLOR:
            raise ConfigurationError("color_layer must be a color layer")
        require_same_voxel_size(tsdf, color_layer)
    idx = sort_indices(indices)
    slots = tsdf.slots(idx)
    idx = idx[slots >= 0]
    slots = slots[slots >= 0]
    out = {}
    if slots.size == 0:
        return out
    keys, vals = tsdf.hash_tables
    chunk = 128
    for c0 in range(0, slots.size, chunk):
        verts, norms, tris, nv, nt = _mesh_blocks(
            tsdf.data["distance"], tsdf.data["weight"], tsdf.coords, slots[c0 : c0 + chunk], keys, vals,
            tsdf.voxel_size, float(min_weight), TRI_TABLE, TRI_COUNT, EDGE_CORNERS, EDGE_AXIS, CORNERS,
        )
        for b, g in enumerate(idx[c0 : c0 + chunk]):
            if nt[b] == 0:
                continue
            v = verts[b, : nv[b]].astype(np.float32)
            mb = MeshBlock(v, norms[b, : nv[b]].astype(np.float32), tris[b, : nt[b]].astype(np.int32))
            if color_layer is not None:
                mb.colors = _color_lookup(color_layer, v.astype(np.float64))
            out[tuple(int(c) for c in g)] = mb
    return out


def mesh_block(tsdf: Layer, index, min_weight=DEFAULT_MIN_WEIGHT, color_layer: Layer | None = None) -> MeshBlock:
    """Mesh one allocated block; an empty MeshBlock when it has no surface."""
    if tsdf.slot(index) < 0:
        raise ConfigurationError(f"block {tuple(index)} is not allocated")
    out = mesh_blocks(tsdf, [index], min_weight, color_layer)
    if out:
        return next(iter(out.values()))
    z = np.zeros((0, 3), np.float32)
    return MeshBlock(z, z.copy(), np.zeros((0, 3), np.int32), None if color_layer is None else np.zeros((0, 3), np.uint8))


def remesh_set(tsdf: Layer, updated_blocks) -> np.ndarray:
    """Updated blocks plus every block whose cubes read one of them."""
    up = sort_indices(updated_blocks)
    if up.shape[0] == 0:
        return up
    cand = sort_indices((up[:, None, :] - _UPPER_OFFSETS[None, :, :]).reshape(-1, 3))
    return cand[tsdf.slots(cand) >= 0]


def update_mesh(mesh: MeshLayer, tsdf: Layer, updated_blocks, min_weight=DEFAULT_MIN_WEIGHT,
                color_layer: Layer | None = None) -> np.ndarray:
    """Re-mesh the blocks affected by ``updated_blocks``; returns their indices."""
    if abs(mesh.voxel_size - tsdf.voxel_size) > 1e-12:
        raise ConfigurationError("mesh and TSDF layers have different voxel sizes")
    targets = remesh_set(tsdf, updated_blocks)
    fresh = mesh_blocks(tsdf, targets, min_weight, color_layer)
    for g in targets:
        key = tuple(int(c) for c in g)
        if key in fresh:
            mesh.blocks[key] = fresh[key]
        else:
            mesh.blocks.pop(key, None)
    return targets


def mesh_layer(tsdf: Layer, min_weight=DEFAULT_MIN_WEIGHT, color_layer: Layer | None = None) -> MeshLayer:
    """Mesh every allocated block of a TSDF layer."""
    mesh = MeshLayer(tsdf.voxel_size)
    mesh.blocks.update(mesh_blocks(tsdf, tsdf.indices(), min_weight, color_layer))
    return mesh
