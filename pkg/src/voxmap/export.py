"""Artifact writers: PLY meshes, ESDF slices and per-frame timing tables."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigurationError
from .esdf import layer_distances
from .layer import ESDF, Layer

TIMING_COLUMNS = ("frame", "tsdf_ms", "color_ms", "esdf_ms", "mesh_ms")


# ---------------------------------------------------------------------------
# PLY


def ply_bytes(vertices, triangles, normals=None, colors=None) -> bytes:
    """Binary little-endian PLY with float32 positions and int32 face lists."""
    v = np.asarray(vertices, np.float32).reshape(-1, 3)
    t = np.asarray(triangles, np.int32).reshape(-1, 3)
    fields = [("xyz", "<f4", (3,))]
    head = ["ply", "format binary_little_endian 1.0", "comment written by voxmap", f"element vertex {len(v)}",
            "property float x", "property float y", "property float z"]
    if normals is not None:
        fields.append(("n", "<f4", (3,)))
        head += ["property float nx", "property float ny", "property float nz"]
    if colors is not None:
        fields.append(("rgb", "u1", (3,)))
        head += ["property uchar red", "property uchar green", "property uchar blue"]
    head += [f"element face {len(t)}", "property list uchar int vertex_indices", "end_header"]
    vert = np.empty(len(v), np.dtype(fields))
    vert["xyz"] = v
    if normals is not None:
        vert["n"] = np.asarray(normals, np.float32).reshape(-1, 3)
    if colors is not None:
        vert["rgb"] = np.asarray(colors, np.uint8).reshape(-1, 3)
    face = np.empty(len(t), np.dtype([("k", "u1"), ("idx", "<i4", (3,))]))
    face["k"] = 3
    face["idx"] = t
    return ("\n".join(head) + "\n").encode("ascii") + vert.tobytes() + face.tobytes()


def write_ply(path, mesh):
    """Write a MeshLayer (blocks concatenated in index order)."""
    v, n, c, t = mesh.combined()
    Path(path).write_bytes(ply_bytes(v, t, n, c))


def read_ply(path):
    """Read a PLY written by :func:`ply_bytes`; returns (vertices, triangles, normals, colors)."""
    data = Path(path).read_bytes()
    end = data.index(b"end_header\n") + len(b"end_header\n")
    header = data[:end].decode("ascii").splitlines()
    n_vert = n_face = 0
    props = []
    for line in header:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n_vert = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            n_face = int(parts[2])
        elif parts[0] == "property" and parts[1] != "list":
            props.append(parts[2])
    has_n = "nx" in props
    has_c = "red" in props
    fields = [("xyz", "<f4", (3,))]
    if has_n:
        fields.append(("n", "<f4", (3,)))
    if has_c:
        fields.append(("rgb", "u1", (3,)))
    vdt = np.dtype(fields)
    vert = np.frombuffer(data, vdt, n_vert, end)
    face = np.frombuffer(data, np.dtype([("k", "u1"), ("idx", "<i4", (3,))]), n_face, end + n_vert * vdt.itemsize)
    return (vert["xyz"].copy(), face["idx"].copy(), vert["n"].copy() if has_n else None,
            vert["rgb"].copy() if has_c else None)


# ---------------------------------------------------------------------------
# ESDF slice


def esdf_slice(esdf: Layer, height=None, axis=2):
    """Observed voxels of the voxel plane containing ``height`` along ``axis``.

    Returns (grid, lo, centers, distances): ``grid`` holds signed distances
    over the bounding rectangle of allocated blocks with NaN for unknown,
    ``lo`` is the global voxel index of grid[0, 0] along the two free axes.
    """
    if esdf.voxel_type is not ESDF:
        raise ConfigurationError("slicing needs an ESDF layer")
    if esdf.num_blocks == 0:
        raise ConfigurationError("ESDF layer is empty")
    centers, dist, _, _, _ = layer_distances(esdf)
    vs = esdf.voxel_size
    if height is None:
        height = float(np.median(centers[:, axis])) if len(centers) else 0.0
    plane = int(np.floor(height / vs))
    vox = np.floor(centers / vs).astype(np.int64)
    sel = vox[:, axis] == plane
    a, b = [k for k in range(3) if k != axis]
    coords = esdf.indices()
    lo = np.array([coords[:, a].min(), coords[:, b].min()]) * 8
    hi = (np.array([coords[:, a].max(), coords[:, b].max()]) + 1) * 8
    grid = np.full((hi[1] - lo[1], hi[0] - lo[0]), np.nan)
    grid[vox[sel, b] - lo[1], vox[sel, a] - lo[0]] = dist[sel]
    order = np.lexsort((vox[sel, a], vox[sel, b]))
    return grid, lo, centers[sel][order], dist[sel][order]


def slice_to_png16(grid, max_distance):
    """Unknown -> 0; known d -> 1 + round((clamp(d) + D) / (2D) * 65534)."""
    D = float(max_distance)
    out = np.zeros(grid.shape, np.uint16)
    known = np.isfinite(grid)
    d = np.clip(grid[known], -D, D)
    out[known] = 1 + np.rint((d + D) / (2 * D) * 65534).astype(np.uint16)
    return out


def write_esdf_slice(csv_path, png_path, esdf: Layer, height=None, axis=2):
    grid, _, centers, dist = esdf_slice(esdf, height, axis)
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["x", "y", "z", "distance"])
        for c, d in zip(centers, dist):
            w.writerow([f"{c[0]:.6f}", f"{c[1]:.6f}", f"{c[2]:.6f}", f"{d:.6f}"])
    if png_path is not None:
        max_sq = int(esdf.params.get("max_squared_distance", 1))
        D = np.sqrt(max_sq) * esdf.voxel_size
        # image rows run top-down, so flip to put +y up
        Image.fromarray(slice_to_png16(grid, D)[::-1]).save(png_path)


# ---------------------------------------------------------------------------
# Timing


def format_ms(v):
    return "" if v is None else f"{v:.3f}"


def write_timing_csv(path, rows):
    """``rows`` are dicts keyed by TIMING_COLUMNS; missing stages are left blank."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TIMING_COLUMNS)
        for r in rows:
            w.writerow([r["frame"]] + [format_ms(r.get(c)) for c in TIMING_COLUMNS[1:]])
