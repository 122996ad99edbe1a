"""Brute-force reference distances and error statistics.

Everything here is deliberately simple and independent of the incremental
ESDF code so it can serve as ground truth in tests and evaluations.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import OracleError

MAX_ORACLE_VOXELS = 1_000_000


def brute_force_esdf(sites, domain, chunk=4096) -> np.ndarray:
    """Exact squared distance (voxel units) from each domain voxel to its nearest site.

    ``sites`` and ``domain`` are (S, 3) and (N, 3) integer voxel coordinates.
    Runs in O(N * S).
    """
    sites = np.asarray(sites, dtype=np.int64).reshape(-1, 3)
    domain = np.asarray(domain, dtype=np.int64).reshape(-1, 3)
    if sites.shape[0] == 0:
        raise OracleError("brute-force ESDF needs at least one site")
    if domain.shape[0] > MAX_ORACLE_VOXELS:
        raise OracleError(f"domain of {domain.shape[0]} voxels exceeds the {MAX_ORACLE_VOXELS} voxel guard")
    out = np.empty(domain.shape[0], np.int64)
    for i in range(0, domain.shape[0], chunk):
        d = domain[i : i + chunk, None, :] - sites[None, :, :]
        out[i : i + chunk] = np.einsum("nsk,nsk->ns", d, d).min(axis=1)
    return out


@dataclass
class ErrorStats:
    median_abs: float
    mean_abs: float
    p95_abs: float
    max_abs: float
    rms_abs: float
    count: int

    @classmethod
    def from_errors(cls, errors):
        e = np.abs(np.asarray(errors, dtype=np.float64).reshape(-1))
        if e.size == 0:
            raise OracleError("no samples to aggregate")
        return cls(
            median_abs=float(np.median(e)),
            mean_abs=float(e.mean()),
            p95_abs=float(np.percentile(e, 95)),
            max_abs=float(e.max()),
            rms_abs=float(np.sqrt(np.mean(e * e))),
            count=int(e.size),
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _esdf_voxels(esdf):
    """Centers and signed distances of observed, unsaturated voxels, read straight from the fields."""
    n = esdf.num_blocks
    max_sq = int(esdf.params["max_squared_distance"])
    cap = float(esdf.params.get("interior_cap_voxels", 4.0))
    sqd = esdf.data["squared_distance"][:n].reshape(-1).astype(np.float64)
    inside = esdf.data["is_inside"][:n].reshape(-1).astype(bool)
    keep = esdf.data["observed"][:n].reshape(-1).astype(bool) & (sqd <= max_sq)
    mag = np.sqrt(sqd)
    keep &= ~(inside & (mag > cap))
    lin = np.arange(512)
    local = np.stack([lin % 8, (lin // 8) % 8, lin // 64], axis=1)
    vox = (esdf.coords[:n, None, :] * 8 + local[None]).reshape(-1, 3)
    centers = (vox[keep] + 0.5) * esdf.voxel_size
    return centers, np.where(inside[keep], -mag[keep], mag[keep]) * esdf.voxel_size


def esdf_error(esdf, ground_truth) -> ErrorStats:
    """Voxel-wise |ESDF - truth| over observed, non-saturated voxels.

    ``ground_truth`` maps (N, 3) metric points to signed distances, e.g. a
    scene's ``sdf`` method.
    """
    centers, dist = _esdf_voxels(esdf)
    if centers.shape[0] == 0:
        raise OracleError("ESDF has no observed, unsaturated voxels to compare")
    truth = np.asarray(ground_truth(centers), dtype=np.float64)
    return ErrorStats.from_errors(dist - truth)


def surface_error(mesh, ground_truth) -> ErrorStats:
    """|truth(v)| at every mesh vertex, i.e. the vertex distance to the true surface."""
    verts = mesh.combined()[0] if hasattr(mesh, "combined") else np.asarray(mesh)
    if len(verts) == 0:
        raise OracleError("mesh is empty")
    return ErrorStats.from_errors(ground_truth(np.asarray(verts, dtype=np.float64)))
