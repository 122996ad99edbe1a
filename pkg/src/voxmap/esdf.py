"""Incremental Euclidean signed distance field over sparse voxel blocks.

Each ESDF voxel stores the integer offset to its nearest *site* voxel and the
squared length of that offset.  Sites are surface voxels: near-zero TSDF
voxels, or occupied voxels with a free face neighbour.  An update runs four
stages over the blocks touched since the previous update:

1. ``mark_sites``: refresh observed/site/inside flags from the source layer.
2. ``clear_invalid``: reset voxels whose parent stopped being a site.
3. ``lower_esdf``: alternate in-block directional sweeps and border exchange
   between face-adjacent blocks until no voxel lowers.
4. ``refine_exact`` (``EsdfConfig.exact``): bounded exact nearest-site search
   seeded by the swept field, with a canonical tie-break on the parent.

Sweeping alone converges to a field that is almost always exact, but its rare
errors depend on the update schedule.  The refinement stage makes the field a
pure function of the site set, so incremental and from-scratch maps agree bit
for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _esdf_kernels as K
from .errors import ConfigurationError
from .layer import ESDF, OCCUPANCY, TSDF, Layer, MAX_SQUARED_DISTANCE, require_same_voxel_size, sort_indices


# TSDF values are stored as float32; the slack keeps voxels lying exactly on the
# threshold (e.g. half a voxel from a face-aligned wall) from rounding out of the band.
SITE_SLACK = 1.0 + 1e-6


@dataclass
class EsdfConfig:
    """ESDF parameters; distances in meters.

    ``site_threshold`` defaults to one voxel.  ``interior_cap_voxels`` limits
    how deep inside obstacles negative distances are reported.
    """

    max_distance: float = 2.0
    site_threshold: float | None = None
    occupied_threshold: float = 0.0
    interior_cap_voxels: float = 4.0
    exact: bool = True

    def site_threshold_for(self, voxel_size):
        return voxel_size if self.site_threshold is None else float(self.site_threshold)

    def max_squared_distance(self, voxel_size) -> int:
        r = self.max_distance / voxel_size
        return int(math.floor(r * r + 1e-9))

    def check(self, voxel_size):
        if not self.max_distance > 0:
            raise ConfigurationError("max_distance must be positive")
        if not self.site_threshold_for(voxel_size) > 0:
            raise ConfigurationError("site_threshold must be positive")
        if self.max_squared_distance(voxel_size) < 1:
            raise ConfigurationError("max_distance must be at least one voxel")
        if self.interior_cap_voxels < 0:
            raise ConfigurationError("interior_cap_voxels must be non-negative")
        return self


@dataclass
class EsdfUpdateState:
    """Per-slot block masks collected during one ESDF update."""

    to_update: np.ndarray
    to_clear: np.ndarray
    cleared: np.ndarray
    changed: np.ndarray
    added_sites: np.ndarray
    lowered: np.ndarray | None = None
    iterations: int = 0

    @classmethod
    def empty(cls, esdf: Layer):
        n = esdf.num_blocks
        cap = esdf.data["is_site"].shape[0]
        return cls(
            to_update=np.zeros(n, np.bool_),
            to_clear=np.zeros(n, np.bool_),
            cleared=np.zeros(n, np.bool_),
            changed=np.zeros(n, np.bool_),
            added_sites=np.zeros((cap, 512), np.bool_),
        )

    def indices(self, esdf: Layer, mask) -> np.ndarray:
        return sort_indices(esdf.coords[mask[: esdf.num_blocks]])


def _kernel_arrays(esdf: Layer):
    d = esdf.data
    return d["observed"], d["is_site"], d["is_inside"], d["squared_distance"], d["parent_offset"]


def _bind_params(esdf: Layer, cfg: EsdfConfig):
    params = {
        "max_squared_distance": cfg.max_squared_distance(esdf.voxel_size),
        "interior_cap_voxels": float(cfg.interior_cap_voxels),
    }
    if esdf.num_blocks and esdf.params and any(esdf.params.get(k) != v for k, v in params.items()):
        raise ConfigurationError(f"ESDF layer was built with {esdf.params}, got {params}")
    esdf.params.update(params)
    return params["max_squared_distance"]


def clear_radius_blocks(max_sq: int) -> int:
    """Chebyshev block radius that contains every voxel within sqrt(max_sq) voxels."""
    return int(math.ceil(math.isqrt(max_sq) / 8.0))


def mark_sites(esdf: Layer, source: Layer, updated_blocks, cfg: EsdfConfig) -> EsdfUpdateState:
    """Refresh site/observed/inside flags for ``updated_blocks`` of the source layer.

    New sites get distance zero; lost sites are reset to the maximum and their
    blocks are queued for invalidation.  Allocates ESDF blocks as needed.
    """
    if esdf.voxel_type is not ESDF:
        raise ConfigurationError("mark_sites needs an ESDF layer")
    if source.voxel_type not in (TSDF, OCCUPANCY):
        raise ConfigurationError(f"cannot build an ESDF from a {source.voxel_type.name} layer")
    require_same_voxel_size(esdf, source)
    cfg.check(esdf.voxel_size)
    blocks = sort_indices(updated_blocks)
    if source.voxel_type is OCCUPANCY and blocks.shape[0]:
        # a voxel's site status also depends on its face neighbours
        faces = np.array([[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]])
        blocks = sort_indices(np.concatenate([blocks, (blocks[:, None, :] + faces).reshape(-1, 3)]))
    sslots = source.slots(blocks)
    keep = sslots >= 0
    blocks = np.ascontiguousarray(blocks[keep])
    sslots = sslots[keep]
    eslots, new = esdf.allocate_many(blocks)
    state = EsdfUpdateState.empty(esdf)
    state.to_update[eslots[new]] = True
    state.changed[eslots[new]] = True
    obs, site, inside, sqd, off = _kernel_arrays(esdf)
    if source.voxel_type is TSDF:
        K.mark_from_tsdf(obs, site, inside, sqd, off, state.added_sites, eslots, source.data["distance"],
                         source.data["weight"], sslots, float(cfg.site_threshold_for(esdf.voxel_size)) * SITE_SLACK,
                         state.changed, state.to_update, state.to_clear)
    else:
        snbr = source.neighbor_table()[sslots] if sslots.size else np.empty((0, 6), np.int64)
        K.mark_from_occupancy(obs, site, inside, sqd, off, state.added_sites, eslots, source.data["log_odds"],
                              sslots, np.ascontiguousarray(snbr), float(cfg.occupied_threshold),
                              state.changed, state.to_update, state.to_clear)
    return state


def clear_invalid(esdf: Layer, state: EsdfUpdateState, cfg: EsdfConfig) -> np.ndarray:
    """Reset voxels near cleared sites whose parent is no longer a site.

    Only blocks within ``max_distance`` (Chebyshev, in blocks) of a block that
    lost a site are scanned. Returns the mask of blocks that had voxels reset.
    """
    max_sq = _bind_params(esdf, cfg)
    if not state.to_clear.any():
        return state.cleared
    n = esdf.num_blocks
    region = K.near_blocks(esdf.coords, n, state.to_clear, clear_radius_blocks(max_sq))
    keys, vals = esdf.hash_tables
    _, site, _, sqd, off = _kernel_arrays(esdf)
    K.clear_children(sqd, off, site, esdf.coords, np.nonzero(region)[0], keys, vals, state.cleared)
    state.changed |= state.cleared
    return state.cleared


def lower_esdf(esdf: Layer, state: EsdfUpdateState, cfg: EsdfConfig) -> int:
    """Propagate parents from dirty blocks until convergence; returns iterations."""
    max_sq = _bind_params(esdf, cfg)
    dirty = state.to_update | state.cleared
    if not dirty.any():
        return 0
    _, _, _, sqd, off = _kernel_arrays(esdf)
    lowered = np.zeros_like(dirty)
    state.iterations = K.lower(sqd, off, esdf.neighbor_table(), dirty, max_sq, lowered)
    state.lowered = lowered
    state.changed |= lowered
    return state.iterations


def refine_exact(esdf: Layer, state: EsdfUpdateState, cfg: EsdfConfig):
    """Make every voxel whose exact answer may have changed exact and canonical.

    Blocks touched by invalidation or lowering are searched against all sites.
    Remaining blocks within range of a newly added site only need to compare
    their current (already exact) parent with the new sites.
    """
    max_sq = _bind_params(esdf, cfg)
    n = esdf.num_blocks
    full = state.to_update | state.cleared
    if state.lowered is not None:
        full = full | state.lowered
    site = esdf.data["is_site"]
    sqd = esdf.data["squared_distance"]
    off = esdf.data["parent_offset"]
    coords = esdf.coords
    if full.any():
        site_slots = np.nonzero(site[:n].any(axis=1))[0]
        index = K.build_site_index(site, coords, site_slots)
        K.refine_exact(sqd, off, coords, np.nonzero(full)[0], max_sq, *index, state.changed)
    added_blocks = state.added_sites[:n].any(axis=1)
    if added_blocks.any():
        near = K.near_blocks(coords, n, added_blocks, clear_radius_blocks(max_sq)) & ~full
        if near.any():
            index = K.build_site_index(state.added_sites, coords, np.nonzero(added_blocks)[0])
            K.refine_exact(sqd, off, coords, np.nonzero(near)[0], max_sq, *index, state.changed)


def update_esdf(esdf: Layer, source: Layer, updated_blocks, cfg: EsdfConfig | None = None,
                return_state=False):
    """Bring the ESDF up to date with ``updated_blocks`` of the source layer.

    Returns the sorted indices of ESDF blocks in which any voxel changed.
    """
    cfg = cfg or EsdfConfig()
    state = mark_sites(esdf, source, updated_blocks, cfg)
    clear_invalid(esdf, state, cfg)
    lower_esdf(esdf, state, cfg)
    if cfg.exact:
        refine_exact(esdf, state, cfg)
    changed = state.indices(esdf, state.changed)
    return (changed, state) if return_state else changed


def new_esdf_layer(voxel_size, cfg: EsdfConfig | None = None, **kwargs) -> Layer:
    cfg = (cfg or EsdfConfig()).check(voxel_size)
    layer = Layer(ESDF, voxel_size, **kwargs)
    _bind_params(layer, cfg)
    return layer


# ---------------------------------------------------------------------------
# Reading distances


def signed_distance_from_fields(sqd, inside, voxel_size, max_sq, interior_cap):
    """Signed metric distance and saturation flag for arrays of voxel fields.

    Free voxels with no site in range read as +max_distance; interior voxels
    are capped at ``interior_cap`` voxels. Saturated voxels are those clamped
    by either rule.
    """
    sqd = np.asarray(sqd)
    inside = np.asarray(inside).astype(bool)
    none = sqd == MAX_SQUARED_DISTANCE
    mag = np.sqrt(np.where(none, max_sq, sqd).astype(np.float64))
    over_cap = inside & (mag > interior_cap)
    mag = np.where(inside, np.minimum(mag, interior_cap), mag)
    dist = np.where(inside, -mag, mag) * voxel_size
    saturated = (none & ~inside) | over_cap | (none & inside)
    return dist, saturated


def layer_distances(esdf: Layer, observed_only=True):
    """Flattened (centers, signed distance, saturated, slot, linear) of the layer's voxels."""
    from .layer import voxel_center

    n = esdf.num_blocks
    sqd = esdf.field("squared_distance").reshape(-1)
    inside = esdf.field("is_inside").reshape(-1)
    obs = esdf.field("observed").reshape(-1).astype(bool)
    slot = np.repeat(np.arange(n), 512)
    lin = np.tile(np.arange(512), n)
    sel = obs if observed_only else np.ones_like(obs)
    vox = np.stack([lin & 7, (lin >> 3) & 7, lin >> 6], axis=1)
    centers = voxel_center(esdf.coords[slot[sel]], vox[sel], esdf.voxel_size)
    max_sq = int(esdf.params.get("max_squared_distance", EsdfConfig().max_squared_distance(esdf.voxel_size)))
    cap = float(esdf.params.get("interior_cap_voxels", 4.0))
    dist, sat = signed_distance_from_fields(sqd[sel], inside[sel], esdf.voxel_size, max_sq, cap)
    return centers, dist, sat, slot[sel], lin[sel]
