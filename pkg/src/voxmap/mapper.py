"""Frame-by-frame mapping pipeline used by the CLI and the benchmarks."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .esdf import EsdfConfig, new_esdf_layer, update_esdf
from .integrate import IntegratorConfig, integrate_color, integrate_depth
from .layer import COLOR, OCCUPANCY, TSDF, LayerCake, sort_indices
from .mesh import DEFAULT_MIN_WEIGHT, MeshLayer, update_mesh
from .sensor import LidarIntrinsics


@dataclass
class MapperConfig:
    voxel_size: float = 0.05
    layer: str = "tsdf"
    color: bool = False
    update_every: int = 4
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    esdf: EsdfConfig = field(default_factory=EsdfConfig)
    mesh_min_weight: float = DEFAULT_MIN_WEIGHT

    def check(self):
        if self.layer not in ("tsdf", "occupancy"):
            raise ConfigurationError(f"unknown layer {self.layer!r}; use tsdf or occupancy")
        if not self.voxel_size > 0:
            raise ConfigurationError("voxel size must be positive")
        if self.update_every < 1:
            raise ConfigurationError("update_every must be at least 1")
        if self.color and self.layer != "tsdf":
            raise ConfigurationError("color fusion needs the tsdf layer")
        self.integrator.check()
        self.esdf.check(self.voxel_size)
        return self


def _ms(t0):
    return (time.perf_counter() - t0) * 1e3


class Mapper:
    """Integrates frames every call and refreshes ESDF and mesh every ``update_every`` frames.

    The mesh is only built for the TSDF layer.
    """

    def __init__(self, cfg: MapperConfig):
        self.cfg = cfg.check()
        vs = cfg.voxel_size
        self.cake = LayerCake(vs)
        kind = TSDF if cfg.layer == "tsdf" else OCCUPANCY
        self.source = self.cake.add(cfg.layer, kind)
        self.source.params["truncation"] = cfg.integrator.truncation_for(vs)
        self.color = self.cake.add("color", COLOR) if cfg.color else None
        self.esdf = new_esdf_layer(vs, cfg.esdf)
        self.cake.layers["esdf"] = self.esdf
        self.mesh = MeshLayer(vs) if kind is TSDF else None
        self._pending_esdf = []
        self._pending_mesh = []
        self.frames = 0
        self.timings = []

    def integrate(self, depth, pose, sensor, color=None) -> dict:
        """Fuse one frame; returns its timing row (ms, None for stages that did not run)."""
        row = {"frame": self.frames, "tsdf_ms": None, "color_ms": None, "esdf_ms": None, "mesh_ms": None}
        t0 = time.perf_counter()
        changed = integrate_depth(self.source, depth, pose, sensor, self.cfg.integrator)
        row["tsdf_ms"] = _ms(t0)
        if self.color is not None:
            if color is None or isinstance(sensor, LidarIntrinsics):
                raise ConfigurationError("color fusion needs a color image from a camera")
            t0 = time.perf_counter()
            recolored = integrate_color(self.color, color, pose, sensor, self.source, self.cfg.integrator,
                                        depth=depth)
            row["color_ms"] = _ms(t0)
            if recolored.shape[0]:
                self._pending_mesh.append(recolored)
        if changed.shape[0]:
            self._pending_esdf.append(changed)
            self._pending_mesh.append(changed)
        self.frames += 1
        if self.frames % self.cfg.update_every == 0:
            self._refresh(row)
        self.timings.append(row)
        return row

    def _refresh(self, row):
        if self._pending_esdf:
            blocks = sort_indices(np.concatenate(self._pending_esdf))
            self._pending_esdf = []
            t0 = time.perf_counter()
            update_esdf(self.esdf, self.source, blocks, self.cfg.esdf)
            row["esdf_ms"] = _ms(t0)
        if self.mesh is not None and self._pending_mesh:
            blocks = sort_indices(np.concatenate(self._pending_mesh))
            t0 = time.perf_counter()
            update_mesh(self.mesh, self.source, blocks, self.cfg.mesh_min_weight, self.color)
            row["mesh_ms"] = _ms(t0)
        self._pending_mesh = []

    def finish(self):
        """Process any frames left since the last periodic refresh."""
        if self._pending_esdf or self._pending_mesh:
            row = self.timings[-1] if self.timings else {"frame": -1}
            extra = {"esdf_ms": None, "mesh_ms": None}
            self._refresh(extra)
            for k, v in extra.items():
                if v is not None:
                    row[k] = (row.get(k) or 0.0) + v
        return self

    def run(self, dataset, progress=None):
        for frame in dataset:
            self.integrate(frame.depth, frame.pose, dataset.intrinsics, frame.color if self.color else None)
            if progress is not None:
                progress(frame.index, len(dataset))
        return self.finish()
