"""Sparse voxel mapping: TSDF/occupancy/color fusion, incremental ESDF, meshing and queries."""

from .errors import (
    AllocationError,
    ConfigurationError,
    DatasetError,
    OracleError,
    PoseError,
    SnapshotError,
    VoxmapError,
)
from .esdf import EsdfConfig, layer_distances, new_esdf_layer, update_esdf
from .integrate import IntegratorConfig, integrate_color, integrate_depth
from .layer import COLOR, ESDF, OCCUPANCY, TSDF, Layer, LayerCake
from .mapper import Mapper, MapperConfig
from .mesh import MeshLayer, mesh_layer, update_mesh
from .query import benchmark_queries, query_batch
from .sensor import CameraIntrinsics, LidarIntrinsics, Pose, blocks_in_view, project

__version__ = "0.1.0"

__all__ = [
    "AllocationError", "ConfigurationError", "DatasetError", "OracleError", "PoseError", "SnapshotError",
    "VoxmapError", "EsdfConfig", "layer_distances", "new_esdf_layer", "update_esdf", "IntegratorConfig",
    "integrate_color", "integrate_depth", "COLOR", "ESDF", "OCCUPANCY", "TSDF", "Layer", "LayerCake", "Mapper",
    "MapperConfig", "MeshLayer", "mesh_layer", "update_mesh", "benchmark_queries", "query_batch",
    "CameraIntrinsics", "LidarIntrinsics", "Pose", "blocks_in_view", "project",
]
