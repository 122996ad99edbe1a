"""Sparse block-hashed voxel layers.

A layer stores fixed-size 8x8x8 voxel blocks keyed by integer block
coordinates.  Voxel data is kept as one pooled numpy array per voxel field with
shape ``(capacity, 512, ...)`` so numba kernels can index ``[slot, linear]``
directly.  Inside a block the linear index is ``x + 8*y + 64*z``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _hash
from .errors import AllocationError, ConfigurationError

BLOCK_EDGE = 8
VOXELS_PER_BLOCK = BLOCK_EDGE**3
MAX_SQUARED_DISTANCE = np.int32(2**31 - 1)


@dataclass(frozen=True)
class Field:
    name: str
    dtype: str
    shape: tuple = ()
    default: float = 0


@dataclass(frozen=True)
class VoxelType:
    name: str
    fields: tuple

    @property
    def record_dtype(self) -> np.dtype:
        """Packed little-endian record used for serialization."""
        return np.dtype([(f.name, f.dtype, f.shape) for f in self.fields])

    @property
    def record_size(self) -> int:
        return self.record_dtype.itemsize


TSDF = VoxelType("tsdf", (Field("distance", "<f4"), Field("weight", "<f4")))
OCCUPANCY = VoxelType("occupancy", (Field("log_odds", "<f4"),))
COLOR = VoxelType("color", (Field("color", "u1", (3,)), Field("weight", "<f4")))
ESDF = VoxelType(
    "esdf",
    (
        Field("observed", "u1"),
        Field("is_site", "u1"),
        Field("is_inside", "u1"),
        Field("squared_distance", "<i4", (), int(MAX_SQUARED_DISTANCE)),
        Field("parent_offset", "<i4", (3,)),
    ),
)
VOXEL_TYPES = {t.name: t for t in (TSDF, OCCUPANCY, COLOR, ESDF)}


def linear_index(x, y, z):
    return x + BLOCK_EDGE * y + BLOCK_EDGE * BLOCK_EDGE * z


def position_to_indices(points, voxel_size):
    """Map metric points to (block index, voxel index) pairs using floor."""
    points = np.asarray(points, dtype=np.float64)
    global_voxel = np.floor(points / voxel_size).astype(np.int64)
    block = np.floor_divide(global_voxel, BLOCK_EDGE)
    return block, global_voxel - block * BLOCK_EDGE


def voxel_center(block, voxel, voxel_size):
    """Metric center of a voxel given its block and in-block index."""
    block = np.asarray(block, dtype=np.int64)
    voxel = np.asarray(voxel, dtype=np.int64)
    return (block * BLOCK_EDGE + voxel + 0.5) * voxel_size


def sort_indices(indices) -> np.ndarray:
    """Unique block indices in lexicographic (x, y, z) order."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1, 3)
    if idx.shape[0] == 0:
        return idx.copy()
    idx = np.unique(idx, axis=0)
    return idx


class Layer:
    """A sparse voxel layer of one voxel type."""

    def __init__(self, voxel_type: VoxelType | str, voxel_size: float, max_blocks=None, params=None):
        if isinstance(voxel_type, str):
            voxel_type = VOXEL_TYPES[voxel_type]
        if not voxel_size > 0:
            raise ConfigurationError(f"voxel_size must be positive, got {voxel_size}")
        self.voxel_type = voxel_type
        self.voxel_size = float(voxel_size)
        self.max_blocks = max_blocks
        self.params = dict(params or {})
        self._capacity = 0
        self.num_blocks = 0
        self.data = {}
        self._coords = np.empty((0, 3), np.int64)
        self._hash = _hash.BlockHash()
        self._reserve(16)

    @property
    def block_size(self) -> float:
        return BLOCK_EDGE * self.voxel_size

    @property
    def coords(self) -> np.ndarray:
        """Block index of every used slot, in slot order."""
        return self._coords[: self.num_blocks]

    @property
    def hash_tables(self):
        return self._hash.keys, self._hash.vals

    def __len__(self):
        return self.num_blocks

    def __contains__(self, index):
        return self.slot(index) >= 0

    def _reserve(self, n):
        if n <= self._capacity:
            return
        cap = max(16, self._capacity)
        while cap < n:
            cap *= 2
        if self.max_blocks is not None:
            cap = min(cap, self.max_blocks)
        for f in self.voxel_type.fields:
            arr = np.full((cap, VOXELS_PER_BLOCK) + f.shape, f.default, dtype=np.dtype(f.dtype).newbyteorder("="))
            if f.name in self.data:
                arr[: self._capacity] = self.data[f.name][: self._capacity]
            self.data[f.name] = arr
        coords = np.zeros((cap, 3), np.int64)
        coords[: self._capacity] = self._coords[: self._capacity]
        self._coords = coords
        self._capacity = cap

    def slot(self, index) -> int:
        x, y, z = (int(v) for v in index)
        return self._hash.get(x, y, z)

    def slots(self, indices) -> np.ndarray:
        return self._hash.get_many(indices)

    def allocate(self, index) -> int:
        """Slot for ``index``, allocating a default block if needed."""
        x, y, z = (int(v) for v in index)
        s = self._hash.get(x, y, z)
        if s >= 0:
            return s
        for v in (x, y, z):
            if not _hash.COORD_MIN <= v <= _hash.COORD_MAX:
                raise AllocationError(f"block index {index} is outside the addressable range")
        if self.max_blocks is not None and self.num_blocks >= self.max_blocks:
            raise AllocationError(f"layer capacity of {self.max_blocks} blocks exhausted")
        self._reserve(self.num_blocks + 1)
        s = self.num_blocks
        self._coords[s] = (x, y, z)
        self._hash.put(x, y, z, s)
        self.num_blocks += 1
        return s

    def allocate_many(self, indices):
        """Allocate all ``indices``; returns (slots, newly_allocated_mask)."""
        idx = np.asarray(indices, dtype=np.int64).reshape(-1, 3)
        slots = self.slots(idx)
        new = slots < 0
        if not new.any():
            return slots, new
        fresh, inverse = np.unique(idx[new], axis=0, return_inverse=True)
        if fresh.min() < _hash.COORD_MIN or fresh.max() > _hash.COORD_MAX:
            raise AllocationError("block index is outside the addressable range")
        if self.max_blocks is not None and self.num_blocks + fresh.shape[0] > self.max_blocks:
            raise AllocationError(f"layer capacity of {self.max_blocks} blocks exhausted")
        first = self.num_blocks
        self._reserve(first + fresh.shape[0])
        self._coords[first : first + fresh.shape[0]] = fresh
        self._hash.put_many(fresh, first)
        self.num_blocks += fresh.shape[0]
        slots[new] = first + inverse.reshape(-1)
        return slots, new

    def indices(self) -> np.ndarray:
        """All allocated block indices in lexicographic order."""
        return sort_indices(self.coords)

    def field(self, name) -> np.ndarray:
        return self.data[name][: self.num_blocks]

    def block(self, index) -> dict:
        """Views of one block's fields, each shaped (8, 8, 8, ...) and indexed [x, y, z]."""
        s = self.slot(index)
        if s < 0:
            raise KeyError(f"block {tuple(index)} is not allocated")
        out = {}
        for f in self.voxel_type.fields:
            v = self.data[f.name][s].reshape((BLOCK_EDGE,) * 3 + f.shape)
            out[f.name] = np.swapaxes(v, 0, 2)
        return out

    def neighbor_table(self) -> np.ndarray:
        """(num_blocks, 6) slots of face neighbours ordered -x, +x, -y, +y, -z, +z."""
        keys, vals = self.hash_tables
        return _hash.face_neighbors(keys, vals, np.ascontiguousarray(self.coords))

    def records(self, slot) -> np.ndarray:
        """Packed voxel records of one block in linear order."""
        rec = np.empty(VOXELS_PER_BLOCK, self.voxel_type.record_dtype)
        for f in self.voxel_type.fields:
            rec[f.name] = self.data[f.name][slot]
        return rec

    def set_records(self, slot, rec):
        for f in self.voxel_type.fields:
            self.data[f.name][slot] = rec[f.name]

    def copy(self) -> "Layer":
        out = Layer(self.voxel_type, self.voxel_size, self.max_blocks, self.params)
        out._reserve(max(self.num_blocks, 1))
        n = self.num_blocks
        for name, arr in self.data.items():
            out.data[name][:n] = arr[:n]
        out._coords[:n] = self._coords[:n]
        out.num_blocks = n
        out._hash = _hash.BlockHash(max(n, 1))
        for s in range(n):
            out._hash.put(*(int(v) for v in self._coords[s]), s)
        return out


@dataclass
class LayerCake:
    """A named set of layers sharing one voxel size."""

    voxel_size: float
    layers: dict = field(default_factory=dict)

    def add(self, name, voxel_type, **kwargs) -> Layer:
        layer = Layer(voxel_type, self.voxel_size, **kwargs)
        self.layers[name] = layer
        return layer

    def __getitem__(self, name) -> Layer:
        return self.layers[name]

    def __contains__(self, name):
        return name in self.layers

    def validate(self):
        for name, layer in self.layers.items():
            if abs(layer.voxel_size - self.voxel_size) > 1e-12:
                raise ConfigurationError(
                    f"layer {name!r} has voxel size {layer.voxel_size}, expected {self.voxel_size}"
                )


def require_same_voxel_size(*layers):
    sizes = {round(layer.voxel_size, 12) for layer in layers}
    if len(sizes) > 1:
        raise ConfigurationError(f"layers have mismatched voxel sizes: {sorted(sizes)}")
