"""Versioned binary map snapshots ("VXLF").

All integers are little-endian.  Layout::

    magic           4 bytes  b"VXLF"
    version         u32
    voxel_size      f64
    layer_count     u32
    per layer (in name order):
        name        u8 length + ASCII
        voxel type  u8 length + ASCII
        params      u16 length + UTF-8 JSON (sorted keys)
        record_size u32
        block_count u32
        per block (sorted by x, y, z):
            index   3 x i32
            payload 512 packed records, linear voxel order
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import SnapshotError
from .layer import VOXEL_TYPES, Layer, LayerCake

MAGIC = b"VXLF"
VERSION = 1
_INDEX = np.dtype("<i4")


def _put_str(buf, s, width):
    raw = s.encode("utf-8")
    fmt = "<B" if width == 1 else "<H"
    if len(raw) >= 1 << (8 * width):
        raise SnapshotError(f"string too long for snapshot header: {s[:40]!r}")
    buf.write(struct.pack(fmt, len(raw)))
    buf.write(raw)


def _layer_bytes(name, layer: Layer, buf):
    vt = layer.voxel_type
    _put_str(buf, name, 1)
    _put_str(buf, vt.name, 1)
    _put_str(buf, json.dumps(layer.params, sort_keys=True), 2)
    idx = layer.indices()
    buf.write(struct.pack("<II", vt.record_size, idx.shape[0]))
    if idx.shape[0] == 0:
        return
    slots = layer.slots(idx)
    rec = np.empty((idx.shape[0], 512), vt.record_dtype)
    for f in vt.fields:
        rec[f.name] = layer.data[f.name][slots]
    block = np.dtype([("index", _INDEX, (3,)), ("payload", vt.record_dtype, (512,))])
    out = np.empty(idx.shape[0], block)
    out["index"] = idx
    out["payload"] = rec
    buf.write(out.tobytes())


def to_bytes(cake: LayerCake) -> bytes:
    cake.validate()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IdI", VERSION, float(cake.voxel_size), len(cake.layers)))
    for name in sorted(cake.layers):
        _layer_bytes(name, cake.layers[name], buf)
    return buf.getvalue()


class _Reader:
    def __init__(self, data):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise SnapshotError("snapshot is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self, width):
        (n,) = self.unpack("<B" if width == 1 else "<H")
        return bytes(self.take(n)).decode("utf-8")


def from_bytes(data) -> LayerCake:
    r = _Reader(data)
    if bytes(r.take(4)) != MAGIC:
        raise SnapshotError("not a VXLF snapshot (bad magic)")
    version, voxel_size, n_layers = r.unpack("<IdI")
    if version != VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    cake = LayerCake(voxel_size)
    for _ in range(n_layers):
        name = r.string(1)
        type_name = r.string(1)
        vt = VOXEL_TYPES.get(type_name)
        if vt is None:
            raise SnapshotError(f"unknown voxel type {type_name!r}")
        try:
            params = json.loads(r.string(2))
        except json.JSONDecodeError as exc:
            raise SnapshotError(f"bad layer params: {exc}") from None
        record_size, n_blocks = r.unpack("<II")
        if record_size != vt.record_size:
            raise SnapshotError(f"layer {name!r}: record size {record_size} != {vt.record_size}")
        block = np.dtype([("index", _INDEX, (3,)), ("payload", vt.record_dtype, (512,))])
        arr = np.frombuffer(r.take(n_blocks * block.itemsize), block)
        layer = Layer(vt, voxel_size, params=params)
        if n_blocks:
            if np.unique(arr["index"], axis=0).shape[0] != n_blocks:
                raise SnapshotError(f"layer {name!r} lists a block index twice")
            slots, _ = layer.allocate_many(arr["index"].astype(np.int64))
            for f in vt.fields:
                layer.data[f.name][slots] = arr["payload"][f.name]
        cake.layers[name] = layer
    if r.pos != len(r.data):
        raise SnapshotError("trailing bytes after last layer")
    return cake


def save(cake: LayerCake, path):
    Path(path).write_bytes(to_bytes(cake))


def load(path) -> LayerCake:
    path = Path(path)
    if not path.is_file():
        raise SnapshotError(f"snapshot not found: {path}")
    return from_bytes(path.read_bytes())
