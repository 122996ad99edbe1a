"""Command-line entry point: ``voxmap integrate|synth|eval|bench``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import shutil
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import snapshot
from .dataset import load_dataset, synthesize, write_dataset
from .errors import ConfigurationError, VoxmapError
from .export import write_esdf_slice, write_ply, write_timing_csv
from .mapper import Mapper, MapperConfig
from .mesh import mesh_layer
from .oracle import esdf_error, surface_error
from .query import benchmark_queries
from .scene import SCENES, SyntheticScene


class _Outputs:
    """Tracks files written by a command so they can be removed if it fails."""

    def __init__(self):
        self.paths = []
        self.dirs = []

    def dir(self, path):
        path = Path(path)
        if not path.exists():
            path.mkdir(parents=True)
            self.dirs.append(path)
        elif not path.is_dir():
            raise ConfigurationError(f"output path exists and is not a directory: {path}")
        return path

    def file(self, path):
        self.paths.append(Path(path))
        return Path(path)

    def cleanup(self):
        for p in self.paths:
            p.unlink(missing_ok=True)
        for d in reversed(self.dirs):
            shutil.rmtree(d, ignore_errors=True)


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive: {text}")
    return v


def _positive_int(text):
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"must be a positive integer: {text}")
    return v


def _float_list(text):
    try:
        vals = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text}") from None
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("voxel sizes must be positive")
    return vals


def build_map(dataset, voxel_size, layer="tsdf", color=False, update_every=4, max_frames=None):
    cfg = MapperConfig(voxel_size=voxel_size, layer=layer, color=color, update_every=update_every)
    mapper = Mapper(cfg)
    n = len(dataset) if max_frames is None else min(max_frames, len(dataset))
    for i in range(n):
        f = dataset.frame(i)
        mapper.integrate(f.depth, f.pose, dataset.intrinsics, f.color if color else None)
    return mapper.finish()


def cmd_integrate(args, out: _Outputs):
    ds = load_dataset(args.dataset)
    if args.color and ds.color is None:
        raise ConfigurationError("--color given but the dataset has no color frames")
    mapper = build_map(ds, args.voxel_size, args.layer, args.color, args.update_every)
    root = out.dir(args.out)
    snapshot.save(mapper.cake, out.file(root / "map.vxlf"))
    if mapper.mesh is not None:
        write_ply(out.file(root / "mesh.ply"), mapper.mesh)
    if mapper.esdf.num_blocks:
        write_esdf_slice(out.file(root / "esdf_slice.csv"), out.file(root / "esdf_slice.png"), mapper.esdf,
                         args.slice_height)
    write_timing_csv(out.file(root / "timing.csv"), mapper.timings)
    print(f"integrated {mapper.frames} frames into {mapper.source.num_blocks} blocks; wrote {root}")


def cmd_synth(args, out: _Outputs):
    ds = synthesize(args.scene, args.frames, args.sensor, args.width, args.height, with_color=args.color)
    root = Path(args.out)
    if root.exists() and any(root.iterdir()):
        raise ConfigurationError(f"output directory is not empty: {root}")
    out.dir(root)
    if root not in out.dirs:
        for sub in ("depth", "color"):
            out.dirs.append(root / sub)
        for name in ("intrinsics.txt", "poses.txt", "scene.json"):
            out.file(root / name)
    write_dataset(root, ds)
    print(f"wrote {len(ds)} {args.sensor} frames of {args.scene} to {root}")


def cmd_eval(args, out: _Outputs):
    cake = snapshot.load(args.snapshot)
    scene = SyntheticScene.load(args.scene)
    if "esdf" not in cake:
        raise ConfigurationError("snapshot has no esdf layer")
    report = {"esdf": asdict(esdf_error(cake["esdf"], scene.sdf))}
    if "tsdf" in cake:
        mesh = mesh_layer(cake["tsdf"])
        report["mesh"] = asdict(surface_error(mesh, scene.sdf)) if mesh.blocks else None
    else:
        report["mesh"] = None
    print(json.dumps(report, indent=2, sort_keys=True))


def resolution_rows(dataset, voxel_sizes, layer="tsdf", update_every=4, max_frames=None):
    rows = []
    for vs in voxel_sizes:
        t0 = time.perf_counter()
        mapper = build_map(dataset, vs, layer, False, update_every, max_frames)
        wall = time.perf_counter() - t0
        t = mapper.timings

        def mean(k):
            vals = [r[k] for r in t if r.get(k) is not None]
            return float(np.mean(vals)) if vals else float("nan")

        rows.append({
            "voxel_size": vs, "frames": mapper.frames, "blocks": mapper.source.num_blocks,
            "tsdf_ms": mean("tsdf_ms"), "esdf_ms": mean("esdf_ms"), "mesh_ms": mean("mesh_ms"),
            "ms_per_frame": wall * 1e3 / max(mapper.frames, 1),
        })
    return rows


def cmd_bench_resolution(args, out: _Outputs):
    ds = load_dataset(args.dataset)
    # compile kernels before timing
    build_map(ds, max(args.voxel_sizes), args.layer, False, args.update_every, 2)
    rows = resolution_rows(ds, sorted(args.voxel_sizes), args.layer, args.update_every, args.frames)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["voxel_size", "frames", "blocks", "tsdf_ms", "esdf_ms", "mesh_ms", "ms_per_frame"]
    w.writerow(cols)
    for r in rows:
        w.writerow([f"{r[c]:.3f}" if isinstance(r[c], float) else r[c] for c in cols])
    if args.out:
        out.file(args.out).write_text(buf.getvalue())
    sys.stdout.write(buf.getvalue())


def cmd_bench_queries(args, out: _Outputs):
    if args.count <= 0:
        raise ConfigurationError("--count must be positive")
    cake = snapshot.load(args.snapshot)
    if "esdf" not in cake:
        raise ConfigurationError("snapshot has no esdf layer")
    esdf = cake["esdf"]
    if esdf.num_blocks == 0:
        raise ConfigurationError("esdf layer is empty")
    rep = benchmark_queries(esdf, args.count, args.mode, args.seed, repeats=args.repeats)
    print(json.dumps(rep, sort_keys=True))


def build_parser():
    p = argparse.ArgumentParser(prog="voxmap", description="Sparse voxel mapping and ESDF tools.")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("integrate", help="replay a dataset into a map")
    q.add_argument("dataset")
    q.add_argument("--voxel-size", type=_positive_float, required=True)
    q.add_argument("--layer", choices=("tsdf", "occupancy"), default="tsdf")
    q.add_argument("--color", action="store_true")
    q.add_argument("--update-every", type=_positive_int, default=4)
    q.add_argument("--slice-height", type=float, default=None)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_integrate)

    q = sub.add_parser("synth", help="render a synthetic dataset")
    q.add_argument("scene", choices=sorted(SCENES))
    q.add_argument("--frames", type=_positive_int, default=100)
    q.add_argument("--sensor", choices=("camera", "lidar"), default="camera")
    q.add_argument("--width", type=_positive_int, default=None)
    q.add_argument("--height", type=_positive_int, default=None)
    q.add_argument("--color", action="store_true")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_synth)

    q = sub.add_parser("eval", help="ESDF and mesh error against a scene file")
    q.add_argument("snapshot")
    q.add_argument("scene")
    q.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="benchmarks").add_subparsers(dest="bench", required=True)
    q = b.add_parser("resolution", help="timing versus voxel size")
    q.add_argument("dataset")
    q.add_argument("--voxel-sizes", type=_float_list, default=[0.01, 0.02, 0.05, 0.10])
    q.add_argument("--layer", choices=("tsdf", "occupancy"), default="tsdf")
    q.add_argument("--update-every", type=_positive_int, default=4)
    q.add_argument("--frames", type=_positive_int, default=None)
    q.add_argument("--out", default=None)
    q.set_defaults(func=cmd_bench_resolution)

    q = b.add_parser("queries", help="batched query throughput")
    q.add_argument("snapshot")
    q.add_argument("--count", type=int, default=1_000_000)
    q.add_argument("--mode", choices=("cor", "uncor"), default="cor")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--repeats", type=_positive_int, default=3)
    q.set_defaults(func=cmd_bench_queries)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = _Outputs()
    try:
        args.func(args, out)
    except (VoxmapError, OSError) as exc:
        out.cleanup()
        print(f"voxmap: error: {exc}", file=sys.stderr)
        return 1
    except BaseException:
        out.cleanup()
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
