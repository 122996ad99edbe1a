import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from voxmap import snapshot
from voxmap.cli import main
from voxmap.dataset import synthesize, write_dataset
from voxmap.esdf import EsdfConfig, new_esdf_layer, update_esdf
from voxmap.export import read_ply
from voxmap.layer import TSDF, LayerCake
from voxmap.scene import named_scene

from worlds import block_range, fill_tsdf


@pytest.fixture(scope="module")
def room_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("room") / "ds"
    assert main(["synth", "room", "--frames", "100", "--width", "160", "--height", "120", "--out", str(root)]) == 0
    return root


@pytest.fixture(scope="module")
def room_run(room_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "out"
    assert main(["integrate", str(room_dir), "--voxel-size", "0.1", "--out", str(out)]) == 0
    return out


def test_integrate_emits_artifacts(room_run):
    names = sorted(p.name for p in room_run.iterdir())
    assert names == ["esdf_slice.csv", "esdf_slice.png", "map.vxlf", "mesh.ply", "timing.csv"]
    cake = snapshot.load(room_run / "map.vxlf")
    assert set(cake.layers) == {"tsdf", "esdf"}
    v, t, _, _ = read_ply(room_run / "mesh.ply")
    assert len(v) > 0 and len(t) > 0
    rows = list(csv.DictReader(open(room_run / "timing.csv")))
    assert len(rows) == 100
    assert [r["frame"] for r in rows[:3]] == ["0", "1", "2"]
    assert all(r["tsdf_ms"] for r in rows)
    assert rows[3]["esdf_ms"] and not rows[0]["esdf_ms"]


def test_integrate_is_deterministic(room_dir, room_run, tmp_path):
    out = tmp_path / "again"
    assert main(["integrate", str(room_dir), "--voxel-size", "0.1", "--out", str(out)]) == 0
    for name in ("map.vxlf", "mesh.ply", "esdf_slice.csv", "esdf_slice.png"):
        assert (out / name).read_bytes() == (room_run / name).read_bytes()


def test_occupancy_integrate(room_dir, tmp_path):
    out = tmp_path / "occ"
    assert main(["integrate", str(room_dir), "--voxel-size", "0.1", "--layer", "occupancy", "--out", str(out)]) == 0
    assert not (out / "mesh.ply").exists()
    assert set(snapshot.load(out / "map.vxlf").layers) == {"occupancy", "esdf"}


def test_eval_on_room(room_dir, room_run, capsys):
    assert main(["eval", str(room_run / "map.vxlf"), str(room_dir / "scene.json")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["esdf"]["median_abs"] <= 0.1
    assert rep["mesh"]["rms_abs"] <= 0.05


def test_eval_self_consistent_build(tmp_path, capsys):
    vs = 0.05
    scene = named_scene("sphere_in_box")
    cake = LayerCake(vs)
    tsdf = cake.add("tsdf", TSDF)
    lo = np.floor(np.array([-1.6, -1.6, -0.1]) / (8 * vs)).astype(int)
    hi = np.ceil(np.array([1.6, 1.6, 2.6]) / (8 * vs)).astype(int)
    fill_tsdf(tsdf, scene.sdf, block_range(lo, hi), 4 * vs)
    cfg = EsdfConfig(site_threshold=vs / 2)
    esdf = new_esdf_layer(vs, cfg)
    update_esdf(esdf, tsdf, tsdf.indices(), cfg)
    cake.layers["esdf"] = esdf
    snapshot.save(cake, tmp_path / "m.vxlf")
    (tmp_path / "scene.json").write_text(scene.to_json())
    assert main(["eval", str(tmp_path / "m.vxlf"), str(tmp_path / "scene.json")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["esdf"]["median_abs"] <= vs / 2


def test_bench_queries(room_run, capsys):
    assert main(["bench", "queries", str(room_run / "map.vxlf"), "--count", "5000", "--mode", "uncor"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["count"] == 5000 and rep["mode"] == "uncor"
    assert main(["bench", "queries", str(room_run / "map.vxlf"), "--count", "0"]) == 1
    assert "count" in capsys.readouterr().err


def test_bench_resolution(room_dir, tmp_path, capsys):
    out = tmp_path / "res.csv"
    assert main(["bench", "resolution", str(room_dir), "--voxel-sizes", "0.2,0.1", "--frames", "8",
                 "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert [float(r["voxel_size"]) for r in rows] == [0.1, 0.2]
    assert int(rows[0]["blocks"]) > int(rows[1]["blocks"])


def test_errors_and_cleanup(room_dir, tmp_path, capsys):
    assert main(["integrate", str(tmp_path / "missing"), "--voxel-size", "0.1", "--out", str(tmp_path / "o")]) == 1
    assert not (tmp_path / "o").exists()
    assert "not found" in capsys.readouterr().err
    # a dataset without color frames fails after nothing was written
    assert main(["integrate", str(room_dir), "--voxel-size", "0.1", "--color", "--out", str(tmp_path / "c")]) == 1
    assert not (tmp_path / "c").exists()
    # snapshot missing its esdf layer
    cake = LayerCake(0.1)
    cake.add("tsdf", TSDF)
    snapshot.save(cake, tmp_path / "bare.vxlf")
    assert main(["bench", "queries", str(tmp_path / "bare.vxlf"), "--count", "10"]) == 1
    with pytest.raises(SystemExit):
        main(["integrate", str(room_dir), "--voxel-size", "-1", "--out", str(tmp_path / "x")])
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_failed_write_removes_partial_output(room_dir, tmp_path, monkeypatch):
    import voxmap.cli as cli

    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr(cli, "write_timing_csv", boom)
    out = tmp_path / "partial"
    assert main(["integrate", str(room_dir), "--voxel-size", "0.2", "--out", str(out)]) == 1
    assert not out.exists()
    existing = tmp_path / "existing"
    existing.mkdir()
    (existing / "keep.txt").write_text("x")
    assert main(["integrate", str(room_dir), "--voxel-size", "0.2", "--out", str(existing)]) == 1
    assert sorted(p.name for p in existing.iterdir()) == ["keep.txt"]


def test_synth_refuses_non_empty_dir(tmp_path):
    (tmp_path / "d").mkdir()
    (tmp_path / "d" / "f").write_text("x")
    assert main(["synth", "room", "--frames", "1", "--out", str(tmp_path / "d")]) == 1


def test_synth_lidar_and_color(tmp_path):
    assert main(["synth", "corridor", "--frames", "2", "--sensor", "lidar", "--width", "64", "--height", "8",
                 "--out", str(tmp_path / "l")]) == 0
    assert "num_azimuth" in (tmp_path / "l" / "intrinsics.txt").read_text()
    ds = synthesize("sphere_in_box", 2, "camera", 64, 48, with_color=True)
    write_dataset(tmp_path / "c", ds)
    assert main(["integrate", str(tmp_path / "c"), "--voxel-size", "0.1", "--color", "--out",
                 str(tmp_path / "co")]) == 0
    _, _, _, colors = read_ply(tmp_path / "co" / "mesh.ply")
    assert colors is not None and colors.any()


def test_console_script_exit_code(tmp_path):
    r = subprocess.run([sys.executable, "-m", "voxmap.cli", "bench", "queries", str(tmp_path / "nope.vxlf")],
                       capture_output=True, text=True)
    assert r.returncode == 1 and "voxmap: error" in r.stderr
