import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from meshkit.cli import main
from meshkit.meshio import load_mesh, write_mesh
from meshkit.primitives import cube, icosphere, open_box
from meshkit.sdf import read_sdfgrid

from pipeline_harness import write_inputs


def _png_ok(path):
    return path.exists() and path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def _csv_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture
def sphere_obj(tmp_path):
    p = tmp_path / "s.obj"
    write_mesh(icosphere(3, radius=0.8), p)
    return p


def test_module_entry_point_help():
    r = subprocess.run([sys.executable, "-m", "meshkit", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "pipeline" in r.stdout


def test_convert_and_validate(tmp_path, sphere_obj, capsys):
    out = tmp_path / "s.glb"
    assert main(["convert", str(sphere_obj), str(out), "--normalize"]) == 0
    lo, hi = load_mesh(out).bounds()
    assert np.allclose(np.maximum(-lo, hi).max(), 1.0, atol=1e-6)
    assert main(["validate", str(out), "--json"]) == 0
    rep = json.loads(capsys.readouterr().out.split("\n", 1)[1])
    assert rep["is_watertight"] is True


def test_validate_open_mesh_exit_code(tmp_path):
    p = tmp_path / "o.obj"
    write_mesh(open_box(), p)
    assert main(["validate", str(p)]) == 1


def test_missing_file_is_error(tmp_path):
    assert main(["validate", str(tmp_path / "none.obj")]) != 0


def test_remesh_report_outputs(tmp_path):
    src = tmp_path / "b.obj"
    write_mesh(open_box(), src)
    out, rep = tmp_path / "r.glb", tmp_path / "r.json"
    assert main(["remesh", str(src), str(out), "--resolution", "32", "--report", str(rep)]) == 0
    data = json.loads(rep.read_text())
    assert data["is_watertight"] and data["is_manifold"]
    assert _png_ok(tmp_path / "r.png")
    assert _csv_rows(tmp_path / "r.csv")[0] == ["key", "value"]


def test_extract_builtin_with_stats(tmp_path):
    out, stats = tmp_path / "t.obj", tmp_path / "st.json"
    assert main(["extract", "builtin:torus", str(out), "--resolution", "32", "--stats", str(stats)]) == 0
    s = json.loads(stats.read_text())
    assert s["mode"] == "hierarchical" and 0 < s["pruned_fraction"] < 1
    assert _png_ok(tmp_path / "st.png") and (tmp_path / "st.csv").exists()


def test_extract_unknown_builtin_usage_error(tmp_path):
    assert main(["extract", "builtin:teapot", str(tmp_path / "x.obj")]) == 2


def test_sdf_then_extract_grid(tmp_path, sphere_obj):
    grid = tmp_path / "g.sdfgrid"
    assert main(["sdf", str(sphere_obj), str(grid), "--resolution", "24", "--truncation", "0.2"]) == 0
    assert read_sdfgrid(grid).dims == (24, 24, 24)
    a, b = tmp_path / "h.obj", tmp_path / "d.obj"
    assert main(["extract", str(grid), str(a), "--resolution", "20"]) == 0
    assert main(["extract", str(grid), str(b), "--resolution", "20", "--mode", "dense"]) == 0
    ma, mb = load_mesh(a), load_mesh(b)
    assert np.array_equal(ma.triangles, mb.triangles) and np.max(np.abs(ma.vertices - mb.vertices)) <= 1e-6


def test_render_then_bake(tmp_path, sphere_obj):
    views = tmp_path / "views"
    assert main(["render", str(sphere_obj), "--out-dir", str(views), "--views", "4", "--size", "96"]) == 0
    doc = json.loads((views / "views.json").read_text())
    assert len(doc["views"]) == 4 and (views / doc["views"][0]["image"]).exists()
    out, mask, rep = tmp_path / "albedo.png", tmp_path / "holes.png", tmp_path / "bake.json"
    charted = tmp_path / "charted.glb"
    assert main(["bake", str(sphere_obj), "--views", str(views / "views.json"), "--out", str(out), "--mask", str(mask),
                 "--size", "256", "--bit-depth", "16", "--charted-mesh", str(charted), "--report", str(rep)]) == 0
    s = json.loads(rep.read_text())
    assert s["observed"] > 0 and 0 < s["hole_fraction"] < 0.5
    assert _png_ok(out) and _png_ok(mask) and _png_ok(tmp_path / "bake.png")
    assert (tmp_path / "albedo.chan").exists()
    assert load_mesh(charted).uvs is not None


def test_dedup_directory(tmp_path):
    d = tmp_path / "corpus"
    d.mkdir()
    write_mesh(cube(), d / "a.obj")
    write_mesh(cube(3.0), d / "b.glb")
    write_mesh(icosphere(3), d / "c.obj")
    rep = tmp_path / "dd.json"
    desc = tmp_path / "all.desc"
    assert main(["dedup", str(d), "--report", str(rep), "--write-desc", str(desc)]) == 0
    r = json.loads(rep.read_text())
    assert r["clusters"] == [["a", "b"]] and r["kept"] == ["a", "c"]
    rows = _csv_rows(tmp_path / "dd.csv")
    assert rows[1][:2] == ["b", "a"]
    assert _png_ok(tmp_path / "dd.png")
    rep2 = tmp_path / "ext.json"
    assert main(["dedup", "--external-desc", str(desc), "--report", str(rep2)]) == 0
    assert json.loads(rep2.read_text())["kept"] == ["a", "c"]


def test_sample_command(tmp_path, sphere_obj, capsys):
    out = tmp_path / "s.tsdfsamples"
    assert main(["sample", str(sphere_obj), str(out), "--near", "200", "--volume", "200", "--seed", "3"]) == 0
    assert json.loads(capsys.readouterr().out)["records"] == 400


def test_pipeline_status_cycle(tmp_path, capsys):
    inputs = write_inputs(tmp_path / "in", ("a_cube", "b_sphere"))
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"schema_version": 1, "params": {"remesh": {"resolution": 24},
                                                                "sample": {"near_count": 100, "volume_count": 100},
                                                                "bake": {"size": 512, "view_size": 64}}}))
    ws = tmp_path / "ws"
    rep = tmp_path / "run.json"
    assert main(["pipeline", "--config", str(cfg), "--workspace", str(ws), "--report", str(rep), *inputs]) == 0
    first = json.loads(capsys.readouterr().out)
    assert first["done"] == 2 and first["work_count"] > 0
    assert _png_ok(tmp_path / "run.png") and _csv_rows(tmp_path / "run.csv")[0][0] == "asset"
    assert main(["pipeline", "--resume", "--workspace", str(ws)]) == 0
    assert json.loads(capsys.readouterr().out)["work_count"] == 0
    assert main(["status", str(ws), "--json", "--stage", "bake", "--state", "done", "--plot", str(tmp_path / "st.png")]) == 0
    st = json.loads(capsys.readouterr().out)
    assert [r["asset"] for r in st["assets"]] == ["a_cube", "b_sphere"]
    assert _png_ok(tmp_path / "st.png")


def test_pipeline_failure_exit_code(tmp_path):
    bad = tmp_path / "bad.obj"
    bad.write_text("v 1 2\n")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"schema_version": 1}))
    assert main(["pipeline", "--config", str(cfg), "--workspace", str(tmp_path / "ws"), str(bad)]) == 1


def test_pipeline_config_error_exit_code(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"schema_version": 1, "stages": ["bake"]}))
    assert main(["pipeline", "--config", str(cfg), "--workspace", str(tmp_path / "ws"), "x.obj"]) == 2
