"""Command-line entry point: ``meshkit <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .errors import ConfigError, MeshkitError

log = logging.getLogger("meshkit")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, default=_jsonable))


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(type(x))


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _companions(report_path):
    """CSV and PNG paths that sit next to a JSON report."""
    p = Path(report_path)
    return p.with_suffix(".csv"), p.with_suffix(".png")


# -- commands --------------------------------------------------------------------------


def cmd_convert(args) -> int:
    from .mesh import normalize_mesh
    from .meshio import load_mesh, write_mesh

    mesh = load_mesh(args.input)
    info = {"input": args.input, "output": args.output, "vertices": mesh.vertex_count, "triangles": mesh.triangle_count}
    if args.normalize:
        mesh, tf = normalize_mesh(mesh)
        info["transform"] = tf.to_dict()
    write_mesh(mesh, args.output)
    print(json.dumps(info, default=_jsonable))
    return EXIT_OK


def cmd_validate(args) -> int:
    from .mesh import validate_mesh
    from .meshio import load_mesh

    rep = validate_mesh(load_mesh(args.input)).to_dict()
    if args.json:
        print(json.dumps(rep, indent=1, sort_keys=True, default=_jsonable))
    else:
        for k, v in rep.items():
            print(f"{k}\t{v}")
    return EXIT_OK if rep.get("is_watertight") and rep.get("is_manifold") else EXIT_FAIL


def cmd_remesh(args) -> int:
    from .meshio import load_mesh, write_mesh
    from .remesh import RemeshParams, remesh_watertight
    from .sdf import MeshSdf

    params = RemeshParams(resolution=args.resolution, epsilon_cells=args.epsilon_cells, margin_cells=args.margin_cells,
                          normal_source=args.normal_source)
    src = load_mesh(args.input)
    t0 = time.perf_counter()
    out, report = remesh_watertight(src, params)
    elapsed = time.perf_counter() - t0
    write_mesh(out, args.output)
    rep = {"params": params.to_dict(), "input_triangles": src.triangle_count, "elapsed_s": elapsed, **report.to_dict()}
    if args.report:
        lo, hi = src.bounds()
        h = float(np.max(hi - lo)) / (params.resolution - 1 - 2 * params.margin_cells)
        dist = MeshSdf.of(src).unsigned(out.vertices)[0] if out.vertex_count else np.zeros(0)
        rep["source_distance"] = {"max": float(dist.max(initial=0.0)), "mean": float(dist.mean()) if len(dist) else 0.0,
                                  "h_estimate": h}
        _write_json(args.report, rep)
        csv_path, png_path = _companions(args.report)
        _write_csv(csv_path, ["key", "value"], [(k, v) for k, v in rep.items() if not isinstance(v, dict)])
        from .plots import distance_histogram

        distance_histogram(dist, h, png_path)
    print(json.dumps({k: rep[k] for k in ("is_watertight", "is_manifold", "triangle_count") if k in rep}, default=_jsonable))
    return EXIT_OK if report.is_watertight and report.is_manifold else EXIT_FAIL


def _field_from(spec: str):
    from .isoext import BUILTINS, grid_field
    from .sdf import read_sdfgrid

    if spec.startswith("builtin:"):
        name = spec.split(":", 1)[1]
        if name not in BUILTINS:
            raise ConfigError(f"unknown builtin field {name!r}; choose from {sorted(BUILTINS)}")
        return BUILTINS[name]()
    return grid_field(read_sdfgrid(spec))


def cmd_extract(args) -> int:
    from .isoext import dense_extract, extract_hierarchical
    from .meshio import write_mesh

    field_ = _field_from(args.field)
    stats = {}
    t0 = time.perf_counter()
    fn = extract_hierarchical if args.mode == "hierarchical" else dense_extract
    mesh = fn(field_, args.resolution, args.iso, stats)
    stats["time_total"] = time.perf_counter() - t0
    stats["vertices"] = mesh.vertex_count
    stats["triangles"] = mesh.triangle_count
    write_mesh(mesh, args.output)
    if args.stats:
        _write_json(args.stats, stats)
        csv_path, png_path = _companions(args.stats)
        _write_csv(csv_path, ["key", "value"], [(k, v) for k, v in stats.items() if not isinstance(v, (list, dict))])
        from .plots import extraction_stats

        extraction_stats(stats, png_path)
    print(json.dumps(stats, default=_jsonable))
    return EXIT_OK


def cmd_render(args) -> int:
    from .meshio import load_mesh
    from .views import make_canonical_cameras, orbit_camera, render_view, save_render

    mesh = load_mesh(args.input)
    size = (args.size, args.size)
    cams = make_canonical_cameras(4, size)
    if args.views > 4:
        cams += [orbit_camera(0.0, 89.0, size), orbit_camera(0.0, -89.0, size)]
    cams = cams[: args.views]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, cam in enumerate(cams):
        r = render_view(mesh, cam, light=args.light)
        paths = save_render(r, out / f"view{i:02d}")
        entries.append({"camera": cam.to_dict(), "image": Path(paths[0]).name})
    _write_json(out / "views.json", {"views": entries})
    print(json.dumps({"views": len(entries), "manifest": str(out / "views.json")}))
    return EXIT_OK


def cmd_bake(args) -> int:
    from .bake import bake_uv, fallback_chart, finalize_texture, load_image, save_mask_png, save_png
    from .formats import write_blob
    from .meshio import load_mesh, write_mesh
    from .views import Camera

    mesh = load_mesh(args.mesh)
    if mesh.uvs is None or args.fallback_chart:
        mesh = fallback_chart(mesh, args.size)
        if args.charted_mesh:
            write_mesh(mesh, args.charted_mesh)
    doc = json.loads(Path(args.views).read_text())
    base = Path(args.views).parent
    views = []
    for v in doc["views"] if isinstance(doc, dict) else doc:
        img = load_image(base / v["image"])
        views.append((Camera.from_dict(v["camera"]), img))
    tex = bake_uv(mesh, views, args.size, theta_max_deg=args.theta_max, k=args.k)
    img, mask = finalize_texture(tex, args.dilation)
    save_png(args.out, img, args.bit_depth)
    if args.mask:
        save_mask_png(args.mask, mask)
    wpath = args.weights or str(Path(args.out).with_suffix(".chan"))
    write_blob(wpath, {"format": "chan", "channel": "weight"}, tex.weight.T[..., None])
    summary = {"texels": int(mask.size), "observed": int((mask == 1).sum()), "holes": int((mask == 2).sum()),
               "hole_fraction": tex.hole_fraction()}
    if args.report:
        _write_json(args.report, summary)
        csv_path, png_path = _companions(args.report)
        _write_csv(csv_path, ["key", "value"], list(summary.items()))
        from .plots import bake_overview

        bake_overview(img, mask, tex.weight, png_path)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_dedup(args) -> int:
    from .dedup import compute_descriptor, dedup_filter, read_descriptors, write_descriptors
    from .meshio import load_mesh

    if args.external_desc:
        descs = read_descriptors(args.external_desc)
    else:
        files = sorted(p for p in Path(args.directory).iterdir() if p.suffix.lower() in (".obj", ".glb"))
        descs = []
        for p in files:
            try:
                descs.append(compute_descriptor(load_mesh(p), p.stem))
            except MeshkitError as exc:
                log.warning("skipping %s: %s", p, exc)
        if args.write_desc:
            write_descriptors(args.write_desc, descs)
    report = dedup_filter(descs, args.t_cos, args.t_l2, args.combine)
    _write_json(args.report, report)
    csv_path, png_path = _companions(args.report)
    _write_csv(csv_path, ["removed", "kept", "witness_a", "witness_b", "cosine", "l2"],
               [(r["id"], r["kept"], r["witness"]["a"], r["witness"]["b"], r["witness"]["cosine"], r["witness"]["l2"])
                for r in report["removed"]])
    from .plots import similarity_matrix

    ordered = sorted(descs, key=lambda d: d.asset_id)
    similarity_matrix([d.asset_id for d in ordered], [d.vector for d in ordered], png_path, args.t_cos)
    print(json.dumps({"assets": len(descs), "removed": len(report["removed"]), "clusters": len(report["clusters"]),
                      "threshold_check": report["threshold_check"]["status"]}))
    return EXIT_OK


def cmd_sample(args) -> int:
    from .meshio import load_mesh
    from .sampler import export_training_samples
    from .sdf import TsdfSpec

    mesh = load_mesh(args.input)
    rec = export_training_samples(mesh, args.output, TsdfSpec(truncation=args.truncation), args.near, args.volume,
                                  args.sigma, args.seed)
    print(json.dumps({"records": int(len(rec)), "inside_fraction": float((rec[:, 3] < 0).mean()) if len(rec) else 0.0}))
    return EXIT_OK


def cmd_sdf(args) -> int:
    from .meshio import load_mesh
    from .sdf import TsdfSpec, sample_tsdf_grid, write_sdfgrid

    mesh = load_mesh(args.input)
    grid = sample_tsdf_grid(mesh, args.resolution, TsdfSpec(truncation=args.truncation, sign_method=args.sign))
    write_sdfgrid(args.output, grid)
    print(json.dumps({"dims": list(grid.dims), "h": grid.h}))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    from .pipeline import PipelineConfig, resume, run_pipeline

    ws = args.workspace or os.environ.get("MESHKIT_WORKSPACE")
    if args.resume and not args.inputs:
        if not ws:
            raise ConfigError("--resume needs --workspace or MESHKIT_WORKSPACE")
        summary = resume(ws, args.retry_failed, args.jobs)
    else:
        if not args.config:
            raise ConfigError("--config is required")
        cfg = PipelineConfig.load(args.config, ws)
        if args.jobs is not None:
            cfg.jobs = args.jobs
        if not args.inputs:
            raise ConfigError("no inputs given")
        summary = run_pipeline(cfg, args.inputs, args.retry_failed)
    if args.report:
        from .pipeline import STAGES, status
        from .plots import stage_status

        _write_json(args.report, summary)
        rep = status(summary["workspace"])
        csv_path, png_path = _companions(args.report)
        _write_csv(csv_path, ["asset", *STAGES, "terminal"],
                   [[r["asset"], *[r["stages"].get(s, "corrupt") for s in STAGES], r["terminal"] or ""] for r in rep["assets"]])
        stage_status(rep["counts"], png_path)
    print(json.dumps({k: summary[k] for k in ("assets", "done", "failed", "removed", "corrupt", "work_count")}))
    return EXIT_FAIL if summary["failed"] or summary["corrupt"] else EXIT_OK


def cmd_status(args) -> int:
    from .pipeline import format_status_table, status

    ws = args.workspace or os.environ.get("MESHKIT_WORKSPACE")
    if not ws:
        raise ConfigError("workspace required")
    rep = status(ws, args.stage, args.state)
    if args.json:
        print(json.dumps(rep, indent=1, sort_keys=True))
    else:
        print(format_status_table(rep, args.stage))
    if args.plot:
        from .plots import stage_status

        stage_status(rep["counts"], args.plot)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="meshkit", description="Geometry pipeline tools")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("convert", help="convert between OBJ and GLB")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--normalize", action="store_true")
    s.set_defaults(fn=cmd_convert)

    s = sub.add_parser("validate", help="topology report; exit 1 unless watertight and manifold")
    s.add_argument("input")
    s.add_argument("--json", action="store_true")
    s.set_defaults(fn=cmd_validate)

    s = sub.add_parser("remesh", help="watertight remesh")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--resolution", type=int, default=256)
    s.add_argument("--epsilon-cells", type=float, default=0.25)
    s.add_argument("--margin-cells", type=int, default=3)
    s.add_argument("--normal-source", choices=["original_mesh", "field_gradient"], default="original_mesh")
    s.add_argument("--report")
    s.set_defaults(fn=cmd_remesh)

    s = sub.add_parser("extract", help="iso-surface extraction from a grid or builtin field")
    s.add_argument("field", help="path to .sdfgrid or builtin:<name>")
    s.add_argument("output")
    s.add_argument("--resolution", type=int, default=128)
    s.add_argument("--iso", type=float, default=0.0)
    s.add_argument("--mode", choices=["hierarchical", "dense"], default="hierarchical")
    s.add_argument("--stats")
    s.set_defaults(fn=cmd_extract)

    s = sub.add_parser("sdf", help="sample a TSDF grid from a mesh")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--resolution", type=int, default=128)
    s.add_argument("--truncation", type=float, default=0.1)
    s.add_argument("--sign", choices=["winding", "floodfill_grid"], default="winding")
    s.set_defaults(fn=cmd_sdf)

    s = sub.add_parser("render", help="render canonical views and write views.json")
    s.add_argument("input")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--views", type=int, default=6)
    s.add_argument("--size", type=int, default=512)
    s.add_argument("--light", choices=["flat_albedo", "lambert_headlight"], default="flat_albedo")
    s.set_defaults(fn=cmd_render)

    s = sub.add_parser("bake", help="bake view images into UV space")
    s.add_argument("mesh")
    s.add_argument("--views", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--mask")
    s.add_argument("--weights")
    s.add_argument("--size", type=int, default=1024)
    s.add_argument("--bit-depth", type=int, choices=[8, 16], default=8)
    s.add_argument("--theta-max", type=float, default=75.0)
    s.add_argument("--k", type=float, default=2.0)
    s.add_argument("--dilation", type=int, default=2)
    s.add_argument("--fallback-chart", action="store_true")
    s.add_argument("--charted-mesh")
    s.add_argument("--report")
    s.set_defaults(fn=cmd_bake)

    s = sub.add_parser("dedup", help="find geometric duplicates in a directory")
    s.add_argument("directory", nargs="?", default=".")
    s.add_argument("--t-cos", type=float, default=0.98)
    s.add_argument("--t-l2", type=float, default=0.2)
    s.add_argument("--combine", choices=["and", "or"], default="and")
    s.add_argument("--report", required=True)
    s.add_argument("--external-desc")
    s.add_argument("--write-desc")
    s.set_defaults(fn=cmd_dedup)

    s = sub.add_parser("sample", help="export TSDF training samples")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--near", type=int, default=100_000)
    s.add_argument("--volume", type=int, default=100_000)
    s.add_argument("--truncation", type=float, default=0.1)
    s.add_argument("--sigma", type=float, default=0.01)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_sample)

    s = sub.add_parser("pipeline", help="run or resume the batch pipeline")
    s.add_argument("inputs", nargs="*")
    s.add_argument("--config")
    s.add_argument("--workspace")
    s.add_argument("--jobs", type=int)
    s.add_argument("--resume", action="store_true")
    s.add_argument("--retry-failed", action="store_true")
    s.add_argument("--report")
    s.set_defaults(fn=cmd_pipeline)

    s = sub.add_parser("status", help="summarize a pipeline workspace")
    s.add_argument("workspace", nargs="?")
    s.add_argument("--json", action="store_true")
    s.add_argument("--stage")
    s.add_argument("--state", choices=["pending", "running", "done", "failed"])
    s.add_argument("--plot")
    s.set_defaults(fn=cmd_status)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MeshkitError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
