"""Per-asset manifests, staged execution with checkpoint/resume, and status aggregation."""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorruptManifest, MeshkitError

SCHEMA_VERSION = 1
STAGES = ("convert", "normalize", "dedup", "remesh", "sample", "bake")
DEPENDS = {
    "convert": (),
    "normalize": ("convert",),
    "dedup": ("normalize",),
    "remesh": ("normalize",),
    "sample": ("remesh",),
    "bake": ("remesh",),
}
STATES = ("pending", "running", "done", "failed")
REMOVED = "dedup:removed"
DOWNSTREAM_OF_DEDUP = ("remesh", "sample", "bake")
FAULT_ENV = "MESHKIT_FAULT_AT"
FAULT_EXIT = 91

DEFAULT_PARAMS = {
    "convert": {},
    "normalize": {"rotations": {}},
    "dedup": {"t_cos": 0.98, "t_l2": 0.2, "combine": "and"},
    "remesh": {"resolution": 64, "epsilon_cells": 0.25, "margin_cells": 3},
    "sample": {"near_count": 20000, "volume_count": 20000, "truncation": 0.1, "near_sigma": 0.01},
    "bake": {"size": 1024, "view_size": 256, "views": 6},
}


# -- fault injection -------------------------------------------------------------------

_fault_counter = 0
_fault_labels: list = []


def fault_point(label: str) -> None:
    """Count a crash opportunity and hard-exit when MESHKIT_FAULT_AT names it."""
    global _fault_counter
    target = os.environ.get(FAULT_ENV)
    _fault_counter += 1
    _fault_labels.append(label)
    if target and int(target) == _fault_counter:
        os._exit(FAULT_EXIT)


def fault_points_seen() -> int:
    return _fault_counter


def fault_trace() -> list:
    """Labels of the crash opportunities passed since the last reset, in order."""
    return list(_fault_labels)


def reset_fault_counter() -> None:
    global _fault_counter
    _fault_counter = 0
    _fault_labels.clear()


# -- config ----------------------------------------------------------------------------


@dataclass
class PipelineConfig:
    workspace: Path
    stages: tuple = STAGES
    params: dict = field(default_factory=dict)
    jobs: int = 1

    def __post_init__(self):
        self.workspace = Path(self.workspace)
        self.stages = tuple(self.stages)
        unknown = [s for s in self.stages if s not in STAGES]
        if unknown:
            raise ConfigError(f"unknown stages {unknown}")
        if len(set(self.stages)) != len(self.stages):
            raise ConfigError("stages listed twice")
        pos = {s: i for i, s in enumerate(self.stages)}
        for s in self.stages:
            for dep in DEPENDS[s]:
                if dep not in pos:
                    raise ConfigError(f"stage {s} requires {dep}")
                if pos[dep] > pos[s]:
                    raise ConfigError(f"stage {dep} must run before {s}")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        merged = {}
        for s in STAGES:
            p = dict(DEFAULT_PARAMS[s])
            extra = self.params.get(s, {})
            if not isinstance(extra, dict):
                raise ConfigError(f"parameters for {s} must be an object")
            bad = set(extra) - set(p)
            if bad:
                raise ConfigError(f"unknown parameters for {s}: {sorted(bad)}")
            p.update(extra)
            merged[s] = p
        self.params = merged

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "workspace": str(self.workspace), "stages": list(self.stages),
                "params": self.params, "jobs": self.jobs}

    @classmethod
    def from_dict(cls, d: dict, workspace=None) -> "PipelineConfig":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema_version {d.get('schema_version')!r}")
        ws = workspace or d.get("workspace") or os.environ.get("MESHKIT_WORKSPACE")
        if not ws:
            raise ConfigError("no workspace given (config, argument or MESHKIT_WORKSPACE)")
        return cls(ws, tuple(d.get("stages", STAGES)), d.get("params", {}), int(d.get("jobs", 1)))

    @classmethod
    def load(cls, path, workspace=None) -> "PipelineConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(d, workspace)


# -- atomic file helpers ---------------------------------------------------------------


def atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "w") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _atomic_output(path: Path, writer) -> str:
    """Run ``writer(tmp_path)`` then rename into place; returns the sha256 of the result."""
    tmp = path.with_name(f".tmp-{path.name}")
    writer(tmp)
    fault_point(f"write:{path.name}")
    os.replace(tmp, path)
    return file_sha256(path)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# -- manifests -------------------------------------------------------------------------


def asset_dir(workspace: Path, asset_id: str) -> Path:
    return Path(workspace) / "assets" / asset_id


def manifest_path(workspace: Path, asset_id: str) -> Path:
    return asset_dir(workspace, asset_id) / "manifest.json"


def new_manifest(asset_id: str, source: str) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "asset_id": asset_id,
        "source_path": source,
        "content_hash64": None,
        "content_hash": None,
        "rotation": None,
        "terminal": None,
        "stages": {s: {"status": "pending", "params": None, "snapshot": None, "outputs": {}, "result": None,
                       "error": None, "attempts": 0, "started_at": None, "finished_at": None} for s in STAGES},
    }


def read_manifest(path: Path) -> dict:
    try:
        m = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptManifest(f"{path}: {exc}") from exc
    if not isinstance(m, dict) or m.get("schema_version") != SCHEMA_VERSION or not isinstance(m.get("stages"), dict):
        raise CorruptManifest(f"{path}: unexpected manifest structure")
    for s in STAGES:
        st = m["stages"].get(s)
        if not isinstance(st, dict) or st.get("status") not in STATES:
            raise CorruptManifest(f"{path}: bad entry for stage {s}")
    return m


def write_manifest(workspace: Path, m: dict) -> None:
    path = manifest_path(workspace, m["asset_id"])
    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(path, json.dumps(m, indent=1, sort_keys=True))
    fault_point(f"manifest:{m['asset_id']}")


def _transition(workspace, m, stage, status, **fields):
    st = m["stages"][stage]
    if status == "running" and st["status"] in ("done", "running"):
        # stale result or interrupted attempt: back to pending first
        st["status"] = "pending"
        write_manifest(workspace, m)
    now = time.time()
    st["status"] = status
    if status == "running":
        st["started_at"] = now
        st["finished_at"] = None
        st["attempts"] = int(st.get("attempts") or 0) + 1
        st["error"] = None
    else:
        st["finished_at"] = now
    st.update(fields)
    write_manifest(workspace, m)


def _quarantine(workspace: Path, asset_id: str) -> str:
    src = asset_dir(workspace, asset_id)
    qdir = Path(workspace) / "quarantine"
    qdir.mkdir(parents=True, exist_ok=True)
    n = 0
    while (qdir / f"{asset_id}-{n}").exists():
        n += 1
    shutil.move(str(src), str(qdir / f"{asset_id}-{n}"))
    return str(qdir / f"{asset_id}-{n}")


def load_or_create(workspace: Path, asset_id: str, source: str, log: list) -> dict:
    path = manifest_path(workspace, asset_id)
    if path.exists():
        try:
            m = read_manifest(path)
            if m["source_path"] == source:
                return m
        except CorruptManifest as exc:
            where = _quarantine(workspace, asset_id)
            log.append({"asset": asset_id, "event": "quarantined", "reason": str(exc), "moved_to": where})
    m = new_manifest(asset_id, source)
    write_manifest(workspace, m)
    return m


# -- stage implementations -------------------------------------------------------------


def _rotation_for(asset_id, params):
    rot = params.get("rotations", {}).get(asset_id)
    if rot is None:
        return None
    r = np.asarray(rot, dtype=np.float64)
    if r.shape != (3, 3):
        raise ConfigError(f"rotation for {asset_id} must be 3x3")
    return r.tolist()


def _stage_convert(ws, m, params, inputs):
    from .meshio import encode_glb, load_mesh

    mesh = load_mesh(m["source_path"])
    out = asset_dir(ws, m["asset_id"]) / "convert.glb"
    payload = encode_glb(mesh)
    digest = _atomic_output(out, lambda p: p.write_bytes(payload))
    m["content_hash"] = digest
    m["content_hash64"] = digest[:16]
    return {"mesh": out}, {"vertices": mesh.vertex_count, "triangles": mesh.triangle_count}


def _stage_normalize(ws, m, params, inputs):
    from .mesh import normalize_mesh, transform_mesh
    from .meshio import encode_glb, load_mesh

    mesh = load_mesh(inputs["convert"]["mesh"])
    rot = _rotation_for(m["asset_id"], params)
    m["rotation"] = rot
    if rot is not None:
        mesh = transform_mesh(mesh, matrix=rot)
    norm, tf = normalize_mesh(mesh)
    out = asset_dir(ws, m["asset_id"]) / "normalize.glb"
    payload = encode_glb(norm)
    _atomic_output(out, lambda p: p.write_bytes(payload))
    return {"mesh": out}, {"transform": tf.to_dict()}


def _stage_descriptor(ws, m, params, inputs):
    from .dedup import AssetDescriptor, write_descriptors, descriptor_vector
    from .meshio import load_mesh

    mesh = load_mesh(inputs["normalize"]["mesh"])
    vec = descriptor_vector(mesh)
    out = asset_dir(ws, m["asset_id"]) / "descriptor.desc"
    _atomic_output(out, lambda p: write_descriptors(p, [AssetDescriptor(m["asset_id"], vec)]))
    return {"descriptor": out}, {}


def _stage_remesh(ws, m, params, inputs):
    from .meshio import encode_glb, load_mesh
    from .remesh import RemeshParams, remesh_watertight

    mesh = load_mesh(inputs["normalize"]["mesh"])
    rp = RemeshParams(resolution=int(params["resolution"]), epsilon_cells=float(params["epsilon_cells"]),
                      margin_cells=int(params["margin_cells"]))
    out_mesh, report = remesh_watertight(mesh, rp)
    d = asset_dir(ws, m["asset_id"])
    payload = encode_glb(out_mesh)
    _atomic_output(d / "remesh.glb", lambda p: p.write_bytes(payload))
    rep = report.to_dict()
    _atomic_output(d / "remesh_report.json", lambda p: p.write_text(json.dumps(rep, indent=1, sort_keys=True)))
    return {"mesh": d / "remesh.glb", "report": d / "remesh_report.json"}, {
        "watertight": bool(rep.get("is_watertight")), "manifold": bool(rep.get("is_manifold"))}


def _stage_sample(ws, m, params, inputs):
    from .meshio import load_mesh
    from .sampler import export_training_samples, mesh_digest
    from .sdf import TsdfSpec

    mesh = load_mesh(inputs["remesh"]["mesh"])
    seed = int(mesh_digest(mesh)[:8], 16)
    out = asset_dir(ws, m["asset_id"]) / "samples.tsdfsamples"
    _atomic_output(out, lambda p: export_training_samples(
        mesh, p, TsdfSpec(truncation=float(params["truncation"])), int(params["near_count"]),
        int(params["volume_count"]), float(params["near_sigma"]), seed))
    return {"samples": out}, {"seed": seed}


def _stage_bake(ws, m, params, inputs):
    from .bake import bake_uv, fallback_chart, finalize_texture, save_mask_png, save_png
    from .meshio import encode_glb, load_mesh
    from .views import make_canonical_cameras, orbit_camera, render_view

    source = load_mesh(inputs["normalize"]["mesh"])
    target = load_mesh(inputs["remesh"]["mesh"])
    size = int(params["size"])
    vs = int(params["view_size"])
    cams = make_canonical_cameras(4, (vs, vs))
    if int(params["views"]) >= 6:
        cams += [orbit_camera(0.0, 89.0, (vs, vs)), orbit_camera(0.0, -89.0, (vs, vs))]
    views = [(c, render_view(source, c).rgb) for c in cams[: max(1, int(params["views"]))]]
    charted = fallback_chart(target, size)
    tex = bake_uv(charted, views, size)
    img, mask = finalize_texture(tex)
    d = asset_dir(ws, m["asset_id"])
    _atomic_output(d / "albedo.png", lambda p: save_png(p, img))
    _atomic_output(d / "holes.png", lambda p: save_mask_png(p, mask))
    payload = encode_glb(charted)
    _atomic_output(d / "textured.glb", lambda p: p.write_bytes(payload))
    return {"texture": d / "albedo.png", "mask": d / "holes.png", "mesh": d / "textured.glb"}, {
        "hole_fraction": tex.hole_fraction()}


RUNNERS = {
    "convert": _stage_convert,
    "normalize": _stage_normalize,
    "remesh": _stage_remesh,
    "sample": _stage_sample,
    "bake": _stage_bake,
}


# -- execution -------------------------------------------------------------------------


def _output_record(ws: Path, outputs: dict) -> dict:
    return {k: {"path": str(Path(p).relative_to(ws)), "sha256": file_sha256(p)} for k, p in sorted(outputs.items())}


def _outputs_intact(ws: Path, st: dict) -> bool:
    for rec in (st.get("outputs") or {}).values():
        p = ws / rec["path"]
        if not p.exists() or file_sha256(p) != rec["sha256"]:
            return False
    return True


def _upstream(ws: Path, m: dict, stage: str) -> dict:
    deps = list(DEPENDS[stage])
    if stage in DOWNSTREAM_OF_DEDUP and m["stages"]["dedup"]["status"] == "done":
        deps.append("dedup")
    if stage == "bake":
        deps.append("normalize")
    return {d: {k: ws / rec["path"] for k, rec in m["stages"][d]["outputs"].items()} for d in deps}


def _snapshot(m: dict, stage: str, params: dict) -> dict:
    deps = list(DEPENDS[stage]) + (["normalize"] if stage == "bake" else [])
    up = {d: {k: r["sha256"] for k, r in m["stages"][d]["outputs"].items()} for d in deps}
    if stage == "convert":
        up["source"] = file_sha256(m["source_path"]) if os.path.exists(m["source_path"]) else None
    if stage in DOWNSTREAM_OF_DEDUP:
        up["dedup"] = (m["stages"]["dedup"].get("result") or {}).get("decision")
    return {"params": params, "inputs": up}


def _is_current(ws: Path, st: dict, snap: dict, retry_failed: bool) -> bool:
    if st["snapshot"] is None or _canonical(st["snapshot"]) != _canonical(snap):
        return False
    if st["status"] == "done":
        return _outputs_intact(ws, st)
    return st["status"] == "failed" and not retry_failed


def _run_stage(ws: Path, m: dict, stage: str, params: dict, runner, executed: list, retry_failed: bool) -> bool:
    """Run one stage if it is stale. Returns True when the stage ended in ``done``."""
    st = m["stages"][stage]
    for dep in DEPENDS[stage]:
        if m["stages"][dep]["status"] != "done":
            return False
    snap = _snapshot(m, stage, params)
    if _is_current(ws, st, snap, retry_failed):
        return st["status"] == "done"
    _transition(ws, m, stage, "running", params=params, snapshot=snap, outputs={}, result=None)
    try:
        outputs, result = runner(ws, m, params, _upstream(ws, m, stage))
    except (MeshkitError, OSError, ValueError) as exc:
        executed.append((m["asset_id"], stage))
        _transition(ws, m, stage, "failed", error=f"{type(exc).__name__}: {exc}")
        return False
    executed.append((m["asset_id"], stage))
    _transition(ws, m, stage, "done", outputs=_output_record(ws, outputs), result=result)
    return True


def _asset_phase(ws: str, asset_id: str, source: str, stages: tuple, params: dict, phase: str, retry_failed: bool):
    ws = Path(ws)
    executed, log = [], []
    m = load_or_create(ws, asset_id, source, log)
    if phase == "pre":
        for s in ("convert", "normalize"):
            if s in stages:
                _run_stage(ws, m, s, params[s], RUNNERS[s], executed, retry_failed)
        if "dedup" in stages and m["stages"]["normalize"]["status"] == "done":
            _ensure_descriptor(ws, m, executed)
    else:
        for s in ("remesh", "sample", "bake"):
            if s not in stages:
                continue
            if m["terminal"] == REMOVED:
                break
            if "dedup" in stages and m["stages"]["dedup"]["status"] != "done":
                break
            _run_stage(ws, m, s, params[s], RUNNERS[s], executed, retry_failed)
    return executed, log


def _ensure_descriptor(ws: Path, m: dict, executed: list) -> None:
    """The descriptor is a cached by-product of the dedup stage keyed on the normalized mesh."""
    key = m["stages"]["normalize"]["outputs"]["mesh"]["sha256"]
    cache = m.get("descriptor")
    if cache and cache.get("key") == key and (ws / cache["path"]).exists() and file_sha256(ws / cache["path"]) == cache["sha256"]:
        return
    outputs, _ = _stage_descriptor(ws, m, {}, _upstream(ws, m, "dedup"))
    rec = _output_record(ws, outputs)["descriptor"]
    m["descriptor"] = {"key": key, **rec}
    executed.append((m["asset_id"], "dedup:descriptor"))
    write_manifest(ws, m)


def _global_dedup(ws: Path, manifests: dict, params: dict, executed: list, retry_failed: bool) -> dict:
    from .dedup import dedup_filter, read_descriptors

    eligible = sorted(a for a, m in manifests.items() if m["stages"]["normalize"]["status"] == "done" and m.get("descriptor"))
    corpus = {a: manifests[a]["descriptor"]["sha256"] for a in eligible}
    snap = {"params": params, "corpus": corpus}
    report_path = ws / "dedup" / "report.json"
    report = None
    if report_path.exists():
        try:
            prev = json.loads(report_path.read_text())
            if _canonical(prev.get("snapshot")) == _canonical(snap):
                report = prev
        except json.JSONDecodeError:
            report = None
    if report is None:
        descs = [read_descriptors(ws / manifests[a]["descriptor"]["path"], "geometric_default")[0] for a in eligible]
        report = dedup_filter(descs, float(params["t_cos"]), float(params["t_l2"]), params.get("combine", "and"))
        report["snapshot"] = snap
        report_path.parent.mkdir(parents=True, exist_ok=True)
        atomic_write_text(report_path, json.dumps(report, indent=1, sort_keys=True))
        fault_point("dedup:report")
        executed.append(("*", "dedup"))
    removed = {r["id"]: r for r in report["removed"]}
    for a in eligible:
        m = manifests[a]
        st = m["stages"]["dedup"]
        decision = "removed" if a in removed else "kept"
        asnap = {"params": params, "corpus": corpus}
        if st["status"] == "done" and _canonical(st["snapshot"]) == _canonical(asnap) and (st.get("result") or {}).get("decision") == decision:
            continue
        _transition(ws, m, "dedup", "running", params=params, snapshot=asnap, outputs={}, result=None)
        m["terminal"] = REMOVED if decision == "removed" else None
        result = {"decision": decision}
        if decision == "removed":
            result["witness"] = removed[a]["witness"]
            result["kept"] = removed[a]["kept"]
        executed.append((a, "dedup"))
        _transition(ws, m, "dedup", "done", result=result)
    return report


def _asset_ids(inputs) -> list:
    pairs = []
    for p in inputs:
        stem = Path(p).stem
        pairs.append((stem, str(Path(p).resolve())))
    ids = [a for a, _ in pairs]
    dup = {a for a in ids if ids.count(a) > 1}
    if dup:
        raise ConfigError(f"asset ids collide: {sorted(dup)}")
    return sorted(pairs)


def _map(jobs: int, fn, calls):
    if jobs <= 1 or len(calls) <= 1:
        return [fn(*c) for c in calls]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futs = [pool.submit(fn, *c) for c in calls]
        return [f.result() for f in futs]


def save_run_state(config: PipelineConfig, inputs) -> None:
    ws = config.workspace
    ws.mkdir(parents=True, exist_ok=True)
    atomic_write_text(ws / "pipeline.json", json.dumps({"config": config.to_dict(), "inputs": [str(Path(p).resolve()) for p in inputs]},
                                                       indent=1, sort_keys=True))


def run_pipeline(config: PipelineConfig, inputs, retry_failed: bool = False) -> dict:
    """Run (or resume) every stage for every asset; safe to interrupt at any point."""
    ws = config.workspace
    assets = _asset_ids(inputs)
    for _, src in assets:
        if not os.path.exists(src):
            raise ConfigError(f"input not found: {src}")
    save_run_state(config, inputs)
    t0 = time.time()
    executed, log = [], []
    calls = [(str(ws), a, src, config.stages, config.params, "pre", retry_failed) for a, src in assets]
    for ex, lg in _map(config.jobs, _asset_phase, calls):
        executed += ex
        log += lg
    manifests = {a: read_manifest(manifest_path(ws, a)) for a, _ in assets}
    dedup_report = None
    if "dedup" in config.stages:
        dedup_report = _global_dedup(ws, manifests, config.params["dedup"], executed, retry_failed)
    calls = [(str(ws), a, src, config.stages, config.params, "post", retry_failed) for a, src in assets]
    for ex, lg in _map(config.jobs, _asset_phase, calls):
        executed += ex
        log += lg
    summary = summarize(ws, config.stages, [a for a, _ in assets])
    summary["workspace"] = str(ws)
    summary["executed"] = [list(e) for e in executed]
    summary["work_count"] = len(executed)
    summary["events"] = log
    summary["elapsed_s"] = time.time() - t0
    if dedup_report is not None:
        summary["dedup"] = {"clusters": dedup_report["clusters"], "threshold_check": dedup_report["threshold_check"]}
    return summary


def resume(workspace, retry_failed: bool = False, jobs: int | None = None) -> dict:
    ws = Path(workspace)
    state_path = ws / "pipeline.json"
    try:
        state = json.loads(state_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{ws} has no readable pipeline state: {exc}") from exc
    cfg = PipelineConfig.from_dict(state["config"], workspace=ws)
    if jobs is not None:
        cfg.jobs = jobs
    return run_pipeline(cfg, state["inputs"], retry_failed)


# -- status ----------------------------------------------------------------------------


def _load_all(ws: Path, ids=None):
    root = Path(ws) / "assets"
    names = ids if ids is not None else (sorted(p.name for p in root.iterdir() if p.is_dir()) if root.exists() else [])
    out = {}
    for a in names:
        try:
            out[a] = read_manifest(manifest_path(ws, a))
        except CorruptManifest:
            out[a] = None
    return out


def summarize(ws: Path, stages, ids=None) -> dict:
    manifests = _load_all(ws, ids)
    done = failed = removed = corrupt = 0
    for m in manifests.values():
        if m is None:
            corrupt += 1
            continue
        sts = [m["stages"][s]["status"] for s in stages if not (m["terminal"] == REMOVED and s in DOWNSTREAM_OF_DEDUP)]
        if m["terminal"] == REMOVED:
            removed += 1
        if "failed" in sts:
            failed += 1
        elif all(s == "done" for s in sts):
            done += 1
    return {"assets": len(manifests), "done": done, "failed": failed, "removed": removed, "corrupt": corrupt,
            "pending": len(manifests) - done - failed - corrupt}


def status(workspace, stage: str | None = None, state: str | None = None) -> dict:
    """Read-only view of every manifest with per-stage counts."""
    if stage is not None and stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}")
    if state is not None and state not in STATES:
        raise ConfigError(f"unknown state {state!r}")
    manifests = _load_all(workspace)
    # inputs registered for a run but not yet touched count as pending everywhere
    try:
        run_state = json.loads((Path(workspace) / "pipeline.json").read_text())
        registered = [a for a, _ in _asset_ids(run_state.get("inputs", []))]
    except (OSError, json.JSONDecodeError, ConfigError):
        registered = []
    for a in registered:
        if a not in manifests:
            manifests[a] = new_manifest(a, "")
    rows, counts = [], {s: {k: 0 for k in STATES} for s in STAGES}
    for a, m in sorted(manifests.items()):
        if m is None:
            rows.append({"asset": a, "corrupt": True, "stages": {}, "terminal": None})
            continue
        sts = {s: m["stages"][s]["status"] for s in STAGES}
        for s, v in sts.items():
            if m["terminal"] == REMOVED and s in DOWNSTREAM_OF_DEDUP:
                continue
            counts[s][v] += 1
        row = {"asset": a, "stages": sts, "terminal": m["terminal"], "content_hash64": m["content_hash64"]}
        if stage is not None and state is not None and sts[stage] != state:
            continue
        if stage is None and state is not None and state not in sts.values():
            continue
        rows.append(row)
    return {"workspace": str(workspace), "counts": counts, "assets": rows}


def format_status_table(report: dict, stage: str | None = None) -> str:
    cols = [stage] if stage else list(STAGES)
    lines = ["\t".join(["asset"] + cols + ["terminal"])]
    for r in report["assets"]:
        if r.get("corrupt"):
            lines.append(f"{r['asset']}\tCORRUPT")
            continue
        cells = [r["stages"][c] for c in cols]
        lines.append("\t".join([r["asset"]] + cells + [r["terminal"] or "-"]))
    return "\n".join(lines)


def artifact_hashes(workspace) -> dict:
    """sha256 of every stage output in the workspace, keyed by relative path."""
    ws = Path(workspace)
    out = {}
    for sub in ("assets", "dedup"):
        root = ws / sub
        if not root.exists():
            continue
        for p in sorted(root.rglob("*")):
            if p.is_file() and p.name != "manifest.json" and not p.name.startswith("."):
                if p.name == "report.json":
                    d = json.loads(p.read_text())
                    out[str(p.relative_to(ws))] = hashlib.sha256(_canonical(d).encode()).hexdigest()
                else:
                    out[str(p.relative_to(ws))] = file_sha256(p)
    return out
