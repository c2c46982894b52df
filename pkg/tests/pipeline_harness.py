"""Helpers for pipeline tests: small inputs, a fast config, and a forked crash runner."""

import multiprocessing as mp
import os

from meshkit.meshio import write_mesh
from meshkit.pipeline import FAULT_ENV, PipelineConfig, reset_fault_counter, run_pipeline
from meshkit.primitives import cube, l_bracket, icosphere, torus

FAST_PARAMS = {
    "remesh": {"resolution": 24},
    "sample": {"near_count": 400, "volume_count": 400},
    "bake": {"size": 512, "view_size": 64},
}


def write_inputs(folder, names=("a_cube", "b_sphere", "c_torus", "d_cube_big", "e_bracket")):
    meshes = {
        "a_cube": cube(0.5),
        "b_sphere": icosphere(2, radius=0.7),
        "c_torus": torus(),
        # a scaled and shifted copy of a_cube: dedup must remove it
        "d_cube_big": cube(2.0).replace(vertices=cube(2.0).vertices + 5.0),
        "e_bracket": l_bracket(),
    }
    folder.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, n in enumerate(names):
        p = folder / (f"{n}.obj" if i % 2 == 0 else f"{n}.glb")
        write_mesh(meshes[n], p)
        paths.append(str(p))
    return paths


def config(workspace, **overrides):
    params = {k: dict(v) for k, v in FAST_PARAMS.items()}
    for stage, extra in overrides.items():
        params.setdefault(stage, {}).update(extra)
    return PipelineConfig(workspace, params=params)


def _child(cfg, inputs, fault_at):
    os.environ[FAULT_ENV] = str(fault_at)
    reset_fault_counter()
    run_pipeline(cfg, inputs)
    os._exit(0)


def run_until_fault(cfg, inputs, fault_at: int) -> int:
    """Run the pipeline in a forked child that hard-exits at crash point ``fault_at``; returns its exit code."""
    proc = mp.get_context("fork").Process(target=_child, args=(cfg, inputs, fault_at))
    proc.start()
    proc.join()
    return proc.exitcode
