"""Watertight remeshing: boundary voxelization, exterior flood fill, signed node
distances and dual-contour extraction at an outward iso-offset.

Voxel (i, j, k) is the cube of side h centred on grid node (i, j, k), so voxel
flags and node values share one index space.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import ndimage

from .bvh import TriangleBVH
from .dmc import BAD_CONFIG, CORNER_OFFSETS, active_cells_dense, corner_values, dual_contour
from .errors import ConfigError, EmptyIsoSurface, NoBoundary, ResolutionTooLow
from .mesh import MeshReport, TriMesh, validate_mesh
from .sdf import BOUNDARY, EXTERIOR, INTERIOR, UNKNOWN, SdfGrid

log = logging.getLogger(__name__)

_SIX = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class RemeshParams:
    resolution: int = 64
    epsilon_cells: float = 0.25
    margin_cells: int = 3
    normal_source: str = "original_mesh"

    def __post_init__(self):
        if self.resolution < 8:
            raise ConfigError("resolution must be at least 8")
        if not 0 <= self.epsilon_cells < 1:
            raise ConfigError("epsilon must be non-negative and below one cell")
        if self.margin_cells < 2 or self.resolution - 1 <= 2 * self.margin_cells:
            raise ConfigError("margin must be at least 2 cells and leave room for the mesh")
        if self.normal_source not in ("original_mesh", "field_gradient"):
            raise ConfigError(f"unknown normal source {self.normal_source!r}")

    def to_dict(self):
        return {
            "resolution": self.resolution,
            "epsilon_cells": self.epsilon_cells,
            "margin_cells": self.margin_cells,
            "normal_source": self.normal_source,
        }


def remesh_domain(mesh: TriMesh, params: RemeshParams):
    """Cubic domain around the mesh bbox leaving margin_cells of free voxels on every side."""
    lo, hi = mesh.bounds()
    center = (lo + hi) / 2.0
    radius = float(np.max(hi - lo)) / 2.0
    n1 = params.resolution - 1
    half = radius / (1.0 - 2.0 * params.margin_cells / n1)
    if half <= 0:
        half = 1.0
    return center - half, center + half


# -- voxelization -------------------------------------------------------------


@njit(cache=True, inline="always")
def _axis_test(ax, ay, az, v0, v1, v2, hx, hy, hz):
    p0 = ax * v0[0] + ay * v0[1] + az * v0[2]
    p1 = ax * v1[0] + ay * v1[1] + az * v1[2]
    p2 = ax * v2[0] + ay * v2[1] + az * v2[2]
    r = hx * abs(ax) + hy * abs(ay) + hz * abs(az)
    mn = min(p0, p1, p2)
    mx = max(p0, p1, p2)
    return not (mn > r or mx < -r)


@njit(cache=True)
def tri_box_overlap(center, half, a, b, c):
    """Separating-axis triangle/AABB overlap test (13 axes)."""
    v0 = a - center
    v1 = b - center
    v2 = c - center
    hx, hy, hz = half[0], half[1], half[2]
    for k in range(3):
        mn = min(v0[k], v1[k], v2[k])
        mx = max(v0[k], v1[k], v2[k])
        if mn > half[k] or mx < -half[k]:
            return False
    e0 = v1 - v0
    e1 = v2 - v1
    e2 = v0 - v2
    for e in (e0, e1, e2):
        # cross(unit axis, e) for x, y, z
        if not _axis_test(0.0, -e[2], e[1], v0, v1, v2, hx, hy, hz):
            return False
        if not _axis_test(e[2], 0.0, -e[0], v0, v1, v2, hx, hy, hz):
            return False
        if not _axis_test(-e[1], e[0], 0.0, v0, v1, v2, hx, hy, hz):
            return False
    n = np.cross(e0, e1)
    return _axis_test(n[0], n[1], n[2], v0, v1, v2, hx, hy, hz)


@njit(cache=True)
def _voxelize(a, b, c, origin, spacing, dims, inflate):
    flags = np.zeros((dims[0], dims[1], dims[2]), dtype=np.uint8)
    half = spacing * 0.5 * (1.0 + inflate)
    center = np.empty(3)
    for t in range(a.shape[0]):
        lo = np.empty(3, dtype=np.int64)
        hi = np.empty(3, dtype=np.int64)
        for k in range(3):
            mn = min(a[t, k], b[t, k], c[t, k])
            mx = max(a[t, k], b[t, k], c[t, k])
            lo[k] = max(0, int(np.floor((mn - origin[k]) / spacing[k] - 0.5 - inflate)))
            hi[k] = min(dims[k] - 1, int(np.ceil((mx - origin[k]) / spacing[k] + 0.5 + inflate)))
        for i in range(lo[0], hi[0] + 1):
            center[0] = origin[0] + i * spacing[0]
            for j in range(lo[1], hi[1] + 1):
                center[1] = origin[1] + j * spacing[1]
                for k in range(lo[2], hi[2] + 1):
                    if flags[i, j, k]:
                        continue
                    center[2] = origin[2] + k * spacing[2]
                    if tri_box_overlap(center, half, a[t], b[t], c[t]):
                        flags[i, j, k] = 1
    return flags


def voxelize_on_grid(mesh: TriMesh, domain, dims, inflate: float = 1e-6) -> np.ndarray:
    """Boolean array: voxel touched by at least one triangle."""
    lo, hi = (np.asarray(x, dtype=np.float64) for x in domain)
    dims = np.asarray(dims, dtype=np.int64)
    spacing = (hi - lo) / (dims - 1)
    c = mesh.corners()
    return _voxelize(
        np.ascontiguousarray(c[:, 0]), np.ascontiguousarray(c[:, 1]), np.ascontiguousarray(c[:, 2]), lo, spacing, dims, inflate
    ).astype(bool)


def voxelize_boundary(mesh: TriMesh, params: RemeshParams = RemeshParams()) -> SdfGrid:
    if mesh.triangle_count == 0:
        raise NoBoundary("mesh has no triangles")
    domain = remesh_domain(mesh, params)
    dims = (params.resolution,) * 3
    h = float(np.max((domain[1] - domain[0]) / (params.resolution - 1)))
    lo, hi = mesh.bounds()
    if np.all(hi - lo < h):
        raise ResolutionTooLow(f"mesh extent {np.max(hi - lo):.3g} is below the cell size {h:.3g} on every axis")
    boundary = voxelize_on_grid(mesh, domain, dims)
    flags = np.where(boundary, BOUNDARY, UNKNOWN).astype(np.uint8)
    return SdfGrid(values=np.zeros(dims), domain=domain, flags=flags, meta={"params": params.to_dict()})


# -- classification ------------------------------------------------------------


def exterior_mask(boundary: np.ndarray) -> np.ndarray:
    """6-connected flood through non-boundary voxels from every domain-boundary voxel."""
    free = ~boundary
    labels, _ = ndimage.label(free, structure=_SIX)
    faces = np.concatenate(
        [labels[0].ravel(), labels[-1].ravel(), labels[:, 0].ravel(), labels[:, -1].ravel(), labels[:, :, 0].ravel(), labels[:, :, -1].ravel()]
    )
    seeds = np.unique(faces[faces > 0])
    ext = np.isin(labels, seeds)
    assert not np.any(ext & boundary), "exterior flood crossed a boundary voxel"
    return ext


def floodfill_classify(grid: SdfGrid, mesh: TriMesh | None = None) -> SdfGrid:
    """Complete the flags and fill signed node distances (exterior positive).

    Nodes in the boundary band (boundary voxels and their 26 neighbours) get the
    exact unsigned distance to ``mesh`` when it is given; all other nodes use a
    Euclidean distance transform to the nearest boundary voxel.
    """
    boundary = grid.flags == BOUNDARY
    if not boundary.any():
        raise NoBoundary("no boundary voxels")
    ext = exterior_mask(boundary)
    flags = np.full(grid.dims, INTERIOR, dtype=np.uint8)
    flags[ext] = EXTERIOR
    flags[boundary] = BOUNDARY
    spacing = grid.spacing
    dist = ndimage.distance_transform_edt(~boundary, sampling=spacing)
    if mesh is not None:
        band = ndimage.binary_dilation(boundary, structure=np.ones((3, 3, 3), dtype=bool))
        idx = np.argwhere(band)
        pts = grid.domain[0] + idx * spacing
        d, _, _ = TriangleBVH(mesh.vertices, mesh.triangles).closest(pts)
        dist[band] = d
    values = np.where(flags == EXTERIOR, dist, -dist)
    return SdfGrid(values=values, domain=grid.domain, flags=flags, meta=dict(grid.meta))


def floodfill_sign_grid(mesh: TriMesh, domain, dims) -> np.ndarray:
    """+1 for exterior voxels, -1 for boundary and interior voxels."""
    boundary = voxelize_on_grid(mesh, domain, dims)
    if not boundary.any():
        raise NoBoundary("mesh does not touch the grid")
    return np.where(exterior_mask(boundary), 1.0, -1.0)


# -- extraction ----------------------------------------------------------------


def repair_configurations(values: np.ndarray, iso: float, push: float) -> tuple[np.ndarray, int]:
    """Flip corners of cells whose inside or outside corners are disconnected.

    Every corner of such a cell is moved to iso - push, repeated until no cell
    is left in an ambiguous configuration. Returns (values, number of flipped cells).
    """
    v = values.copy()
    nx, ny, nz = (n - 1 for n in v.shape)
    total = 0
    for _ in range(10_000):
        inside = v < iso
        mask = np.zeros((nx, ny, nz), dtype=np.int64)
        for c, (dx, dy, dz) in enumerate(CORNER_OFFSETS):
            mask |= inside[dx:dx + nx, dy:dy + ny, dz:dz + nz].astype(np.int64) << c
        bad = BAD_CONFIG[mask]
        n_bad = int(bad.sum())
        if n_bad == 0:
            return v, total
        total += n_bad
        fill = np.zeros(v.shape, dtype=bool)
        for dx, dy, dz in CORNER_OFFSETS:
            fill[dx:dx + nx, dy:dy + ny, dz:dz + nz] |= bad
        v[fill & ~inside] = iso - push
    raise RuntimeError("configuration repair did not converge")


def _trilinear(arr: np.ndarray, origin, spacing, pts: np.ndarray) -> np.ndarray:
    coords = ((pts - origin) / spacing).T
    return np.stack([ndimage.map_coordinates(arr[..., c], coords, order=1, mode="nearest") for c in range(arr.shape[-1])], axis=1)


def extract_watertight(grid: SdfGrid, mesh: TriMesh | None = None, params: RemeshParams = RemeshParams(), stats: dict | None = None) -> TriMesh:
    spacing = grid.spacing
    h = float(spacing.max())
    iso = params.epsilon_cells * h
    values, flipped = repair_configurations(grid.values, iso, 1e-3 * h)
    if stats is not None:
        stats["repaired_cells"] = flipped
    cells = active_cells_dense(values, iso)
    if len(cells) == 0:
        raise EmptyIsoSurface("field has no crossing at the extraction level")
    dims_cells = tuple(n - 1 for n in grid.dims)
    verts, tris, _ = dual_contour(cells, corner_values(values, cells), dims_cells, grid.domain[0], spacing, iso)

    grad = np.stack(np.gradient(values, *spacing), axis=-1)
    g = _trilinear(grad, grid.domain[0], spacing, verts)
    gn = np.linalg.norm(g, axis=1, keepdims=True)
    out = TriMesh(verts, tris, name=mesh.name if mesh is not None else "remeshed")
    fallback = out.vertex_normals()
    normals = np.where(gn > 1e-12, g / np.where(gn > 1e-12, gn, 1.0), fallback)
    if params.normal_source == "original_mesh" and mesh is not None:
        d, _, t = TriangleBVH(mesh.vertices, mesh.triangles).closest(verts, 2.0 * h)
        near = t >= 0
        fn = mesh.face_normals()[t[near]]
        # source faces may be inconsistently oriented; align them with the field
        flip = np.einsum("ij,ij->i", fn, normals[near]) < 0
        fn[flip] *= -1.0
        good = np.linalg.norm(fn, axis=1) > 0.5
        sub = normals[near]
        sub[good] = fn[good]
        normals[near] = sub
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return out.replace(normals=normals)


def remesh_watertight(mesh: TriMesh, params: RemeshParams = RemeshParams()) -> tuple[TriMesh, MeshReport]:
    t0 = time.perf_counter()
    grid = voxelize_boundary(mesh, params)
    grid = floodfill_classify(grid, mesh)
    stats = {}
    out = extract_watertight(grid, mesh, params, stats)
    report = validate_mesh(out)
    log.info("remesh %s: %d -> %d triangles, %d repaired cells, %.2fs", mesh.name, mesh.triangle_count, out.triangle_count,
             stats.get("repaired_cells", 0), time.perf_counter() - t0)
    return out, report
