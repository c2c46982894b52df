"""Hierarchical iso-surface extraction over scalar fields.

A reduced-precision scan marks candidate cells, then only those cells are
evaluated at full precision and meshed by the shared dual-contour core.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import dmc
from .errors import ConfigError, EmptyIsoSurface, OutOfDomain
from .mesh import TriMesh
from .sdf import MeshSdf, SdfGrid, grid_axes, grid_points

QUANT_REL = 2.0**-7
QUANT_ABS = 1e-7


def to_bfloat16(values) -> np.ndarray:
    """Round float32 values to 8 significant bits (round to nearest, ties to even)."""
    f = np.ascontiguousarray(values, dtype=np.float32)
    bits = f.view(np.uint32).astype(np.uint64)
    rounded = (bits + 0x7FFF + ((bits >> 16) & 1)) & 0xFFFF0000
    out = rounded.astype(np.uint32).view(np.float32)
    # keep non-finite inputs as they were
    return np.where(np.isfinite(f), out, f).astype(np.float32)


def quantization_bound(coarse) -> np.ndarray:
    return np.abs(np.asarray(coarse, dtype=np.float64)) * QUANT_REL + QUANT_ABS


@dataclass
class SdfField:
    """A scalar field on an axis-aligned domain.

    ``evaluate`` maps (M, 3) points to (M,) values. ``evaluate_grid`` may be
    supplied to evaluate whole node lattices faster; it must agree exactly with
    ``evaluate`` at the lattice points.
    """

    evaluate: Callable
    domain: tuple
    evaluate_coarse: Callable | None = None
    gradient: Callable | None = None
    lipschitz: float = 1.0
    evaluate_grid: Callable | None = None
    name: str = "field"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        lo, hi = (np.asarray(x, dtype=np.float64) for x in self.domain)
        if np.any(hi <= lo):
            raise ConfigError("field domain must have positive extent")
        self.domain = (lo, hi)

    def coarse(self, points) -> np.ndarray:
        if self.evaluate_coarse is not None:
            return np.asarray(self.evaluate_coarse(points), dtype=np.float32)
        return to_bfloat16(self.evaluate(points))

    def lattice(self, dims) -> np.ndarray:
        if self.evaluate_grid is not None:
            return np.asarray(self.evaluate_grid(self.domain, dims), dtype=np.float64)
        return np.asarray(self.evaluate(grid_points(self.domain, dims)), dtype=np.float64).reshape(dims)

    def coarse_lattice(self, dims) -> np.ndarray:
        if self.evaluate_coarse is not None:
            return self.coarse(grid_points(self.domain, dims)).reshape(dims)
        return to_bfloat16(self.lattice(dims))


@dataclass(frozen=True)
class ActiveCellSet:
    resolution: tuple
    cells: np.ndarray
    pruned_fraction: float

    @property
    def count(self) -> int:
        return len(self.cells)


def _dims(resolution) -> tuple:
    r = (int(resolution),) * 3 if np.isscalar(resolution) else tuple(int(x) for x in resolution)
    if min(r) < 1:
        raise ConfigError("resolution must be at least one cell per axis")
    return r


def _spacing(field_: SdfField, res) -> np.ndarray:
    lo, hi = field_.domain
    return (hi - lo) / np.asarray(res)


def coarse_scan(field_: SdfField, resolution, iso: float = 0.0) -> ActiveCellSet:
    """Cells not provably on one side of iso, using reduced-precision corner values."""
    res = _dims(resolution)
    nodes = tuple(r + 1 for r in res)
    c = field_.coarse_lattice(nodes).astype(np.float64)
    margin = quantization_bound(c) + field_.lipschitz * float(_spacing(field_, res).max())
    above = (c - iso) > margin
    below = (c - iso) < -margin
    nx, ny, nz = res
    all_above = np.ones(res, dtype=bool)
    all_below = np.ones(res, dtype=bool)
    for dx, dy, dz in dmc.CORNER_OFFSETS:
        all_above &= above[dx:dx + nx, dy:dy + ny, dz:dz + nz]
        all_below &= below[dx:dx + nx, dy:dy + ny, dz:dz + nz]
    act = ~(all_above | all_below)
    cells = np.argwhere(act.transpose(2, 1, 0))[:, ::-1].astype(np.int64)
    total = nx * ny * nz
    return ActiveCellSet(res, np.ascontiguousarray(cells), 1.0 - len(cells) / total)


def extract_hierarchical(field_: SdfField, resolution, iso: float = 0.0, stats: dict | None = None) -> TriMesh:
    t0 = time.perf_counter()
    scan = coarse_scan(field_, resolution, iso)
    t1 = time.perf_counter()
    res = scan.resolution
    if scan.count == 0:
        raise EmptyIsoSurface("coarse scan found no candidate cells")
    nodes = tuple(r + 1 for r in res)
    # unique nodes of the candidate cells, evaluated once at full precision
    corner_ids = np.stack(
        [
            (scan.cells[:, 0] + dx) + nodes[0] * ((scan.cells[:, 1] + dy) + nodes[1] * (scan.cells[:, 2] + dz))
            for dx, dy, dz in dmc.CORNER_OFFSETS
        ],
        axis=1,
    )
    uniq, inv = np.unique(corner_ids, return_inverse=True)
    xs, ys, zs = grid_axes(field_.domain, nodes)
    iz, rem = np.divmod(uniq, nodes[0] * nodes[1])
    iy, ix = np.divmod(rem, nodes[0])
    pts = np.stack([xs[ix], ys[iy], zs[iz]], axis=1)
    vals = np.asarray(field_.evaluate(pts), dtype=np.float64)
    corner_vals = vals[inv.reshape(-1, 8)]
    t2 = time.perf_counter()
    v, t, _ = dmc.dual_contour(scan.cells, corner_vals, res, field_.domain[0], _spacing(field_, res), iso)
    if stats is not None:
        stats.update(
            mode="hierarchical",
            resolution=list(res),
            total_cells=int(np.prod(res)),
            candidate_cells=scan.count,
            active_cells=int(np.count_nonzero((corner_vals < iso).any(axis=1) & (corner_vals >= iso).any(axis=1))),
            pruned_fraction=scan.pruned_fraction,
            full_evaluations=int(len(uniq)),
            coarse_evaluations=int(np.prod(nodes)),
            time_scan=t1 - t0,
            time_refine=t2 - t1,
            time_mesh=time.perf_counter() - t2,
        )
    return TriMesh(v, t, name=field_.name)


def dense_extract(field_: SdfField, resolution, iso: float = 0.0, stats: dict | None = None) -> TriMesh:
    t0 = time.perf_counter()
    res = _dims(resolution)
    nodes = tuple(r + 1 for r in res)
    values = field_.lattice(nodes)
    t1 = time.perf_counter()
    cells = dmc.active_cells_dense(values, iso)
    if len(cells) == 0:
        raise EmptyIsoSurface("field has no crossing at the iso-level")
    v, t, _ = dmc.dual_contour(cells, dmc.corner_values(values, cells), res, field_.domain[0], _spacing(field_, res), iso)
    if stats is not None:
        stats.update(mode="dense", resolution=list(res), total_cells=int(np.prod(res)), full_evaluations=int(np.prod(nodes)), active_cells=len(cells),
                     time_eval=t1 - t0, time_mesh=time.perf_counter() - t1)
    return TriMesh(v, t, name=field_.name)


def estimate_gradient(field_: SdfField, p, mode: str = "analytic_if_available", h: float = 1e-4) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64).reshape(3)
    lo, hi = field_.domain
    if np.any(p - h < lo) or np.any(p + h > hi):
        raise OutOfDomain(f"point {p} is closer than {h} to the domain boundary")
    if mode == "analytic_if_available" and field_.gradient is not None:
        return np.asarray(field_.gradient(p[None, :]), dtype=np.float64).reshape(3)
    if mode not in ("analytic_if_available", "central_difference"):
        raise ConfigError(f"unknown gradient mode {mode!r}")
    plus = p + h * np.eye(3)
    minus = p - h * np.eye(3)
    f = np.asarray(field_.evaluate(np.concatenate([plus, minus])), dtype=np.float64)
    # divide by the step actually taken so linear fields differentiate exactly
    step = np.diag(plus - minus)
    return (f[:3] - f[3:]) / step


# -- built-in fields -------------------------------------------------------------

_UNIT = (np.full(3, -1.0), np.full(3, 1.0))


def sphere_field(radius: float = 0.8, center=(0.0, 0.0, 0.0), domain=_UNIT) -> SdfField:
    c = np.asarray(center, dtype=np.float64)

    def ev(p):
        return np.linalg.norm(np.atleast_2d(p) - c, axis=1) - radius

    def grad(p):
        d = np.atleast_2d(p) - c
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    return SdfField(ev, domain, gradient=grad, name="sphere")


def torus_field(major: float = 0.6, minor: float = 0.25, domain=_UNIT) -> SdfField:
    def ev(p):
        p = np.atleast_2d(p)
        q = np.sqrt(p[:, 0] ** 2 + p[:, 1] ** 2) - major
        return np.sqrt(q**2 + p[:, 2] ** 2) - minor

    def grad(p):
        p = np.atleast_2d(p)
        rxy = np.sqrt(p[:, 0] ** 2 + p[:, 1] ** 2)
        q = rxy - major
        n = np.sqrt(q**2 + p[:, 2] ** 2)
        return np.stack([q * p[:, 0] / rxy, q * p[:, 1] / rxy, p[:, 2]], axis=1) / n[:, None]

    return SdfField(ev, domain, gradient=grad, name="torus")


def plane_field(normal=(0.0, 0.0, 1.0), offset: float = 0.0, domain=_UNIT) -> SdfField:
    n = np.asarray(normal, dtype=np.float64)
    n = n / np.linalg.norm(n)

    def ev(p):
        p = np.atleast_2d(p)
        return p[:, 0] * n[0] + p[:, 1] * n[1] + p[:, 2] * n[2] - offset

    return SdfField(ev, domain, gradient=lambda p: np.tile(n, (len(np.atleast_2d(p)), 1)), name="plane")


def constant_field(value: float = 1.0, domain=_UNIT) -> SdfField:
    return SdfField(lambda p: np.full(len(np.atleast_2d(p)), float(value)), domain, lipschitz=0.0, name="constant")


def box_field(half=(0.6, 0.4, 0.5), domain=_UNIT) -> SdfField:
    b = np.asarray(half, dtype=np.float64)

    def ev(p):
        q = np.abs(np.atleast_2d(p)) - b
        return np.linalg.norm(np.maximum(q, 0.0), axis=1) + np.minimum(q.max(axis=1), 0.0)

    return SdfField(ev, domain, name="box")


def affine_sphere_field(matrix, translation, radius: float, domain=_UNIT) -> SdfField:
    """f(p) = |A p + t| - r; Lipschitz constant is the largest singular value of A."""
    a = np.asarray(matrix, dtype=np.float64)
    t = np.asarray(translation, dtype=np.float64)

    def ev(p):
        return np.linalg.norm(np.atleast_2d(p) @ a.T + t, axis=1) - radius

    def grad(p):
        q = np.atleast_2d(p) @ a.T + t
        return (q / np.linalg.norm(q, axis=1, keepdims=True)) @ a

    return SdfField(ev, domain, gradient=grad, lipschitz=float(np.linalg.norm(a, 2)), name="affine_sphere")


def rbf_field(centers, weights, width: float = 0.3, bias: float = -0.5, domain=_UNIT) -> SdfField:
    """Sum of Gaussian bumps plus a constant, with an analytic gradient."""
    c = np.asarray(centers, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    s2 = width * width

    def ev(p):
        d = np.atleast_2d(p)[:, None, :] - c[None]
        return np.exp(-np.sum(d * d, axis=2) / s2) @ w + bias

    def grad(p):
        d = np.atleast_2d(p)[:, None, :] - c[None]
        g = np.exp(-np.sum(d * d, axis=2) / s2) * w
        return -2.0 / s2 * np.einsum("mk,mkj->mj", g, d)

    lip = float(np.sum(np.abs(w)) * np.sqrt(2.0 / s2) * np.exp(-0.5))
    return SdfField(ev, domain, gradient=grad, lipschitz=lip, name="rbf")


def tsdf_field(mesh: TriMesh, truncation: float = 0.1, domain=None) -> SdfField:
    """Truncated signed distance to a mesh, evaluated by the exact oracle."""
    s = MeshSdf.of(mesh)
    if domain is None:
        lo, hi = mesh.bounds()
        domain = (lo - 2 * truncation, hi + 2 * truncation)
    return SdfField(
        lambda p: s.tsdf(p, truncation),
        domain,
        evaluate_grid=lambda dom, dims: s.tsdf_grid(dom, dims, truncation),
        name=f"tsdf:{mesh.name}",
        meta={"truncation": truncation},
    )


def grid_field(grid: SdfGrid) -> SdfField:
    """Trilinear interpolation of node samples; exact at the nodes."""
    from scipy.ndimage import map_coordinates

    lo = np.asarray(grid.domain[0], dtype=np.float64)
    spacing = grid.spacing
    vals = np.asarray(grid.values, dtype=np.float64)

    def ev(p):
        coords = ((np.atleast_2d(p) - lo) / spacing).T
        return map_coordinates(vals, coords, order=1, mode="nearest")

    slope = max(np.abs(np.diff(vals, axis=k)).max(initial=0.0) / spacing[k] for k in range(3))
    lip = float(np.sqrt(3.0) * slope)
    return SdfField(ev, grid.domain, lipschitz=lip, name="grid")


BUILTINS = {
    "sphere": sphere_field,
    "torus": torus_field,
    "plane": plane_field,
    "box": box_field,
    "constant": constant_field,
}
