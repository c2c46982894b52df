"""Indexed triangle mesh container, topology report and normalization."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import DegenerateBounds, InvalidMesh

WELD_TOLERANCE = 1e-8
DEGENERATE_AREA = 1e-12


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Immutable indexed triangle mesh.

    ``uvs`` are per-corner, shape (F, 3, 2); ``normals`` are per-vertex.
    Hashing is by identity so meshes can key acceleration caches.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    normals: Optional[np.ndarray] = None
    uvs: Optional[np.ndarray] = None
    name: str = "mesh"

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise InvalidMesh("triangle index out of range")
        if t.size and np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
            raise InvalidMesh("degenerate index triple")
        if not np.all(np.isfinite(v)):
            raise InvalidMesh("non-finite vertex coordinate")
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "triangles", _frozen(t))
        if self.normals is not None:
            n = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(n) != len(v):
                raise InvalidMesh("normals must be per-vertex")
            if len(n) and np.max(np.abs(np.linalg.norm(n, axis=1) - 1.0)) > 1e-4:
                raise InvalidMesh("normals must be unit length")
            object.__setattr__(self, "normals", _frozen(n))
        if self.uvs is not None:
            uv = np.asarray(self.uvs, dtype=np.float64).reshape(-1, 3, 2)
            if len(uv) != len(t):
                raise InvalidMesh("uvs must be per-corner (F, 3, 2)")
            object.__setattr__(self, "uvs", _frozen(uv))

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def triangle_count(self) -> int:
        return len(self.triangles)

    def replace(self, **changes) -> "TriMesh":
        return dataclasses.replace(self, **changes)

    def corners(self) -> np.ndarray:
        """Triangle corner positions, shape (F, 3, 3)."""
        return self.vertices[self.triangles]

    def face_areas(self) -> np.ndarray:
        c = self.corners()
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    def face_normals(self) -> np.ndarray:
        """Unit geometric normals; zero rows for zero-area triangles."""
        c = self.corners()
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        ln = np.linalg.norm(n, axis=1, keepdims=True)
        return np.divide(n, ln, out=np.zeros_like(n), where=ln > 0)

    def vertex_normals(self) -> np.ndarray:
        """Stored normals, or area-weighted averages of face normals."""
        if self.normals is not None:
            return self.normals
        c = self.corners()
        fn = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        acc = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(acc, self.triangles[:, k], fn)
        ln = np.linalg.norm(acc, axis=1, keepdims=True)
        out = np.divide(acc, ln, out=np.zeros_like(acc), where=ln > 0)
        out[ln[:, 0] == 0] = (0.0, 0.0, 1.0)
        return out

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if not len(self.vertices):
            raise DegenerateBounds("mesh has no vertices")
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def total_area(self) -> float:
        return float(self.face_areas().sum())


def merge_meshes(meshes, name="merged") -> TriMesh:
    """Concatenate meshes into one index buffer; normals/uvs kept only if all have them."""
    meshes = list(meshes)
    verts, tris, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        offset += len(m.vertices)
    normals = None
    if meshes and all(m.normals is not None for m in meshes):
        normals = np.concatenate([m.normals for m in meshes])
    uvs = None
    if meshes and all(m.uvs is not None for m in meshes):
        uvs = np.concatenate([m.uvs for m in meshes])
    return TriMesh(
        np.concatenate(verts) if verts else np.zeros((0, 3)),
        np.concatenate(tris) if tris else np.zeros((0, 3), dtype=np.int64),
        normals=normals,
        uvs=uvs,
        name=name,
    )


# -- topology report ---------------------------------------------------------


@dataclass
class MeshReport:
    is_manifold: bool
    is_watertight: bool
    euler_characteristic: int
    bbox: tuple
    triangle_count: int
    vertex_count: int
    degenerate_area_count: int
    boundary_edge_count: int = 0
    nonmanifold_edge_count: int = 0
    nonmanifold_vertex_count: int = 0
    component_count: int = 0

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["bbox"] = [list(map(float, self.bbox[0])), list(map(float, self.bbox[1]))]
        return d


def weld_vertices(vertices: np.ndarray, tol: float) -> np.ndarray:
    """Map each vertex to a representative index; vertices closer than tol merge."""
    n = len(vertices)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    if tol <= 0:
        _, inv = np.unique(vertices, axis=0, return_inverse=True)
        first = np.full(inv.max() + 1, n, dtype=np.int64)
        np.minimum.at(first, inv.ravel(), np.arange(n))
        return first[inv.ravel()]
    pairs = cKDTree(vertices).query_pairs(tol, output_type="ndarray")
    if len(pairs) == 0:
        return np.arange(n, dtype=np.int64)
    g = sparse.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(g, directed=False)
    first = np.full(labels.max() + 1, n, dtype=np.int64)
    np.minimum.at(first, labels, np.arange(n))
    return first[labels]


def _undirected_edges(tris: np.ndarray):
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    e.sort(axis=1)
    uniq, inv, counts = np.unique(e, axis=0, return_inverse=True, return_counts=True)
    return uniq, inv.ravel(), counts


def validate_mesh(mesh: TriMesh) -> MeshReport:
    """Topology and quality report; never raises on degenerate input."""
    v, t = mesh.vertices, mesh.triangles
    if len(v):
        lo, hi = v.min(axis=0), v.max(axis=0)
    else:
        lo = hi = np.zeros(3)
    areas = mesh.face_areas() if len(t) else np.zeros(0)
    degenerate = int(np.count_nonzero(areas < DEGENERATE_AREA))
    if len(t) == 0:
        return MeshReport(True, False, int(len(v)), (lo, hi), 0, len(v), 0)

    # weld tolerance is defined in normalized units, so scale to model units
    extent = float(np.max(hi - lo))
    rep = weld_vertices(v, WELD_TOLERANCE * extent / 2.0)
    wt = rep[t]
    keep = (wt[:, 0] != wt[:, 1]) & (wt[:, 1] != wt[:, 2]) & (wt[:, 0] != wt[:, 2])
    wt = wt[keep]

    edges, inv, counts = _undirected_edges(wt)
    boundary = int(np.count_nonzero(counts == 1))
    nonmanifold_edges = int(np.count_nonzero(counts > 2))

    used = np.unique(wt)
    V, E, F = len(used), len(edges), len(wt)

    # vertex stars: link graph of each vertex must be one connected fan
    a, b, c = wt[:, 0], wt[:, 1], wt[:, 2]
    centre = np.concatenate([a, b, c])
    first = np.concatenate([b, c, a])
    second = np.concatenate([c, a, b])
    keys = np.concatenate([np.stack([centre, first], 1), np.stack([centre, second], 1)])
    uk, kinv = np.unique(keys, axis=0, return_inverse=True)
    kinv = kinv.ravel()
    m = len(centre)
    g = sparse.coo_matrix((np.ones(m), (kinv[:m], kinv[m:])), shape=(len(uk), len(uk)))
    _, labels = connected_components(g, directed=False)
    vl = np.unique(np.stack([uk[:, 0], labels], 1), axis=0)
    comps_per_vertex = np.bincount(vl[:, 0])
    nonmanifold_vertices = int(np.count_nonzero(comps_per_vertex > 1))

    fg = sparse.coo_matrix(
        (np.ones(3 * F), (np.repeat(np.arange(F), 3), wt.ravel())), shape=(F, int(wt.max()) + 1)
    )
    adj = (fg @ fg.T).tocoo()
    ncomp, _ = connected_components(adj, directed=False)

    is_manifold = nonmanifold_edges == 0 and nonmanifold_vertices == 0
    return MeshReport(
        is_manifold=bool(is_manifold),
        is_watertight=bool(boundary == 0 and nonmanifold_edges == 0),
        euler_characteristic=int(V - E + F),
        bbox=(lo, hi),
        triangle_count=int(len(t)),
        vertex_count=int(len(v)),
        degenerate_area_count=degenerate,
        boundary_edge_count=boundary,
        nonmanifold_edge_count=nonmanifold_edges,
        nonmanifold_vertex_count=nonmanifold_vertices,
        component_count=int(ncomp),
    )


def connected_component_count(mesh: TriMesh) -> int:
    """Number of vertex-connected triangle groups."""
    t = mesh.triangles
    if len(t) == 0:
        return 0
    n = mesh.vertex_count
    rows = np.concatenate([t[:, 0], t[:, 1]])
    cols = np.concatenate([t[:, 1], t[:, 2]])
    g = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(g, directed=False)
    return len(np.unique(labels[np.unique(t)]))


# -- normalization -----------------------------------------------------------


@dataclass(frozen=True)
class Transform:
    """Uniform scale then translation: ``y = scale * x + translation``."""

    scale: float = 1.0
    translation: tuple = (0.0, 0.0, 0.0)

    def apply(self, points):
        return np.asarray(points, dtype=np.float64) * self.scale + np.asarray(self.translation)

    def invert(self, points):
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.translation)) / self.scale

    def to_dict(self):
        return {"scale": float(self.scale), "translation": [float(x) for x in self.translation]}


def normalize_mesh(mesh: TriMesh) -> tuple[TriMesh, Transform]:
    """Center the bbox at the origin and scale the longest axis to [-1, 1]."""
    if mesh.vertex_count == 0:
        raise DegenerateBounds("mesh has no vertices")
    lo, hi = mesh.bounds()
    extent = hi - lo
    axis = int(np.argmax(extent))
    if not extent[axis] > 0:
        raise DegenerateBounds("mesh has zero extent")
    centre = (lo + hi) / 2.0
    scale = 2.0 / float(extent[axis])
    out = (mesh.vertices - centre) * scale
    # pin the extremes of the longest axis so the span is exactly [-1, 1]
    col = out[:, axis]
    col[mesh.vertices[:, axis] == lo[axis]] = -1.0
    col[mesh.vertices[:, axis] == hi[axis]] = 1.0
    translation = tuple(float(x) for x in -centre * scale)
    if scale == 1.0 and all(x == 0.0 for x in translation):
        out = mesh.vertices.copy()
    return mesh.replace(vertices=out), Transform(scale, translation)


def transform_mesh(mesh: TriMesh, matrix=None, scale=1.0, translation=(0.0, 0.0, 0.0)) -> TriMesh:
    """Apply an optional 3x3 linear map, then scale and translation."""
    v = mesh.vertices
    normals = mesh.normals
    if matrix is not None:
        m = np.asarray(matrix, dtype=np.float64)
        v = v @ m.T
        if normals is not None:
            nm = normals @ np.linalg.inv(m)
            normals = nm / np.linalg.norm(nm, axis=1, keepdims=True)
    v = v * scale + np.asarray(translation, dtype=np.float64)
    return mesh.replace(vertices=v, normals=normals)
