"""Surface, crease and TSDF sampling plus Fourier positional features."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ZeroArea
from .formats import write_blob
from .mesh import TriMesh, weld_vertices
from .sdf import MeshSdf, TsdfSpec

UNIFORM, SALIENT = 0, 1

DEFAULT_DIHEDRAL_DEG = 30.0
DEFAULT_SALIENT_RATIO = 0.25
DEFAULT_L = 8
DEFAULT_NEAR_SIGMA = 0.01


@dataclass(frozen=True)
class SampleSet:
    points: np.ndarray
    normals: np.ndarray
    tags: np.ndarray
    features: np.ndarray | None = None

    def __len__(self):
        return len(self.points)

    @property
    def salient_fraction(self) -> float:
        return float(np.mean(self.tags == SALIENT)) if len(self) else 0.0

    @staticmethod
    def empty() -> "SampleSet":
        return SampleSet(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, dtype=np.uint8))

    def concat(self, other: "SampleSet") -> "SampleSet":
        return SampleSet(
            np.concatenate([self.points, other.points]),
            np.concatenate([self.normals, other.normals]),
            np.concatenate([self.tags, other.tags]),
        )


@dataclass(frozen=True)
class FourierSpec:
    L: int = DEFAULT_L
    include_identity: bool = True

    def __post_init__(self):
        if self.L < 0:
            raise ConfigError("L must be non-negative")

    @property
    def dim(self) -> int:
        return 3 * (2 * self.L + int(self.include_identity))


def sample_uniform_surface(mesh: TriMesh, count: int, seed: int = 0) -> SampleSet:
    """Area-weighted surface samples; triangle chosen by inverting the cumulative area."""
    if count < 1:
        raise ConfigError("count must be at least 1")
    areas = mesh.face_areas()
    total = float(areas.sum()) if len(areas) else 0.0
    if not total > 0:
        raise ZeroArea("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(areas)
    u = rng.random(count) * cdf[-1]
    tri = np.minimum(np.searchsorted(cdf, u, side="right"), len(areas) - 1)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    c = mesh.corners()[tri]
    pts = c[:, 0] * (1 - r1)[:, None] + c[:, 1] * (r1 * (1 - r2))[:, None] + c[:, 2] * (r1 * r2)[:, None]
    normals = mesh.face_normals()[tri]
    return SampleSet(pts, normals, np.full(count, UNIFORM, dtype=np.uint8))


def crease_edges(mesh: TriMesh, threshold_deg: float = DEFAULT_DIHEDRAL_DEG):
    """Edges shared by exactly two faces whose normals differ by more than the threshold.

    Returns (endpoint array (E, 2, 3), averaged unit normals (E, 3), dihedral angles in degrees).
    """
    lo, hi = mesh.bounds() if mesh.vertex_count else (np.zeros(3), np.zeros(3))
    tol = 1e-8 * max(float(np.max(hi - lo)) / 2.0, 1e-12)
    ids = weld_vertices(mesh.vertices, tol)
    t = ids[mesh.triangles]
    fn = mesh.face_normals()
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    src = np.concatenate([mesh.triangles[:, [0, 1]], mesh.triangles[:, [1, 2]], mesh.triangles[:, [2, 0]]])
    face = np.tile(np.arange(len(t)), 3)
    key = np.sort(e, axis=1)
    order = np.lexsort((face, key[:, 1], key[:, 0]))
    key, face, src = key[order], face[order], src[order]
    if len(key) == 0:
        return np.zeros((0, 2, 3)), np.zeros((0, 3)), np.zeros(0)
    brk = np.flatnonzero(np.any(key[1:] != key[:-1], axis=1)) + 1
    starts = np.concatenate([[0], brk])
    sizes = np.diff(np.concatenate([starts, [len(key)]]))
    pair = starts[sizes == 2]  # boundary and non-manifold edges are skipped
    f0, f1 = face[pair], face[pair + 1]
    cosang = np.clip(np.einsum("ij,ij->i", fn[f0], fn[f1]), -1.0, 1.0)
    ang = np.degrees(np.arccos(cosang))
    keep = ang > threshold_deg
    pair, f0, f1, ang = pair[keep], f0[keep], f1[keep], ang[keep]
    seg = mesh.vertices[src[pair]]
    n = fn[f0] + fn[f1]
    ln = np.linalg.norm(n, axis=1, keepdims=True)
    n = np.where(ln > 1e-12, n / np.where(ln > 1e-12, ln, 1.0), fn[f0])
    return seg, n, ang


def extract_salient_points(mesh: TriMesh, count: int, dihedral_threshold_deg: float = DEFAULT_DIHEDRAL_DEG, seed: int = 0) -> SampleSet:
    """Length-weighted samples on crease edges; empty when no edge qualifies."""
    seg, normals, _ = crease_edges(mesh, dihedral_threshold_deg)
    if count < 1 or len(seg) == 0:
        return SampleSet.empty()
    rng = np.random.default_rng(seed)
    lengths = np.linalg.norm(seg[:, 1] - seg[:, 0], axis=1)
    cdf = np.cumsum(lengths)
    u = rng.random(count) * cdf[-1]
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), len(seg) - 1)
    s = rng.random(count)[:, None]
    pts = seg[idx, 0] + s * (seg[idx, 1] - seg[idx, 0])
    return SampleSet(pts, normals[idx], np.full(count, SALIENT, dtype=np.uint8))


def sample_point_cloud(mesh: TriMesh, count: int, salient_ratio: float = DEFAULT_SALIENT_RATIO,
                       dihedral_threshold_deg: float = DEFAULT_DIHEDRAL_DEG, seed: int = 0,
                       fourier: FourierSpec | None = None) -> SampleSet:
    """P = P_u ∪ P_s with round(count * ratio) salient points (all uniform if no crease exists)."""
    rng = np.random.default_rng(seed)
    s_seed, u_seed = (int(x) for x in rng.integers(0, 2**63 - 1, size=2))
    n_s = int(round(count * salient_ratio))
    sal = extract_salient_points(mesh, n_s, dihedral_threshold_deg, s_seed)
    uni = sample_uniform_surface(mesh, count - len(sal), u_seed)
    out = uni.concat(sal)
    if fourier is not None:
        out = SampleSet(out.points, out.normals, out.tags, fourier_encode(out.points, fourier))
    return out


def fourier_encode(points, spec: FourierSpec = FourierSpec()) -> np.ndarray:
    """Per axis [x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x), cos(2^(L-1) pi x)]."""
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    blocks = []
    for axis in range(3):
        x = p[:, axis]
        cols = [x] if spec.include_identity else []
        for k in range(spec.L):
            arg = (2.0**k * math.pi) * x
            cols += [np.sin(arg), np.cos(arg)]
        blocks.append(np.stack(cols, axis=1) if cols else np.zeros((len(p), 0)))
    return np.concatenate(blocks, axis=1)


def mesh_digest(mesh: TriMesh) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mesh.vertices, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(mesh.triangles, dtype="<i8").tobytes())
    return h.hexdigest()


def training_samples(mesh: TriMesh, spec: TsdfSpec = TsdfSpec(), near_count: int = 100_000, volume_count: int = 100_000,
                     near_sigma: float = DEFAULT_NEAR_SIGMA, seed: int = 0) -> np.ndarray:
    """(near_count + volume_count, 4) array of x, y, z, tsdf."""
    rng = np.random.default_rng(seed)
    surf_seed = int(rng.integers(0, 2**63 - 1))
    rows = []
    if near_count:
        surf = sample_uniform_surface(mesh, near_count, surf_seed)
        offs = rng.normal(0.0, near_sigma, size=near_count)
        rows.append(surf.points + surf.normals * offs[:, None])
    if volume_count:
        rows.append(rng.uniform(-1.0, 1.0, size=(volume_count, 3)))
    q = np.concatenate(rows) if rows else np.zeros((0, 3))
    if spec.sign_method != "winding":
        raise ConfigError("training samples use the winding-number sign")
    vals = MeshSdf.of(mesh).tsdf(q, spec.truncation) if len(q) else np.zeros(0)
    return np.concatenate([q, vals[:, None]], axis=1)


def export_training_samples(mesh: TriMesh, path, spec: TsdfSpec = TsdfSpec(), near_count: int = 100_000,
                            volume_count: int = 100_000, near_sigma: float = DEFAULT_NEAR_SIGMA, seed: int = 0) -> np.ndarray:
    rec = training_samples(mesh, spec, near_count, volume_count, near_sigma, seed)
    header = {
        "format": "tsdfsamples",
        "near_count": near_count,
        "volume_count": volume_count,
        "truncation": spec.truncation,
        "near_sigma": near_sigma,
        "seed": seed,
        "mesh_sha256": mesh_digest(mesh),
        "columns": ["x", "y", "z", "value"],
    }
    write_blob(path, header, rec, layout="rows")
    return rec
