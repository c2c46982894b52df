"""Geometric deduplication from canonical-view depth and normal renders."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptyIndex, MalformedFile
from .formats import read_blob, write_blob
from .mesh import TriMesh, normalize_mesh
from .views import make_canonical_cameras, render_view

RENDER_SIZE = 128
CELL = 32
DESCRIPTOR_DIM = 4 * (CELL * CELL + CELL * CELL * 3)

DEFAULT_T_COS = 0.98
DEFAULT_T_L2 = 0.2


@dataclass(frozen=True, eq=False)
class AssetDescriptor:
    asset_id: str
    vector: np.ndarray
    source: str = "geometric_default"


def _box(img: np.ndarray, out: int) -> np.ndarray:
    h, w = img.shape[:2]
    f = h // out
    return img.reshape(out, f, out, f, *img.shape[2:]).mean(axis=(1, 3))


def descriptor_vector(mesh: TriMesh, render_size: int = RENDER_SIZE, cell: int = CELL) -> np.ndarray:
    norm, _ = normalize_mesh(mesh)
    parts = []
    for cam in make_canonical_cameras(4, (render_size, render_size)):
        r = render_view(norm, cam)
        depth = np.where(r.mask, (cam.far - r.depth) / (cam.far - cam.near), 0.0)
        parts.append(_box(depth, cell).ravel())
        parts.append(_box(r.normal, cell).ravel())
    v = np.concatenate(parts)
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def compute_descriptor(mesh: TriMesh, asset_id: str | None = None) -> AssetDescriptor:
    return AssetDescriptor(asset_id if asset_id is not None else mesh.name, descriptor_vector(mesh))


class DescriptorIndex:
    """Cosine-similarity index over unit vectors, brute force with an optional half-precision pre-pass."""

    def __init__(self, descriptors):
        items = sorted(descriptors, key=lambda d: d.asset_id)
        self.ids = [d.asset_id for d in items]
        if len(set(self.ids)) != len(self.ids):
            raise ConfigError("duplicate asset ids in index")
        dims = {len(d.vector) for d in items}
        if len(dims) > 1:
            raise ConfigError("descriptors must share one dimension")
        self.vectors = np.stack([np.asarray(d.vector, dtype=np.float64) for d in items]) if items else np.zeros((0, 0))
        self._half = None

    def __len__(self):
        return len(self.ids)

    def _rank(self, cand: np.ndarray, q: np.ndarray, k: int):
        cos = self.vectors[cand] @ q
        # rows are stored in id order, so the row index breaks cosine ties lexicographically
        top = cand[np.lexsort((cand, -cos))[:k]]
        out = []
        for i in top:
            out.append((self.ids[i], float(self.vectors[i] @ q), float(np.linalg.norm(self.vectors[i] - q))))
        return out

    def search(self, query, k: int, mode: str = "exact", rerank_factor: int = 8):
        if len(self) == 0:
            raise EmptyIndex("index is empty")
        if k < 1:
            raise ConfigError("k must be at least 1")
        q = np.asarray(getattr(query, "vector", query), dtype=np.float64)
        k = min(k, len(self))
        if mode == "exact":
            return self._rank(np.arange(len(self)), q, k)
        if mode != "approximate":
            raise ConfigError(f"unknown search mode {mode!r}")
        if self._half is None:
            # half-precision storage, widened once so the product runs through BLAS
            self._half = self.vectors.astype(np.float16).astype(np.float32)
        scores = self._half @ q.astype(np.float16).astype(np.float32)
        n_cand = min(len(self), k * rerank_factor + 32)
        cand = np.argpartition(-scores, n_cand - 1)[:n_cand]
        return self._rank(np.sort(cand), q, k)


def knn_search(index: DescriptorIndex, query, k: int, mode: str = "exact"):
    return index.search(query, k, mode)


def threshold_redundancy(t_cos: float, t_l2: float) -> dict:
    """On unit vectors l2^2 = 2 - 2 cos, so one threshold may imply the other."""
    if t_cos > 1.0:
        return {"status": "unsatisfiable", "binding": "t_cos", "vacuous": None}
    equiv = math.sqrt(max(0.0, 2.0 - 2.0 * t_cos))
    if math.isclose(equiv, t_l2, rel_tol=1e-9, abs_tol=1e-12):
        return {"status": "redundant", "binding": "both", "vacuous": None, "l2_equivalent_of_t_cos": equiv}
    if t_l2 > equiv:
        return {"status": "vacuous", "binding": "t_cos", "vacuous": "t_l2", "l2_equivalent_of_t_cos": equiv}
    return {"status": "vacuous", "binding": "t_l2", "vacuous": "t_cos", "l2_equivalent_of_t_cos": equiv}


def dedup_filter(assets, t_cos: float = DEFAULT_T_COS, t_l2: float = DEFAULT_T_L2, combine: str = "and") -> dict:
    """Cluster assets linked by the dual-threshold test and keep the smallest id per cluster."""
    if combine not in ("and", "or"):
        raise ConfigError("combine must be 'and' or 'or'")
    items = sorted(assets, key=lambda d: d.asset_id)
    ids = [d.asset_id for d in items]
    n = len(items)
    report = {"thresholds": {"t_cos": t_cos, "t_l2": t_l2, "combine": combine},
              "threshold_check": threshold_redundancy(t_cos, t_l2), "clusters": [], "kept": list(ids), "removed": []}
    if n == 0:
        return report
    v = np.stack([np.asarray(d.vector, dtype=np.float64) for d in items])
    cos = v @ v.T
    sq = np.einsum("ij,ij->i", v, v)
    l2 = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * cos, 0.0))
    if combine == "and":
        link = (cos >= t_cos) & (l2 <= t_l2)
    else:
        link = (cos >= t_cos) | (l2 <= t_l2)
    np.fill_diagonal(link, False)

    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in zip(*np.nonzero(np.triu(link))):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    kept, removed, clusters = [], [], []
    for root in sorted(groups):
        members = groups[root]
        kept.append(ids[members[0]])
        if len(members) == 1:
            continue
        clusters.append([ids[i] for i in members])
        # witness edges from a BFS tree rooted at the kept member
        seen = {members[0]}
        frontier = [members[0]]
        while frontier:
            nxt = []
            for a in frontier:
                for b in np.flatnonzero(link[a]):
                    if b in seen:
                        continue
                    seen.add(b)
                    nxt.append(b)
                    removed.append({"id": ids[b], "kept": ids[members[0]],
                                    "witness": {"a": ids[a], "b": ids[b], "cosine": float(cos[a, b]), "l2": float(np.linalg.norm(v[a] - v[b]))}})
            frontier = sorted(nxt)
    report["clusters"] = clusters
    report["kept"] = kept
    report["removed"] = sorted(removed, key=lambda r: r["id"])
    return report


def write_descriptors(path, descriptors) -> None:
    items = sorted(descriptors, key=lambda d: d.asset_id)
    arr = np.stack([d.vector for d in items]) if items else np.zeros((0, DESCRIPTOR_DIM))
    write_blob(path, {"format": "desc", "D": int(arr.shape[1]), "count": len(items), "ids": [d.asset_id for d in items],
                      "source": [d.source for d in items]}, arr, layout="rows")


def read_descriptors(path, source: str = "external") -> list:
    header, arr = read_blob(path)
    ids = header.get("ids")
    if not isinstance(ids, list) or len(ids) != arr.shape[0]:
        raise MalformedFile("descriptor file ids do not match its rows")
    out = []
    for i, row in zip(ids, arr.astype(np.float64)):
        n = np.linalg.norm(row)
        out.append(AssetDescriptor(str(i), row / n if n > 0 else row, source))
    return out
