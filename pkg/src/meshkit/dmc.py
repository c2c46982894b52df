"""Dual contouring core shared by remeshing and iso-surface extraction.

One vertex per active cell at the mean of its edge crossings, one quad per
sign-changing interior grid edge. Corner bit order is x + 2y + 4z. Output
vertices are ordered by x-fastest linear cell index, so any caller that feeds
the same cells and corner values gets a bit-identical mesh.
"""

from __future__ import annotations

import numpy as np

from .errors import EmptyIsoSurface

CORNER_OFFSETS = np.array([[x, y, z] for z in (0, 1) for y in (0, 1) for x in (0, 1)], dtype=np.int64)
EDGES = np.array(
    [(0, 1), (2, 3), (4, 5), (6, 7), (0, 2), (1, 3), (4, 6), (5, 7), (0, 4), (1, 5), (2, 6), (3, 7)], dtype=np.int64
)


def linear_index(cells: np.ndarray, dims_cells) -> np.ndarray:
    nx, ny, _ = dims_cells
    return cells[:, 0] + nx * (cells[:, 1] + ny * cells[:, 2])


def corner_values(values: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """Gather the 8 node values of each cell from a node grid indexed [x, y, z]."""
    out = np.empty((len(cells), 8), dtype=values.dtype)
    for c, (dx, dy, dz) in enumerate(CORNER_OFFSETS):
        out[:, c] = values[cells[:, 0] + dx, cells[:, 1] + dy, cells[:, 2] + dz]
    return out


def cell_masks(corner_vals: np.ndarray, iso: float) -> np.ndarray:
    inside = corner_vals < iso
    return (inside.astype(np.int64) << np.arange(8)).sum(axis=1)


def active_cells_dense(values: np.ndarray, iso: float) -> np.ndarray:
    """All cells of a node grid whose corners straddle iso, in x-fastest order."""
    inside = values < iso
    nx, ny, nz = (n - 1 for n in values.shape)
    any_in = np.zeros((nx, ny, nz), dtype=bool)
    all_in = np.ones((nx, ny, nz), dtype=bool)
    for dx, dy, dz in CORNER_OFFSETS:
        s = inside[dx:dx + nx, dy:dy + ny, dz:dz + nz]
        any_in |= s
        all_in &= s
    act = any_in & ~all_in
    idx = np.argwhere(act.transpose(2, 1, 0))[:, ::-1]
    return np.ascontiguousarray(idx.astype(np.int64))


def cell_vertices(cells, corner_vals, origin, spacing, iso):
    inside = corner_vals < iso
    acc = np.zeros((len(cells), 3))
    cnt = np.zeros(len(cells))
    for a, b in EDGES:
        va = corner_vals[:, a].astype(np.float64)
        vb = corner_vals[:, b].astype(np.float64)
        cross = inside[:, a] != inside[:, b]
        denom = np.where(cross, vb - va, 1.0)
        t = np.where(cross, (iso - va) / denom, 0.0)
        pa = CORNER_OFFSETS[a].astype(np.float64)
        d = (CORNER_OFFSETS[b] - CORNER_OFFSETS[a]).astype(np.float64)
        acc += np.where(cross[:, None], pa[None, :] + t[:, None] * d[None, :], 0.0)
        cnt += cross
    local = np.clip(acc / np.maximum(cnt, 1)[:, None], 0.0, 1.0)
    origin = np.asarray(origin, dtype=np.float64)
    spacing = np.asarray(spacing, dtype=np.float64)
    return origin + (cells + local) * spacing


# (edge start corner, edge end corner, neighbour cell offsets around the edge)
_FACE_RULES = (
    (6, 7, ((0, 0, 0), (0, 1, 0), (0, 1, 1), (0, 0, 1))),
    (5, 7, ((0, 0, 0), (0, 0, 1), (1, 0, 1), (1, 0, 0))),
    (3, 7, ((0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0))),
)


def dual_contour(cells, corner_vals, dims_cells, origin, spacing, iso: float = 0.0):
    """Mesh the iso-surface from candidate cells and their 8 corner values.

    Cells whose corners do not straddle iso are ignored, so callers may pass
    a superset. Returns (vertices, triangles, vertex cell indices).
    """
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 3)
    corner_vals = np.asarray(corner_vals).reshape(-1, 8)
    mask = cell_masks(corner_vals, iso)
    keep = (mask != 0) & (mask != 255)
    cells, corner_vals, mask = cells[keep], corner_vals[keep], mask[keep]
    lin = linear_index(cells, dims_cells)
    order = np.argsort(lin, kind="stable")
    cells, corner_vals, mask, lin = cells[order], corner_vals[order], mask[order], lin[order]
    if len(cells) == 0:
        raise EmptyIsoSurface("no cell straddles the iso-level")
    verts = cell_vertices(cells, corner_vals, origin, spacing, iso)

    nx, ny, nz = dims_cells
    quads = []
    for a, b, offs in _FACE_RULES:
        ina = (mask >> a) & 1
        inb = (mask >> b) & 1
        sel = ina != inb
        base = cells[sel]
        ok = np.ones(len(base), dtype=bool)
        for off in offs:
            nb = base + np.asarray(off)
            ok &= (nb[:, 0] < nx) & (nb[:, 1] < ny) & (nb[:, 2] < nz)
        base = base[ok]
        flip = ina[sel][ok] == 0  # start node outside: field decreases along the edge
        ids = []
        for off in offs:
            key = linear_index(base + np.asarray(off), dims_cells)
            pos = np.searchsorted(lin, key)
            pos = np.minimum(pos, len(lin) - 1)
            if not np.all(lin[pos] == key):
                raise RuntimeError("candidate cell set is missing a neighbour of a crossing edge")
            ids.append(pos)
        q = np.stack(ids, axis=1)
        q[flip] = q[flip][:, ::-1]
        quads.append(q)
    quads = np.concatenate(quads) if quads else np.zeros((0, 4), dtype=np.int64)
    return verts, split_quads(verts, quads), lin


def split_quads(verts, quads) -> np.ndarray:
    """Two triangles per quad, cut along the shorter diagonal."""
    if len(quads) == 0:
        return np.zeros((0, 3), dtype=np.int64)
    v = verts[quads]
    d02 = np.sum((v[:, 0] - v[:, 2]) ** 2, axis=1)
    d13 = np.sum((v[:, 1] - v[:, 3]) ** 2, axis=1)
    use02 = d02 <= d13
    t1 = np.where(use02[:, None], quads[:, [0, 1, 2]], quads[:, [1, 2, 3]])
    t2 = np.where(use02[:, None], quads[:, [0, 2, 3]], quads[:, [1, 3, 0]])
    tris = np.stack([t1, t2], axis=1).reshape(-1, 3)
    return tris


def bad_configurations() -> np.ndarray:
    """Boolean table over the 256 masks: True where inside or outside corners split into
    more than one edge-connected group inside the cube."""
    table = np.zeros(256, dtype=bool)
    for m in range(256):
        for side in (1, 0):
            nodes = [c for c in range(8) if ((m >> c) & 1) == side]
            if not nodes:
                continue
            seen = {nodes[0]}
            stack = [nodes[0]]
            while stack:
                c = stack.pop()
                for a, b in EDGES:
                    o = b if a == c else a if b == c else None
                    if o is not None and o not in seen and ((m >> o) & 1) == side:
                        seen.add(o)
                        stack.append(o)
            if len(seen) != len(nodes):
                table[m] = True
    return table


BAD_CONFIG = bad_configurations()
