"""Bounding-volume hierarchy over triangles: closest-point and winding-number queries.

Median split over centroids along the widest centroid axis, leaf size 4.
Nodes also carry a far-field dipole (area vector, area-weighted centre, radius)
used by the fast winding-number traversal.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

LEAF_SIZE = 4
_STACK = 128
_INV4PI = 1.0 / (4.0 * math.pi)


@njit(cache=True)
def _build(centroids, tri_lo, tri_hi, leaf_size):
    n = centroids.shape[0]
    perm = np.arange(n)
    cap = max(1, 2 * ((n + leaf_size - 1) // leaf_size) + 1)
    cap = 2 * n + 1 if cap < 2 * n + 1 else cap
    lo = np.empty((cap, 3))
    hi = np.empty((cap, 3))
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    start = np.zeros(cap, dtype=np.int64)
    count = np.zeros(cap, dtype=np.int64)
    stack = np.empty(cap, dtype=np.int64)
    start[0] = 0
    count[0] = n
    n_nodes = 1
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        s = start[node]
        c = count[node]
        for k in range(3):
            lo[node, k] = np.inf
            hi[node, k] = -np.inf
        clo = np.full(3, np.inf)
        chi = np.full(3, -np.inf)
        for i in range(s, s + c):
            t = perm[i]
            for k in range(3):
                lo[node, k] = min(lo[node, k], tri_lo[t, k])
                hi[node, k] = max(hi[node, k], tri_hi[t, k])
                clo[k] = min(clo[k], centroids[t, k])
                chi[k] = max(chi[k], centroids[t, k])
        if c <= leaf_size:
            continue
        axis = 0
        for k in range(1, 3):
            if chi[k] - clo[k] > chi[axis] - clo[axis]:
                axis = k
        seg = perm[s:s + c].copy()
        order = np.argsort(centroids[seg, axis], kind="mergesort")
        perm[s:s + c] = seg[order]
        half = c // 2
        l_node = n_nodes
        r_node = n_nodes + 1
        n_nodes += 2
        start[l_node] = s
        count[l_node] = half
        start[r_node] = s + half
        count[r_node] = c - half
        left[node] = l_node
        right[node] = r_node
        stack[sp] = r_node
        sp += 1
        stack[sp] = l_node
        sp += 1
    return perm, lo[:n_nodes], hi[:n_nodes], left[:n_nodes], right[:n_nodes], start[:n_nodes], count[:n_nodes]


@njit(cache=True)
def _dipoles(perm, left, right, start, count, a, b, c):
    n_nodes = left.shape[0]
    nvec = np.zeros((n_nodes, 3))
    cen = np.zeros((n_nodes, 3))
    rad = np.zeros(n_nodes)
    area = np.zeros(n_nodes)
    for node in range(n_nodes):
        s = start[node]
        acc = np.zeros(3)
        wsum = 0.0
        for i in range(s, s + count[node]):
            t = perm[i]
            e1 = b[t] - a[t]
            e2 = c[t] - a[t]
            cr = np.cross(e1, e2) * 0.5
            ar = math.sqrt(cr[0] ** 2 + cr[1] ** 2 + cr[2] ** 2)
            nvec[node] += cr
            area[node] += ar
            g = (a[t] + b[t] + c[t]) / 3.0
            acc += ar * g
            wsum += ar
        if wsum > 0:
            cen[node] = acc / wsum
        else:
            t = perm[s]
            cen[node] = (a[t] + b[t] + c[t]) / 3.0
        r = 0.0
        for i in range(s, s + count[node]):
            t = perm[i]
            for v in (a[t], b[t], c[t]):
                d = v - cen[node]
                r = max(r, math.sqrt(d[0] ** 2 + d[1] ** 2 + d[2] ** 2))
        rad[node] = r
    return nvec, cen, rad, area


@njit(cache=True, inline="always")
def _sum_sq_sorted(x, y, z):
    # ascending-order sum of squares: independent of axis order
    a = x * x
    b = y * y
    c = z * z
    if a > b:
        a, b = b, a
    if b > c:
        b, c = c, b
    if a > b:
        a, b = b, a
    return (a + b) + c


@njit(cache=True)
def _closest_tri(px, py, pz, a, b, c):
    # Voronoi-region walk; returns the closest point as scalars
    abx = b[0] - a[0]
    aby = b[1] - a[1]
    abz = b[2] - a[2]
    acx = c[0] - a[0]
    acy = c[1] - a[1]
    acz = c[2] - a[2]
    apx = px - a[0]
    apy = py - a[1]
    apz = pz - a[2]
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return a[0], a[1], a[2]
    bpx = px - b[0]
    bpy = py - b[1]
    bpz = pz - b[2]
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return b[0], b[1], b[2]
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return a[0] + v * abx, a[1] + v * aby, a[2] + v * abz
    cpx = px - c[0]
    cpy = py - c[1]
    cpz = pz - c[2]
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return c[0], c[1], c[2]
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return a[0] + w * acx, a[1] + w * acy, a[2] + w * acz
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return b[0] + w * (c[0] - b[0]), b[1] + w * (c[1] - b[1]), b[2] + w * (c[2] - b[2])
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return a[0] + abx * v + acx * w, a[1] + aby * v + acy * w, a[2] + abz * v + acz * w


def closest_on_triangle(p, a, b, c):
    """Closest point on triangle abc to p."""
    a, b, c = (np.asarray(x, dtype=np.float64) for x in (a, b, c))
    return np.array(_closest_tri(float(p[0]), float(p[1]), float(p[2]), a, b, c))


@njit(cache=True, inline="always")
def _box_d2(px, py, pz, lo, hi, node):
    dx = max(lo[node, 0] - px, 0.0, px - hi[node, 0])
    dy = max(lo[node, 1] - py, 0.0, py - hi[node, 1])
    dz = max(lo[node, 2] - pz, 0.0, pz - hi[node, 2])
    return _sum_sq_sorted(dx, dy, dz)


@njit(cache=True)
def _closest_batch(points, max_d2, perm, lo, hi, left, right, start, count, a, b, c):
    m = points.shape[0]
    out_d2 = np.full(m, np.inf)
    out_q = np.full((m, 3), np.nan)
    out_t = np.full(m, -1, dtype=np.int64)
    stack = np.empty(_STACK, dtype=np.int64)
    for qi in range(m):
        p = points[qi]
        px, py, pz = p[0], p[1], p[2]
        best = max_d2
        best_t = -1
        bx = by = bz = np.nan
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if _box_d2(px, py, pz, lo, hi, node) > best:
                continue
            if left[node] < 0:
                for i in range(start[node], start[node] + count[node]):
                    t = perm[i]
                    qx, qy, qz = _closest_tri(px, py, pz, a[t], b[t], c[t])
                    d2 = _sum_sq_sorted(px - qx, py - qy, pz - qz)
                    if d2 < best or (d2 == best and (best_t < 0 or t < best_t)):
                        best = d2
                        best_t = t
                        bx, by, bz = qx, qy, qz
            else:
                l_node = left[node]
                r_node = right[node]
                dl = _box_d2(px, py, pz, lo, hi, l_node)
                dr = _box_d2(px, py, pz, lo, hi, r_node)
                # nearer child is popped first
                if dl <= dr:
                    stack[sp] = r_node
                    stack[sp + 1] = l_node
                else:
                    stack[sp] = l_node
                    stack[sp + 1] = r_node
                sp += 2
        if best_t >= 0:
            out_d2[qi] = best
            out_q[qi, 0] = bx
            out_q[qi, 1] = by
            out_q[qi, 2] = bz
            out_t[qi] = best_t
    return out_d2, out_q, out_t


@njit(cache=True)
def _closest_linear(points, a, b, c):
    m = points.shape[0]
    out_d2 = np.full(m, np.inf)
    out_q = np.zeros((m, 3))
    out_t = np.full(m, -1, dtype=np.int64)
    for qi in range(m):
        px, py, pz = points[qi, 0], points[qi, 1], points[qi, 2]
        for t in range(a.shape[0]):
            qx, qy, qz = _closest_tri(px, py, pz, a[t], b[t], c[t])
            d2 = _sum_sq_sorted(px - qx, py - qy, pz - qz)
            if d2 < out_d2[qi]:
                out_d2[qi] = d2
                out_q[qi, 0] = qx
                out_q[qi, 1] = qy
                out_q[qi, 2] = qz
                out_t[qi] = t
    return out_d2, out_q, out_t


@njit(cache=True, inline="always")
def _solid_angle(p, a, b, c):
    ax = a[0] - p[0]
    ay = a[1] - p[1]
    az = a[2] - p[2]
    bx = b[0] - p[0]
    by = b[1] - p[1]
    bz = b[2] - p[2]
    cx = c[0] - p[0]
    cy = c[1] - p[1]
    cz = c[2] - p[2]
    la = math.sqrt(ax * ax + ay * ay + az * az)
    lb = math.sqrt(bx * bx + by * by + bz * bz)
    lc = math.sqrt(cx * cx + cy * cy + cz * cz)
    det = ax * (by * cz - bz * cy) - ay * (bx * cz - bz * cx) + az * (bx * cy - by * cx)
    den = la * lb * lc + (ax * bx + ay * by + az * bz) * lc + (bx * cx + by * cy + bz * cz) * la + (cx * ax + cy * ay + cz * az) * lb
    return 2.0 * math.atan2(det, den)


@njit(cache=True)
def winding_exact(points, a, b, c):
    m = points.shape[0]
    out = np.zeros(m)
    for qi in range(m):
        s = 0.0
        for t in range(a.shape[0]):
            s += _solid_angle(points[qi], a[t], b[t], c[t])
        out[qi] = s * _INV4PI
    return out


@njit(cache=True)
def _winding_fast(points, beta, perm, left, right, start, count, a, b, c, nvec, cen, rad):
    m = points.shape[0]
    out = np.zeros(m)
    stack = np.empty(_STACK, dtype=np.int64)
    for qi in range(m):
        p = points[qi]
        s = 0.0
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            dx = cen[node, 0] - p[0]
            dy = cen[node, 1] - p[1]
            dz = cen[node, 2] - p[2]
            d = math.sqrt(dx * dx + dy * dy + dz * dz)
            if left[node] >= 0 and d > beta * rad[node]:
                s += (dx * nvec[node, 0] + dy * nvec[node, 1] + dz * nvec[node, 2]) / (d * d * d)
                continue
            if left[node] < 0:
                for i in range(start[node], start[node] + count[node]):
                    t = perm[i]
                    s += _solid_angle(p, a[t], b[t], c[t])
            else:
                stack[sp] = left[node]
                stack[sp + 1] = right[node]
                sp += 2
        out[qi] = s * _INV4PI
    return out


class TriangleBVH:
    """Static BVH over a triangle soup given as corner arrays a, b, c of shape (F, 3)."""

    def __init__(self, vertices: np.ndarray, triangles: np.ndarray, leaf_size: int = LEAF_SIZE):
        v = np.ascontiguousarray(vertices, dtype=np.float64)
        t = np.ascontiguousarray(triangles, dtype=np.int64)
        self.a = np.ascontiguousarray(v[t[:, 0]])
        self.b = np.ascontiguousarray(v[t[:, 1]])
        self.c = np.ascontiguousarray(v[t[:, 2]])
        corners = np.stack([self.a, self.b, self.c], axis=1)
        centroids = corners.mean(axis=1)
        (self.perm, self.lo, self.hi, self.left, self.right, self.start, self.count) = _build(
            centroids, corners.min(axis=1), corners.max(axis=1), leaf_size
        )
        self.nvec, self.cen, self.rad, self.area = _dipoles(
            self.perm, self.left, self.right, self.start, self.count, self.a, self.b, self.c
        )

    @property
    def triangle_count(self) -> int:
        return self.a.shape[0]

    def closest(self, points, max_dist: float = np.inf):
        """Return (distance, closest point, triangle id); misses beyond max_dist give inf/nan/-1."""
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        max_d2 = max_dist * max_dist if np.isfinite(max_dist) else np.inf
        d2, q, t = _closest_batch(
            pts, max_d2, self.perm, self.lo, self.hi, self.left, self.right, self.start, self.count, self.a, self.b, self.c
        )
        return np.sqrt(d2), q, t

    def closest_linear(self, points):
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        d2, q, t = _closest_linear(pts, self.a, self.b, self.c)
        return np.sqrt(d2), q, t

    def winding(self, points, exact: bool = False, beta: float = 2.0, ambiguity: float = 0.25):
        """Generalized winding number; the fast path re-evaluates exactly when |w - 0.5| < ambiguity."""
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        if exact:
            return winding_exact(pts, self.a, self.b, self.c)
        w = _winding_fast(
            pts, beta, self.perm, self.left, self.right, self.start, self.count, self.a, self.b, self.c, self.nvec, self.cen, self.rad
        )
        unsure = np.abs(w - 0.5) < ambiguity
        if unsure.any():
            w[unsure] = winding_exact(np.ascontiguousarray(pts[unsure]), self.a, self.b, self.c)
        return w
