"""Multi-view texture baking into a UV atlas with visibility and view-angle weights.

Texture row index is v * H (v grows downward). Each texel centre is mapped to
a surface point through the triangle covering it in UV space, projected into
every view, tested against that view's depth render and blended with weight
clamp(cos theta, 0, 1)^k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import ndimage

from .errors import ConfigError, ImageSizeMismatch, MissingUVs, TooManyTriangles
from .mesh import TriMesh
from .views import Camera, check_image_size, rasterize, render_view, screen_triangles

OUTSIDE_CHART, OBSERVED, HOLE = 0, 1, 2

DEFAULT_THETA_MAX = 75.0
DEFAULT_K = 2.0
GUTTER = 2


def compute_view_weight(normal, view_dir, theta_max_deg: float = DEFAULT_THETA_MAX, k: float = DEFAULT_K):
    """clamp(cos theta, 0, 1)^k, zero beyond the grazing cutoff. Works on single vectors or (M, 3) arrays."""
    n = np.asarray(normal, dtype=np.float64)
    v = np.asarray(view_dir, dtype=np.float64)
    cos = np.clip(np.sum(n * v, axis=-1), 0.0, 1.0)
    cut = math.cos(math.radians(theta_max_deg))
    w = np.where(cos >= cut - 1e-15, cos**k, 0.0)
    return float(w) if w.ndim == 0 else w


@dataclass(eq=False)
class UvTexture:
    color: np.ndarray  # (H, W, C) weighted sums
    weight: np.ndarray  # (H, W)
    mask: np.ndarray  # (H, W) of OUTSIDE_CHART / OBSERVED / HOLE
    tri_id: np.ndarray  # (H, W) chart triangle per texel, -1 outside
    contributions: np.ndarray | None = None  # (V, H, W) per-view weights

    @property
    def size(self) -> tuple:
        return (self.weight.shape[1], self.weight.shape[0])

    @property
    def channels(self) -> int:
        return self.color.shape[2]

    def hole_fraction(self) -> float:
        chart = self.mask != OUTSIDE_CHART
        return float((self.mask == HOLE).sum() / max(chart.sum(), 1))


# -- UV-space coverage ----------------------------------------------------------


@njit(cache=True)
def _conservative(sx, sy, tri_id, bary):
    h, w = tri_id.shape
    for t in range(sx.shape[0]):
        x0, x1, x2 = sx[t, 0], sx[t, 1], sx[t, 2]
        y0, y1, y2 = sy[t, 0], sy[t, 1], sy[t, 2]
        den = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
        if den == 0.0:
            continue
        jmin = max(0, int(math.floor(min(x0, x1, x2))))
        jmax = min(w - 1, int(math.floor(max(x0, x1, x2))))
        imin = max(0, int(math.floor(min(y0, y1, y2))))
        imax = min(h - 1, int(math.floor(max(y0, y1, y2))))
        for i in range(imin, imax + 1):
            for j in range(jmin, jmax + 1):
                if tri_id[i, j] >= 0:
                    continue
                # texel square [j, j+1] x [i, i+1] against the triangle: separating axes
                sep = False
                if max(x0, x1, x2) <= j or min(x0, x1, x2) >= j + 1 or max(y0, y1, y2) <= i or min(y0, y1, y2) >= i + 1:
                    sep = True
                for e in range(3):
                    if sep:
                        break
                    ax = sx[t, e]
                    ay = sy[t, e]
                    bx = sx[t, (e + 1) % 3]
                    by = sy[t, (e + 1) % 3]
                    cx = sx[t, (e + 2) % 3]
                    cy = sy[t, (e + 2) % 3]
                    nx = -(by - ay)
                    ny = bx - ax
                    if nx * (cx - ax) + ny * (cy - ay) < 0:
                        nx = -nx
                        ny = -ny
                    best = -np.inf
                    for qx in (j, j + 1):
                        for qy in (i, i + 1):
                            best = max(best, nx * (qx - ax) + ny * (qy - ay))
                    if best <= 0.0:
                        sep = True
                if sep:
                    continue
                px = j + 0.5
                py = i + 0.5
                b0 = ((y1 - y2) * (px - x2) + (x2 - x1) * (py - y2)) / den
                b1 = ((y2 - y0) * (px - x2) + (x0 - x2) * (py - y2)) / den
                b0 = min(max(b0, 0.0), 1.0)
                b1 = min(max(b1, 0.0), 1.0)
                if b0 + b1 > 1.0:
                    s = b0 + b1
                    b0 /= s
                    b1 /= s
                tri_id[i, j] = t
                bary[i, j, 0] = b0
                bary[i, j, 1] = b1
                bary[i, j, 2] = 1.0 - b0 - b1
    return tri_id, bary


def uv_coverage(mesh: TriMesh, size, conservative: bool = True):
    """Triangle id and barycentrics per texel: centre samples first, then texels the charts only graze."""
    if mesh.uvs is None:
        raise MissingUVs("mesh has no UV coordinates")
    w, h = size
    sx = np.ascontiguousarray(mesh.uvs[:, :, 0] * w)
    sy = np.ascontiguousarray(mesh.uvs[:, :, 1] * h)
    z = np.ones_like(sx)
    tri_id, bary, _ = rasterize(sx, sy, z, False, w, h, 0.0, 2.0, False)
    if conservative:
        tri_id, bary = _conservative(sx, sy, tri_id, bary)
    return tri_id, bary


# -- sampling --------------------------------------------------------------------


def masked_bilinear(image: np.ndarray, mask: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Bilinear sampling that ignores uncovered pixels; returns (values, valid)."""
    h, w = image.shape[:2]
    img = image.astype(np.float64)
    if img.ndim == 2:
        img = img[..., None]
    gx = np.asarray(x, dtype=np.float64) - 0.5
    gy = np.asarray(y, dtype=np.float64) - 0.5
    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    fx = gx - x0
    fy = gy - y0
    acc = np.zeros((len(gx), img.shape[2]))
    wsum = np.zeros(len(gx))
    for dx, dy, wt in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)), (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        xi = x0 + dx
        yi = y0 + dy
        ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        xi = np.clip(xi, 0, w - 1)
        yi = np.clip(yi, 0, h - 1)
        ok &= mask[yi, xi]
        wt = np.where(ok, wt, 0.0)
        acc += img[yi, xi] * wt[:, None]
        wsum += wt
    valid = wsum > 1e-12
    out = np.zeros_like(acc)
    out[valid] = acc[valid] / wsum[valid, None]
    return out, valid


def _as_float_image(image) -> np.ndarray:
    img = np.asarray(image)
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    if img.dtype == np.uint16:
        return img.astype(np.float64) / 65535.0
    return img.astype(np.float64)


def visible_points(mesh: TriMesh, render, camera: Camera, points: np.ndarray, tri: np.ndarray, bias: float | None = None):
    """Depth-test surface points (lying on triangles ``tri``) against a view's render.

    The occluder depth is the rendered triangle's plane evaluated at the
    point's exact projection, so sloped surfaces do not self-shadow.
    """
    px, py, d = camera.project(points)
    w, h = camera.width, camera.height
    j = np.floor(px).astype(np.int64)
    i = np.floor(py).astype(np.int64)
    inside = (j >= 0) & (j < w) & (i >= 0) & (i < h) & (d > camera.near)
    ic = np.clip(i, 0, h - 1)
    jc = np.clip(j, 0, w - 1)
    hit = np.where(inside, render.tri_id[ic, jc], -1)
    # points just inside a silhouette can land in a pixel whose centre the mesh misses;
    # borrow the triangle of a covered neighbour and let the plane test decide
    for di, dj in ((0, -1), (0, 1), (-1, 0), (1, 0), (-1, -1), (-1, 1), (1, -1), (1, 1)):
        miss = inside & (hit < 0)
        if not miss.any():
            break
        ni = np.clip(ic[miss] + di, 0, h - 1)
        nj = np.clip(jc[miss] + dj, 0, w - 1)
        hit[miss] = render.tri_id[ni, nj]
    vis = inside & (hit >= 0)
    if bias is None:
        if camera.kind == "orthographic":
            pix = 2.0 * camera.half_extent / h
        else:
            pix = 2.0 * np.maximum(d, camera.near) * math.tan(math.radians(camera.fov_deg) / 2.0) / h
        bias = 1.5 * (1e-7 + pix / 2.0)
    same = hit == tri
    other = vis & ~same
    if other.any():
        sx, sy, sz = screen_triangles(mesh, camera)
        k = hit[other]
        x, y = px[other], py[other]
        x0, x1, x2 = sx[k, 0], sx[k, 1], sx[k, 2]
        y0, y1, y2 = sy[k, 0], sy[k, 1], sy[k, 2]
        den = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
        den = np.where(den == 0, 1e-300, den)
        b0 = ((y1 - y2) * (x - x2) + (x2 - x1) * (y - y2)) / den
        b1 = ((y2 - y0) * (x - x2) + (x0 - x2) * (y - y2)) / den
        b2 = 1.0 - b0 - b1
        if camera.kind == "perspective":
            occ = 1.0 / (b0 / sz[k, 0] + b1 / sz[k, 1] + b2 / sz[k, 2])
        else:
            occ = b0 * sz[k, 0] + b1 * sz[k, 1] + b2 * sz[k, 2]
        b = bias[other] if np.ndim(bias) else bias
        ok = d[other] <= occ + b
        sub = vis[other]
        sub &= ok
        vis[other] = sub
    return vis, px, py


def bake_uv(mesh: TriMesh, views, size=(512, 512), theta_max_deg: float = DEFAULT_THETA_MAX, k: float = DEFAULT_K,
            depth_bias: float | None = None, keep_contributions: bool = False) -> UvTexture:
    """Blend view images into UV space. ``views`` is a list of (Camera, image) pairs."""
    if mesh.uvs is None:
        raise MissingUVs("mesh has no UV coordinates; run fallback_chart first")
    if not views:
        raise ConfigError("at least one view is required")
    w, h = (size, size) if np.isscalar(size) else size
    images = []
    for cam, img in views:
        check_image_size(np.asarray(img), cam)
        images.append(_as_float_image(img))
    chans = {im.shape[2] if im.ndim == 3 else 1 for im in images}
    if len(chans) != 1:
        raise ImageSizeMismatch("all view images must have the same channel count")
    c = chans.pop()

    tri_id, bary = uv_coverage(mesh, (w, h))
    chart = tri_id >= 0
    t = tri_id[chart]
    b = bary[chart]
    pts = np.einsum("mk,mkj->mj", b, mesh.corners()[t])
    if mesh.normals is not None:
        nrm = np.einsum("mk,mkj->mj", b, mesh.normals[mesh.triangles[t]])
        nrm /= np.maximum(np.linalg.norm(nrm, axis=1, keepdims=True), 1e-300)
    else:
        nrm = mesh.face_normals()[t]

    acc = np.zeros((len(t), c))
    wsum = np.zeros(len(t))
    contrib = np.zeros((len(views), h, w)) if keep_contributions else None
    for vi, ((cam, _), img) in enumerate(zip(views, images)):
        render = render_view(mesh, cam)
        wt = compute_view_weight(nrm, cam.view_direction(pts), theta_max_deg, k)
        cand = wt > 0
        if not cand.any():
            continue
        vis, px, py = visible_points(mesh, render, cam, pts[cand], t[cand], depth_bias)
        col, ok = masked_bilinear(img, render.mask, px, py)
        vis &= ok
        wv = np.zeros(len(t))
        idx = np.flatnonzero(cand)[vis]
        wv[idx] = wt[idx]
        acc[idx] += wv[idx, None] * col[vis]
        wsum += wv
        if contrib is not None:
            plane = np.zeros((h, w))
            plane[chart] = wv
            contrib[vi] = plane

    color = np.zeros((h, w, c))
    weight = np.zeros((h, w))
    color[chart] = acc
    weight[chart] = wsum
    mask = np.full((h, w), OUTSIDE_CHART, dtype=np.uint8)
    mask[chart] = np.where(wsum > 0, OBSERVED, HOLE)
    return UvTexture(color, weight, mask, tri_id, contrib)


def finalize_texture(tex: UvTexture, edge_dilation: int = 2):
    """Normalize observed texels and bleed them into outside-chart texels.

    Returns (image (H, W, C) float in the input range, trichotomy mask).
    Hole texels stay zero; their mask entry tells consumers to inpaint them.
    """
    obs = tex.mask == OBSERVED
    img = np.zeros_like(tex.color)
    img[obs] = tex.color[obs] / tex.weight[obs, None]
    filled = obs.copy()
    free = tex.mask == OUTSIDE_CHART
    kernel = np.ones((3, 3))
    for _ in range(int(edge_dilation)):
        cnt = ndimage.convolve(filled.astype(np.float64), kernel, mode="constant")
        grow = free & ~filled & (cnt > 0)
        if not grow.any():
            break
        for ch in range(img.shape[2]):
            s = ndimage.convolve(np.where(filled, img[..., ch], 0.0), kernel, mode="constant")
            img[grow, ch] = s[grow] / cnt[grow]
        filled |= grow
    return img, tex.mask.copy()


# -- fallback charting -------------------------------------------------------------


def _triangle_frames(mesh: TriMesh):
    """Per triangle: corner order starting at the longest edge, and 2D coords with that edge on the x axis."""
    c = mesh.corners()
    e = np.stack([np.linalg.norm(c[:, 1] - c[:, 0], axis=1), np.linalg.norm(c[:, 2] - c[:, 1], axis=1),
                  np.linalg.norm(c[:, 0] - c[:, 2], axis=1)], axis=1)
    first = np.argmax(e, axis=1)  # edge (first, first+1) is the base
    ids = (first[:, None] + np.arange(3)[None, :]) % 3
    p = np.take_along_axis(c, ids[:, :, None], axis=1)
    base = p[:, 1] - p[:, 0]
    blen = np.linalg.norm(base, axis=1)
    ex = base / np.maximum(blen, 1e-300)[:, None]
    rel = p[:, 2] - p[:, 0]
    ax = np.einsum("ij,ij->i", rel, ex)
    ay = np.linalg.norm(rel - ax[:, None] * ex, axis=1)
    local = np.zeros((len(c), 3, 2))
    local[:, 1, 0] = blen
    local[:, 2, 0] = ax
    local[:, 2, 1] = ay
    return ids, local, blen, ay


def _shelf_pack(widths, heights, size):
    order = np.lexsort((np.arange(len(heights)), -heights))
    pos = np.zeros((len(widths), 2), dtype=np.int64)
    x = y = shelf = 0
    for i in order:
        cw, ch = widths[i], heights[i]
        if cw > size:
            return None
        if x + cw > size:
            y += shelf
            x = shelf = 0
        if y + ch > size:
            return None
        pos[i] = (x, y)
        x += cw
        shelf = max(shelf, ch)
    return pos


def fallback_chart(mesh: TriMesh, texture_size: int = 1024, gutter: int = GUTTER) -> TriMesh:
    """One rectangle chart per triangle, shelf-packed at the largest uniform scale that fits."""
    size = int(texture_size)
    if mesh.triangle_count == 0:
        return mesh.replace(uvs=np.zeros((0, 3, 2)))
    ids, local, blen, height = _triangle_frames(mesh)

    def cells(s):
        return (np.ceil(blen * s).astype(np.int64) + 2 * gutter, np.ceil(height * s).astype(np.int64) + 2 * gutter)

    lo, hi = 0.0, size / max(float(blen.max()), 1e-300)
    if _shelf_pack(*cells(lo), size) is None:
        raise TooManyTriangles(f"{mesh.triangle_count} triangles do not fit at {size}x{size} even with empty charts")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _shelf_pack(*cells(mid), size) is None:
            hi = mid
        else:
            lo = mid
    s = lo
    if float(np.sum(blen * height) * s * s) < mesh.triangle_count:
        raise TooManyTriangles(f"packing leaves less than one texel per triangle at {size}x{size}")
    pos = _shelf_pack(*cells(s), size)
    uv_local = (local * s + pos[:, None, :] + gutter) / size
    uvs = np.zeros((mesh.triangle_count, 3, 2))
    np.put_along_axis(uvs, ids[:, :, None], uv_local, axis=1)
    return mesh.replace(uvs=uvs)


# -- image I/O ------------------------------------------------------------------------


def save_png(path, image: np.ndarray, bit_depth: int = 8) -> None:
    """Save a float image in [0, 1] (H, W[, C]) as an 8- or 16-bit PNG."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if img.ndim == 3 and img.shape[2] == 2:
        img = np.concatenate([img, np.zeros(img.shape[:2] + (1,))], axis=2)
    if bit_depth == 8:
        from PIL import Image

        arr = (img * 255.0 + 0.5).astype(np.uint8)
        Image.fromarray(arr.squeeze()).save(path)
    elif bit_depth == 16:
        try:
            import cv2
        except ImportError as exc:
            raise ConfigError("16-bit PNG output needs opencv (pip install artifact[png16])") from exc

        arr = (img * 65535.0 + 0.5).astype(np.uint16)
        if arr.ndim == 3:
            arr = arr[..., ::-1]
        if not cv2.imwrite(str(path), arr):
            raise OSError(f"could not write {path}")
    else:
        raise ConfigError("bit depth must be 8 or 16")


def load_image(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode not in ("RGB", "RGBA", "L", "I;16"):
            im = im.convert("RGB")
        arr = np.asarray(im)
    if arr.ndim == 3 and arr.shape[2] == 4:
        arr = arr[..., :3]
    return arr


def save_mask_png(path, mask: np.ndarray) -> None:
    """Mask PNG: observed 255, hole 128, outside chart 0."""
    from PIL import Image

    lut = np.array([0, 255, 128], dtype=np.uint8)
    Image.fromarray(lut[mask]).save(path)
