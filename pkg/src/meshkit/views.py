"""Deterministic software rasterizer emitting geometric channels.

Cameras look down their local -Z axis; rotation rows map world to camera
coordinates and depth is the distance along the view axis. Images are
row-major (H, W, ...) with pixel (i, j) centred at (j + 0.5, i + 0.5) and
rows growing downward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ConfigError, ImageSizeMismatch
from .formats import write_blob
from .mesh import TriMesh

DEFAULT_ALBEDO = (0.7, 0.7, 0.7)


@dataclass(frozen=True, eq=False)
class Camera:
    kind: str
    rotation: np.ndarray
    position: np.ndarray
    width: int
    height: int
    half_extent: float = 1.2
    fov_deg: float = 40.0
    near: float = 0.01
    far: float = 10.0

    def __post_init__(self):
        if self.kind not in ("orthographic", "perspective"):
            raise ConfigError(f"unknown camera kind {self.kind!r}")
        if self.width < 1 or self.height < 1:
            raise ConfigError("image size must be positive")
        if not self.near < self.far:
            raise ConfigError("near must be below far")
        r = np.asarray(self.rotation, dtype=np.float64)
        if r.shape != (3, 3) or np.abs(r @ r.T - np.eye(3)).max() > 1e-9:
            raise ConfigError("camera rotation must be orthonormal")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))

    @property
    def forward(self) -> np.ndarray:
        return -self.rotation[2]

    @property
    def size(self) -> tuple:
        return (self.width, self.height)

    def to_camera(self, points) -> np.ndarray:
        return (np.atleast_2d(points) - self.position) @ self.rotation.T

    def _scales(self, depth):
        aspect = self.width / self.height
        if self.kind == "orthographic":
            sy = np.full_like(depth, self.half_extent)
        else:
            sy = depth * math.tan(math.radians(self.fov_deg) / 2.0)
        return sy * aspect, sy

    def project(self, points):
        """World points to (pixel x, pixel y, depth); pixel coordinates are continuous."""
        pc = self.to_camera(points)
        depth = -pc[:, 2]
        sx, sy = self._scales(depth)
        px = (pc[:, 0] / sx + 1.0) * 0.5 * self.width
        py = (1.0 - pc[:, 1] / sy) * 0.5 * self.height
        return px, py, depth

    def unproject(self, px, py, depth) -> np.ndarray:
        px, py, depth = (np.asarray(a, dtype=np.float64) for a in (px, py, depth))
        sx, sy = self._scales(depth)
        xc = (px / self.width * 2.0 - 1.0) * sx
        yc = (1.0 - py / self.height * 2.0) * sy
        pc = np.stack([xc, yc, -depth], axis=-1)
        return pc @ self.rotation + self.position

    def view_direction(self, points) -> np.ndarray:
        """Unit vectors from surface points toward the camera."""
        if self.kind == "orthographic":
            return np.tile(-self.forward, (len(np.atleast_2d(points)), 1))
        d = self.position - np.atleast_2d(points)
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "rotation": self.rotation.tolist(),
            "position": self.position.tolist(),
            "width": self.width,
            "height": self.height,
            "half_extent": self.half_extent,
            "fov_deg": self.fov_deg,
            "near": self.near,
            "far": self.far,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(
            kind=d["kind"],
            rotation=np.asarray(d["rotation"], dtype=np.float64),
            position=np.asarray(d["position"], dtype=np.float64),
            width=int(d["width"]),
            height=int(d["height"]),
            half_extent=float(d.get("half_extent", 1.2)),
            fov_deg=float(d.get("fov_deg", 40.0)),
            near=float(d.get("near", 0.01)),
            far=float(d.get("far", 10.0)),
        )


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)) -> np.ndarray:
    eye, target, up = (np.asarray(x, dtype=np.float64) for x in (eye, target, up))
    f = target - eye
    f /= np.linalg.norm(f)
    right = np.cross(f, up)
    if np.linalg.norm(right) < 1e-12:
        right = np.cross(f, np.array([0.0, 0.0, 1.0]))
    right /= np.linalg.norm(right)
    true_up = np.cross(right, f)
    return np.stack([right, true_up, -f])


def orbit_camera(azimuth_deg, elevation_deg, image_size=(128, 128), distance=3.0, kind="orthographic",
                 half_extent=1.2, fov_deg=40.0) -> Camera:
    az, el = math.radians(azimuth_deg), math.radians(elevation_deg)
    pos = distance * np.array([math.cos(el) * math.sin(az), math.sin(el), math.cos(el) * math.cos(az)])
    # snap round-off so canonical poses are exact
    pos = np.where(np.abs(pos) < 1e-12, 0.0, pos)
    w, h = image_size
    return Camera(kind, look_at(pos), pos, int(w), int(h), half_extent=half_extent, fov_deg=fov_deg,
                  near=0.01, far=distance + 3.0)


def make_canonical_cameras(count: int = 4, image_size=(128, 128)) -> list:
    if count != 4:
        raise ConfigError("canonical camera rig has exactly 4 views")
    return [orbit_camera(a, 0.0, image_size) for a in (0.0, 90.0, 180.0, 270.0)]


def make_random_cameras(n: int, elevation_range=(-30.0, 70.0), seed: int = 0, image_size=(512, 512),
                        kind="orthographic", distance=3.0) -> list:
    if n < 1:
        raise ConfigError("n must be at least 1")
    rng = np.random.default_rng(seed)
    az = rng.uniform(0.0, 360.0, n)
    el = rng.uniform(elevation_range[0], elevation_range[1], n)
    return [orbit_camera(float(a), float(e), image_size, distance, kind) for a, e in zip(az, el)]


# -- rasterization -------------------------------------------------------------


@njit(cache=True, inline="always")
def _edge(ax, ay, bx, by, px, py):
    # evaluated from the lexicographically smaller endpoint so that a shared
    # edge seen from the two adjacent triangles gives exactly negated values
    if ax > bx or (ax == bx and ay > by):
        return -((ax - bx) * (py - by) - (ay - by) * (px - bx))
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


@njit(cache=True, inline="always")
def _top_left(ax, ay, bx, by, cx, cy):
    # inward normal of edge ab (toward c), in y-down pixel space
    nx = -(by - ay)
    ny = bx - ax
    if nx * (cx - ax) + ny * (cy - ay) < 0:
        nx = -nx
        ny = -ny
    return nx > 0 or (nx == 0 and ny > 0)


@njit(cache=True)
def rasterize(sx, sy, z, perspective, width, height, near, far, cull_back):
    """Per-pixel nearest triangle id, barycentrics and depth for screen-space triangles."""
    tri_id = np.full((height, width), -1, dtype=np.int64)
    bary = np.zeros((height, width, 3))
    depth = np.full((height, width), np.inf)
    for t in range(sx.shape[0]):
        x0, x1, x2 = sx[t, 0], sx[t, 1], sx[t, 2]
        y0, y1, y2 = sy[t, 0], sy[t, 1], sy[t, 2]
        z0, z1, z2 = z[t, 0], z[t, 1], z[t, 2]
        if not (z0 > near and z1 > near and z2 > near):
            continue
        area = _edge(x0, y0, x1, y1, x2, y2)
        if area == 0.0 or not np.isfinite(area):
            continue
        # counter-clockwise as seen by the viewer has negative area in y-down space
        if cull_back and area > 0.0:
            continue
        sgn = -1.0 if area < 0.0 else 1.0
        tl0 = _top_left(x1, y1, x2, y2, x0, y0)
        tl1 = _top_left(x2, y2, x0, y0, x1, y1)
        tl2 = _top_left(x0, y0, x1, y1, x2, y2)
        jmin = max(0, int(math.ceil(min(x0, x1, x2) - 0.5)))
        jmax = min(width - 1, int(math.floor(max(x0, x1, x2) - 0.5)))
        imin = max(0, int(math.ceil(min(y0, y1, y2) - 0.5)))
        imax = min(height - 1, int(math.floor(max(y0, y1, y2) - 0.5)))
        for i in range(imin, imax + 1):
            py = i + 0.5
            for j in range(jmin, jmax + 1):
                px = j + 0.5
                w0 = sgn * _edge(x1, y1, x2, y2, px, py)
                w1 = sgn * _edge(x2, y2, x0, y0, px, py)
                w2 = sgn * _edge(x0, y0, x1, y1, px, py)
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                if (w0 == 0.0 and not tl0) or (w1 == 0.0 and not tl1) or (w2 == 0.0 and not tl2):
                    continue
                s = w0 + w1 + w2
                b0 = w0 / s
                b1 = w1 / s
                b2 = w2 / s
                if perspective:
                    q0 = b0 / z0
                    q1 = b1 / z1
                    q2 = b2 / z2
                    qs = q0 + q1 + q2
                    d = 1.0 / qs
                    b0 = q0 / qs
                    b1 = q1 / qs
                    b2 = q2 / qs
                else:
                    d = b0 * z0 + b1 * z1 + b2 * z2
                if d < near or d > far:
                    continue
                if d < depth[i, j]:
                    depth[i, j] = d
                    tri_id[i, j] = t
                    bary[i, j, 0] = b0
                    bary[i, j, 1] = b1
                    bary[i, j, 2] = b2
    return tri_id, bary, depth


def bilinear(image: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample an (H, W, C) image at continuous pixel coordinates (clamped to the edge)."""
    h, w = image.shape[:2]
    x = np.clip(np.asarray(x, dtype=np.float64) - 0.5, 0.0, w - 1)
    y = np.clip(np.asarray(y, dtype=np.float64) - 0.5, 0.0, h - 1)
    x0 = np.minimum(np.floor(x).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    img = image.astype(np.float64)
    if img.ndim == 2:
        img = img[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


@dataclass(eq=False)
class ViewRender:
    camera: Camera
    rgb: np.ndarray
    normal: np.ndarray
    depth: np.ndarray
    ccm: np.ndarray
    mask: np.ndarray
    tri_id: np.ndarray
    bary: np.ndarray
    uv: np.ndarray | None = None
    extras: dict = field(default_factory=dict)


def screen_triangles(mesh: TriMesh, camera: Camera):
    px, py, d = camera.project(mesh.vertices)
    t = mesh.triangles
    return px[t], py[t], d[t]


def render_view(mesh: TriMesh, camera: Camera, light: str = "flat_albedo", albedo=DEFAULT_ALBEDO,
                cull_back: bool = True) -> ViewRender:
    """Rasterize geometry channels plus flat-shaded RGB."""
    if light not in ("flat_albedo", "lambert_headlight"):
        raise ConfigError(f"unknown light {light!r}")
    w, h = camera.width, camera.height
    if mesh.triangle_count:
        sx, sy, sz = screen_triangles(mesh, camera)
        tri_id, bary, depth = rasterize(
            np.ascontiguousarray(sx), np.ascontiguousarray(sy), np.ascontiguousarray(sz),
            camera.kind == "perspective", w, h, camera.near, camera.far, cull_back,
        )
    else:
        tri_id = np.full((h, w), -1, dtype=np.int64)
        bary = np.zeros((h, w, 3))
        depth = np.full((h, w), np.inf)
    mask = tri_id >= 0
    ccm = np.zeros((h, w, 3))
    normal = np.zeros((h, w, 3))
    rgb = np.zeros((h, w, 3))
    uv_img = None
    if mask.any():
        t = tri_id[mask]
        b = bary[mask]
        corners = mesh.corners()[t]
        ccm[mask] = np.einsum("mk,mkj->mj", b, corners)
        if mesh.normals is not None:
            n = np.einsum("mk,mkj->mj", b, mesh.normals[mesh.triangles[t]])
        else:
            n = mesh.face_normals()[t]
        ln = np.linalg.norm(n, axis=1, keepdims=True)
        n = np.where(ln > 1e-12, n / np.where(ln > 1e-12, ln, 1.0), mesh.face_normals()[t])
        normal[mask] = n
        if mesh.uvs is not None:
            uv_img = np.zeros((h, w, 2))
            uv_img[mask] = np.einsum("mk,mkj->mj", b, mesh.uvs[t])
        col = np.tile(np.asarray(albedo, dtype=np.float64)[:3], (len(t), 1))
        if light == "lambert_headlight":
            col = col * np.clip(np.einsum("ij,ij->i", n, camera.view_direction(ccm[mask])), 0.0, 1.0)[:, None]
        rgb[mask] = col
    return ViewRender(camera, (np.clip(rgb, 0, 1) * 255.0 + 0.5).astype(np.uint8), normal, depth, ccm, mask, tri_id, bary, uv_img,
                      extras={"color": rgb})


def save_render(render: ViewRender, stem) -> list:
    """Write rgb/mask PNGs and depth/normal/ccm channel dumps next to ``stem``."""
    from PIL import Image

    stem = str(stem)
    paths = [f"{stem}_rgb.png", f"{stem}_mask.png"]
    Image.fromarray(render.rgb).save(paths[0])
    Image.fromarray((render.mask * 255).astype(np.uint8)).save(paths[1])
    cam = render.camera.to_dict()
    for name, arr in (("depth", render.depth[..., None]), ("normal", render.normal), ("ccm", render.ccm)):
        p = f"{stem}_{name}.chan"
        # stored as [x, y, c] so the x-fastest layout matches image scanlines
        write_blob(p, {"format": "chan", "channel": name, "camera": cam}, np.transpose(arr, (1, 0, 2)))
        paths.append(p)
    return paths


def check_image_size(image: np.ndarray, camera: Camera) -> None:
    if image.shape[0] != camera.height or image.shape[1] != camera.width:
        raise ImageSizeMismatch(f"image is {image.shape[1]}x{image.shape[0]}, camera expects {camera.width}x{camera.height}")
