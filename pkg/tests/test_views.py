import numpy as np
import pytest

from meshkit.errors import ConfigError, ImageSizeMismatch
from meshkit.formats import read_blob
from meshkit.mesh import TriMesh
from meshkit.primitives import cube, icosphere, torus
from meshkit.views import (Camera, check_image_size, make_canonical_cameras, make_random_cameras, orbit_camera,
                           render_view, save_render)


def _quad(z, half=2.0, flip=False):
    v = np.array([[-half, -half, z], [half, -half, z], [half, half, z], [-half, half, z]])
    t = np.array([[0, 1, 2], [0, 2, 3]])
    return TriMesh(v, t[:, ::-1] if flip else t)


def test_canonical_front_camera():
    c = make_canonical_cameras(4, (64, 64))
    assert c[0].position.tolist() == [0.0, 0.0, 3.0]
    assert np.allclose(c[0].forward, [0, 0, -1], atol=1e-15)
    assert c[1].position.tolist() == [3.0, 0.0, 0.0]
    assert all(cam.kind == "orthographic" and cam.half_extent == 1.2 for cam in c)
    assert all(np.allclose(cam.rotation[1], [0, 1, 0]) for cam in c)


def test_canonical_cameras_see_unit_cube():
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float)
    for cam in make_canonical_cameras(4, (100, 80)):
        px, py, d = cam.project(corners)
        assert np.all((px >= 0) & (px <= cam.width) & (py >= 0) & (py <= cam.height))
        assert np.all((d > cam.near) & (d < cam.far))


def test_canonical_count_fixed():
    with pytest.raises(ConfigError):
        make_canonical_cameras(6)


def test_random_camera_elevation_range():
    cams = make_random_cameras(10_000, seed=1, image_size=(4, 4))
    el = np.degrees(np.arcsin(np.array([c.position[1] for c in cams]) / 3.0))
    assert el.min() >= -30.0 - 1e-9 and el.max() <= 70.0 + 1e-9


def test_random_cameras_seeded():
    a = make_random_cameras(5, seed=3)
    b = make_random_cameras(5, seed=3)
    assert all(np.array_equal(x.position, y.position) and np.array_equal(x.rotation, y.rotation) for x, y in zip(a, b))
    assert not np.array_equal(a[0].position, make_random_cameras(5, seed=4)[0].position)


def test_random_cameras_equatorial():
    for c in make_random_cameras(50, elevation_range=(0.0, 0.0), seed=2):
        assert abs(c.position[1]) < 1e-9 * np.linalg.norm(c.position)


def test_camera_validation():
    with pytest.raises(ConfigError):
        Camera("orthographic", np.eye(3), np.zeros(3), 0, 4)
    with pytest.raises(ConfigError):
        Camera("orthographic", np.eye(3), np.zeros(3), 4, 4, near=2.0, far=1.0)
    with pytest.raises(ConfigError):
        Camera("orthographic", np.eye(3) * 2, np.zeros(3), 4, 4)


def test_full_screen_quad():
    cam = make_canonical_cameras(4, (32, 24))[0]
    r = render_view(_quad(0.0), cam)
    assert r.mask.all()
    assert np.max(np.abs(r.depth - 3.0)) < 1e-12
    assert np.all(np.abs(r.ccm[..., 2]) < 1e-12)
    assert np.all(r.rgb == int(0.7 * 255 + 0.5))


def test_empty_scene():
    cam = make_canonical_cameras(4, (16, 16))[0]
    r = render_view(TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)), cam)
    assert not r.mask.any() and np.all(np.isinf(r.depth)) and not r.ccm.any()


def test_back_faces_culled():
    cam = make_canonical_cameras(4, (16, 16))[0]
    assert not render_view(_quad(0.0, flip=True), cam).mask.any()


def test_sphere_front_point():
    cam = orbit_camera(0.0, 0.0, (129, 129))
    r = render_view(icosphere(4), cam)
    assert np.allclose(r.ccm[64, 64], [0, 0, 1], atol=1e-2)
    assert np.allclose(r.normal[64, 64], [0, 0, 1], atol=1e-2)


def test_depth_test_nearer_wins():
    cam = orbit_camera(0.0, 0.0, (48, 48))
    near_tri = TriMesh(np.array([[-1.0, -1, 0.5], [1, -1, 0.5], [0, 1, 0.5]]), np.array([[0, 1, 2]]))
    far_tri = TriMesh(np.array([[-1.0, -0.5, -0.2], [1, -0.5, -0.2], [0, 1.1, -0.2]]), np.array([[0, 1, 2]]))
    for order in ((near_tri, far_tri), (far_tri, near_tri)):
        v = np.concatenate([order[0].vertices, order[1].vertices])
        m = TriMesh(v, np.array([[0, 1, 2], [3, 4, 5]]))
        near_id = 0 if order[0] is near_tri else 1
        only_near = render_view(near_tri, cam).mask
        r = render_view(m, cam)
        assert np.all(r.tri_id[only_near] == near_id)
        assert np.max(np.abs(r.depth[only_near] - 2.5)) < 1e-12


def _ccm_unproject_error(mesh, cam):
    r = render_view(mesh, cam)
    ys, xs = np.nonzero(r.mask)
    world = cam.unproject(xs + 0.5, ys + 0.5, r.depth[ys, xs])
    return np.max(np.linalg.norm(world - r.ccm[ys, xs], axis=1))


@pytest.mark.parametrize("kind", ["orthographic", "perspective"])
def test_ccm_matches_unprojection(kind):
    cam = orbit_camera(35.0, 20.0, (96, 80), kind=kind)
    assert _ccm_unproject_error(torus(), cam) < 1e-4


def test_normals_unit_or_zero():
    r = render_view(torus(), orbit_camera(10.0, 40.0, (64, 64)))
    n = np.linalg.norm(r.normal, axis=2)
    assert np.all((n == 0) | (np.abs(n - 1) <= 1e-3))
    assert np.array_equal(n > 0, r.mask)
    assert np.array_equal(np.isfinite(r.depth), r.mask)


def test_deterministic():
    cam = orbit_camera(123.0, -10.0, (64, 64), kind="perspective")
    a = render_view(torus(), cam, light="lambert_headlight")
    b = render_view(torus(), cam, light="lambert_headlight")
    for name in ("rgb", "normal", "depth", "ccm", "mask"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_headlight_darker_at_rim():
    r = render_view(icosphere(3), orbit_camera(0.0, 0.0, (65, 65)), light="lambert_headlight")
    row = r.rgb[32, :, 0].astype(int)
    covered = np.nonzero(r.mask[32])[0]
    assert row[32] > row[covered[0]] and row[32] > row[covered[-1]]


def test_uv_channel_interpolates_corners():
    m = _quad(0.0)
    m = m.replace(uvs=np.array([[[0, 0], [1, 0], [1, 1]], [[0, 0], [1, 1], [0, 1]]], dtype=float))
    r = render_view(m, make_canonical_cameras(4, (16, 16))[0])
    assert r.uv is not None
    uv = r.uv[r.mask]
    assert np.all((uv >= 0) & (uv <= 1))
    # the UV map is affine in position on the quad
    pos = r.ccm[r.mask]
    fit, *_ = np.linalg.lstsq(np.c_[pos[:, :2], np.ones(len(pos))], uv, rcond=None)
    assert np.max(np.abs(np.c_[pos[:, :2], np.ones(len(pos))] @ fit - uv)) < 1e-9


def test_save_render_channels(tmp_path):
    cam = make_canonical_cameras(4, (20, 10))[0]
    r = render_view(cube(0.5), cam)
    paths = save_render(r, tmp_path / "v0")
    assert len(paths) == 5
    header, arr = read_blob(tmp_path / "v0_depth.chan")
    assert header["channel"] == "depth" and Camera.from_dict(header["camera"]).width == 20
    assert np.array_equal(np.transpose(arr, (1, 0, 2))[..., 0], r.depth.astype(np.float32))


def test_image_size_check():
    cam = make_canonical_cameras(4, (20, 10))[0]
    check_image_size(np.zeros((10, 20, 3)), cam)
    with pytest.raises(ImageSizeMismatch):
        check_image_size(np.zeros((20, 10, 3)), cam)
