import numpy as np
import pytest

from meshkit.bake import (HOLE, OBSERVED, OUTSIDE_CHART, UvTexture, bake_uv, compute_view_weight, fallback_chart,
                          finalize_texture, load_image, save_mask_png, save_png, uv_coverage)
from meshkit.errors import ImageSizeMismatch, MissingUVs, TooManyTriangles
from meshkit.mesh import TriMesh
from meshkit.primitives import icosphere
from meshkit.views import make_canonical_cameras, orbit_camera, render_view

from bake_fixtures import occlusion_scene, render_views, textured_sphere
from oracles import psnr


def _solid(cam, rgb):
    img = np.zeros((cam.height, cam.width, 3), dtype=np.uint8)
    img[...] = rgb
    return img


def _red_quad():
    v = np.array([[-1, -1, 0], [1, -1, 0], [1, 1, 0], [-1, 1, 0.0]])
    uv = np.array([[[0, 1], [1, 1], [1, 0]], [[0, 1], [1, 0], [0, 0]]], dtype=float)
    return TriMesh(v, np.array([[0, 1, 2], [0, 2, 3]]), uvs=uv)


def test_weight_examples():
    assert compute_view_weight([0, 0, 1], [0, 0, 1]) == 1.0
    assert compute_view_weight([0, 0, 1], [1, 0, 0]) == 0.0
    c, s = np.cos(np.radians(60)), np.sin(np.radians(60))
    assert abs(compute_view_weight([0, 0, 1], [s, 0, c]) - 0.25) < 1e-12


def test_weight_cutoff_and_range():
    c, s = np.cos(np.radians(80)), np.sin(np.radians(80))
    assert compute_view_weight([0, 0, 1], [s, 0, c]) == 0.0
    rng = np.random.default_rng(0)
    n = rng.normal(size=(1000, 3))
    v = rng.normal(size=(1000, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    w = compute_view_weight(n, v)
    assert np.all((w >= 0) & (w <= 1))


@pytest.mark.parametrize("image_px,tex_px", [(64, 64), (128, 256), (100, 33)])
def test_red_quad_exact(image_px, tex_px):
    cam = orbit_camera(0.0, 0.0, (image_px, image_px))
    tex = bake_uv(_red_quad(), [(cam, _solid(cam, (255, 0, 0)))], tex_px)
    img, mask = finalize_texture(tex, 0)
    assert np.all(mask == OBSERVED)
    assert np.all(img == [1.0, 0.0, 0.0])


def test_sphere_four_views_polar_holes():
    mesh = fallback_chart(icosphere(4, radius=0.8), 512)
    views = [(c, render_view(mesh, c).rgb) for c in make_canonical_cameras(4, (256, 256))]
    tex = bake_uv(mesh, views, 512)
    frac = tex.hole_fraction()
    assert 0.0 < frac < 0.3
    assert abs(frac - 0.043211206896551724) < 1e-9  # frozen
    tri, bary = uv_coverage(mesh, (512, 512))
    hole = tex.mask == HOLE
    pts = np.einsum("mk,mkj->mj", bary[hole], mesh.corners()[tri[hole]])
    # every hole sits near a pole, where all four equatorial views graze
    assert np.min(np.abs(pts[:, 1])) / 0.8 > 0.9


def test_occluded_view_contributes_nothing():
    mesh = occlusion_scene()
    a = orbit_camera(0.0, 0.0, (128, 128))
    b = orbit_camera(-50.0, 0.0, (128, 128))
    tex = bake_uv(mesh, [(a, _solid(a, (255, 0, 0))), (b, _solid(b, (0, 0, 255)))], 256, keep_contributions=True)
    img, mask = finalize_texture(tex, 0)
    main = (tex.tri_id == 0) | (tex.tri_id == 1)
    u = (np.arange(256) + 0.5) / 256
    x = np.broadcast_to(((u - 0.02) / 0.46 * 2 - 1)[None, :], main.shape)
    # seen from b, the blocker hides x in [0.8, 1.2] of the main quad
    shadowed = main & (x >= 0.8) & (x <= 1.0)
    assert shadowed.sum() > 1000
    assert np.all(tex.contributions[1][shadowed] == 0.0)
    assert np.all(mask[shadowed] == OBSERVED)
    assert np.all(img[shadowed] == [1.0, 0.0, 0.0])
    # and view b does reach the unshadowed part of the quad
    assert np.all(tex.contributions[1][main & (x < -0.2)] > 0)
    # view a is blocked behind the blocker
    assert np.all(tex.contributions[0][main & (x > 0.25) & (x < 0.55)] == 0.0)


def test_round_trip_psnr():
    mesh, original, chart = textured_sphere(512)
    tex = bake_uv(mesh, render_views(mesh, original), 512)
    img, mask = finalize_texture(tex, 0)
    obs = mask == OBSERVED
    assert obs.sum() == chart.sum()
    assert psnr(img[obs], original[obs]) >= 35.0


def test_convex_combination():
    mesh = fallback_chart(icosphere(3, radius=0.8), 256)
    rng = np.random.default_rng(1)
    cams = [orbit_camera(float(a), float(e), (96, 96)) for a, e in zip(rng.uniform(0, 360, 6), rng.uniform(-30, 70, 6))]
    colors = rng.integers(0, 256, size=(6, 3))
    tex = bake_uv(mesh, [(c, _solid(c, col)) for c, col in zip(cams, colors)], 256, keep_contributions=True)
    img, mask = finalize_texture(tex, 0)
    obs = mask == OBSERVED
    contributing = tex.contributions[:, obs] > 0  # (V, M)
    cols = colors[:, None, :] / 255.0
    lo = np.where(contributing[..., None], cols, np.inf).min(axis=0)
    hi = np.where(contributing[..., None], cols, -np.inf).max(axis=0)
    assert np.all((img[obs] >= lo - 1e-12) & (img[obs] <= hi + 1e-12))


def test_mask_trichotomy_and_weight():
    mesh = fallback_chart(icosphere(2), 128)
    views = [(c, render_view(mesh, c).rgb) for c in make_canonical_cameras(4, (64, 64))]
    tex = bake_uv(mesh, views, 128)
    assert set(np.unique(tex.mask)) <= {OUTSIDE_CHART, OBSERVED, HOLE}
    assert np.array_equal(tex.mask == OBSERVED, tex.weight > 0)
    assert np.all(tex.weight[tex.mask == OUTSIDE_CHART] == 0)


def test_two_channel_bake():
    cam = orbit_camera(0.0, 0.0, (32, 32))
    mr = np.zeros((32, 32, 2))
    mr[..., 0], mr[..., 1] = 0.25, 0.75
    img, mask = finalize_texture(bake_uv(_red_quad(), [(cam, mr)], 32), 0)
    assert img.shape[2] == 2 and np.allclose(img[mask == OBSERVED], [0.25, 0.75], atol=1e-12)


def test_missing_uvs():
    cam = orbit_camera(0.0, 0.0, (8, 8))
    with pytest.raises(MissingUVs):
        bake_uv(icosphere(1), [(cam, _solid(cam, (1, 2, 3)))])


def test_image_size_mismatch():
    cam = orbit_camera(0.0, 0.0, (8, 8))
    with pytest.raises(ImageSizeMismatch):
        bake_uv(_red_quad(), [(cam, np.zeros((9, 8, 3), dtype=np.uint8))])


def _texture(color, weight, mask):
    return UvTexture(color, weight, mask, np.where(mask == OUTSIDE_CHART, -1, 0))


def test_finalize_all_observed():
    rng = np.random.default_rng(2)
    w = rng.uniform(0.5, 2.0, (8, 8))
    c = rng.uniform(0, 1, (8, 8, 3)) * w[..., None]
    img, mask = finalize_texture(_texture(c, w, np.full((8, 8), OBSERVED, np.uint8)), 2)
    assert np.array_equal(img, c / w[..., None]) and np.all(mask == OBSERVED)


def test_finalize_dilation_zero_and_holes():
    mask = np.full((8, 8), OUTSIDE_CHART, np.uint8)
    mask[2:6, 2:4] = OBSERVED
    mask[2:6, 4:6] = HOLE
    w = (mask == OBSERVED).astype(float)
    c = np.zeros((8, 8, 3))
    c[mask == OBSERVED] = [0.2, 0.4, 0.6]
    img0, _ = finalize_texture(_texture(c, w, mask), 0)
    assert not img0[mask != OBSERVED].any()
    img2, out_mask = finalize_texture(_texture(c, w, mask), 2)
    assert not img2[mask == HOLE].any()
    assert np.array_equal(out_mask, mask)
    assert np.allclose(img2[1, 1], [0.2, 0.4, 0.6])


def test_dilation_prevents_black_bleed():
    # two charts (red, green) separated by a 4-texel gutter; 2x2 mip of the dilated image has no dark texels
    mask = np.full((16, 16), OUTSIDE_CHART, np.uint8)
    mask[2:14, 1:7] = OBSERVED
    mask[2:14, 11:15] = OBSERVED
    c = np.zeros((16, 16, 3))
    c[2:14, 1:7] = [1, 0, 0]
    c[2:14, 11:15] = [0, 1, 0]
    img, _ = finalize_texture(_texture(c, (mask == OBSERVED).astype(float), mask), 2)
    mip = img.reshape(8, 2, 8, 2, 3).mean(axis=(1, 3))
    chart_mip = (mask == OBSERVED).reshape(8, 2, 8, 2).any(axis=(1, 3))
    assert np.all(mip[chart_mip].sum(axis=1) >= 1.0 - 1e-12)
    # gutter texels next to a chart copy its colour
    assert np.allclose(img[5, 7], [1, 0, 0]) and np.allclose(img[5, 10], [0, 1, 0])


def _texel_boxes(uvs, size):
    lo = np.floor(uvs.min(axis=1) * size).astype(int)
    hi = np.ceil(uvs.max(axis=1) * size).astype(int)
    return lo, hi


def _max_box_overlap(lo, hi, size, pad):
    # boxes grown by pad, then shifted by pad so indices stay non-negative
    count = np.zeros((size + 2 * pad + 1, size + 2 * pad + 1), dtype=np.int64)
    for (x0, y0), (x1, y1) in zip(lo, hi + 2 * pad):
        count[y0, x0] += 1
        count[y0, x1] -= 1
        count[y1, x0] -= 1
        count[y1, x1] += 1
    return count.cumsum(0).cumsum(1).max()


def test_fallback_two_triangles_disjoint():
    m = fallback_chart(_red_quad().replace(uvs=None), 256)
    a, _ = uv_coverage(m.replace(triangles=m.triangles[:1], uvs=m.uvs[:1]), (256, 256))
    b, _ = uv_coverage(m.replace(triangles=m.triangles[1:], uvs=m.uvs[1:]), (256, 256))
    assert (a >= 0).any() and (b >= 0).any()
    assert not np.any((a >= 0) & (b >= 0))


def test_fallback_icosphere_no_overlap_and_gutter():
    m = fallback_chart(icosphere(3), 1024)
    assert m.triangle_count == 1280
    assert np.all((m.uvs >= 0) & (m.uvs <= 1))
    lo, hi = _texel_boxes(m.uvs, 1024)
    assert _max_box_overlap(lo, hi, 1024, 0) == 1
    # growing every texel box by one on each side keeps them apart: gaps are at least 2 texels
    assert _max_box_overlap(lo, hi, 1024, 1) == 1


def test_fallback_single_triangle_fills_half():
    m = TriMesh(np.array([[0, 0, 0], [1, 0, 0], [0.3, 0.8, 0.0]]), np.array([[0, 1, 2]]))
    uv = fallback_chart(m, 256).uvs[0]
    extent = uv.max(axis=0) - uv.min(axis=0)
    assert extent[0] * extent[1] >= 0.5


def test_fallback_too_many_triangles():
    with pytest.raises(TooManyTriangles):
        fallback_chart(icosphere(4), 32)


def test_png_8_and_16_bit(tmp_path):
    import cv2

    rng = np.random.default_rng(3)
    img = rng.uniform(0, 1, (5, 7, 3))
    save_png(tmp_path / "a.png", img, 8)
    assert np.array_equal(load_image(tmp_path / "a.png"), (img * 255 + 0.5).astype(np.uint8))
    save_png(tmp_path / "b.png", img, 16)
    back = cv2.imread(str(tmp_path / "b.png"), cv2.IMREAD_UNCHANGED)[..., ::-1]
    assert back.dtype == np.uint16 and np.array_equal(back, (img * 65535 + 0.5).astype(np.uint16))


def test_mask_png_levels(tmp_path):
    mask = np.array([[OUTSIDE_CHART, OBSERVED, HOLE]], dtype=np.uint8)
    save_mask_png(tmp_path / "m.png", mask)
    assert load_image(tmp_path / "m.png").tolist() == [[0, 255, 128]]
