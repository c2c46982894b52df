import numpy as np
import pytest

from meshkit.bvh import TriangleBVH
from meshkit.errors import DomainTooSmall, EmptyMesh
from meshkit.mesh import TriMesh
from meshkit.primitives import cube, icosphere, open_box, torus
from meshkit.sdf import (MeshSdf, TsdfSpec, closest_point, grid_points, read_sdfgrid, sample_tsdf_grid,
                         signed_distance, write_sdfgrid)

from oracles import closest_point_linear, winding_lhuilier


def test_cube_closest_and_sign():
    r = closest_point(cube(), [2.0, 0.0, 0.0])
    assert r.distance == 1.0 and np.allclose(r.closest_point, [1, 0, 0])
    assert signed_distance(cube(), [0, 0, 0]).distance == -1.0
    assert signed_distance(cube(), [2, 0, 0]).distance == 1.0


def test_vertex_query_is_zero():
    assert closest_point(cube(), [1.0, 1.0, 1.0]).distance == 0.0


def test_icosphere_origin():
    d = signed_distance(icosphere(4), [0, 0, 0]).distance
    assert -1.0 <= d <= -0.995


def test_empty_mesh():
    with pytest.raises(EmptyMesh):
        MeshSdf(TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)))


def test_distance_matches_closest_point_norm():
    rng = np.random.default_rng(2)
    m = torus()
    q = rng.uniform(-1.2, 1.2, size=(500, 3))
    d, p, _ = MeshSdf.of(m).unsigned(q)
    assert np.max(np.abs(d - np.linalg.norm(q - p, axis=1))) <= 1e-9


def test_bvh_against_independent_oracle():
    rng = np.random.default_rng(3)
    m = icosphere(3)
    bvh = TriangleBVH(m.vertices, m.triangles)
    q = rng.normal(size=(200, 3)) * 0.8
    d, p, t = bvh.closest(q)
    a, b, c = (m.vertices[m.triangles[:, i]] for i in range(3))
    for i in range(len(q)):
        od, op, _ = closest_point_linear(q[i], a, b, c)
        assert abs(d[i] - od) <= 1e-9
        assert np.linalg.norm(p[i] - op) <= 1e-9 or abs(d[i] - od) <= 1e-12


def test_winding_matches_lhuilier():
    rng = np.random.default_rng(4)
    m = open_box()
    a, b, c = (m.vertices[m.triangles[:, i]] for i in range(3))
    q = rng.uniform(-1.5, 1.5, size=(60, 3))
    w = MeshSdf.of(m).winding(q, exact=True)
    ref = np.array([winding_lhuilier(x, a, b, c) for x in q])
    assert np.max(np.abs(w - ref)) < 1e-9


def test_winding_closed_is_binary():
    rng = np.random.default_rng(5)
    m = icosphere(3)
    q = rng.uniform(-1.5, 1.5, size=(3000, 3))
    d, _, _ = MeshSdf.of(m).unsigned(q)
    q = q[d > 1e-3]
    w = MeshSdf.of(m).winding(q, exact=True)
    assert np.all(np.minimum(np.abs(w), np.abs(w - 1)) < 1e-6)


def test_fast_winding_sign_agrees_with_exact():
    rng = np.random.default_rng(6)
    m = torus()
    q = rng.uniform(-1.2, 1.2, size=(4000, 3))
    s = MeshSdf.of(m)
    assert np.array_equal(s.winding(q) >= 0.5, s.winding(q, exact=True) >= 0.5)


def test_tsdf_clamp_examples():
    m = cube(0.5)
    s = MeshSdf.of(m)
    assert s.tsdf([[0.9, 0.0, 0.0]], 0.25)[0] == 0.25
    assert abs(s.tsdf([[0.5, 0.1, 0.2]], 0.25)[0]) <= 1e-9


def test_tsdf_grid_sphere_vs_analytic():
    m = icosphere(4, radius=0.8)
    g = sample_tsdf_grid(m, 33, TsdfSpec(truncation=0.2), domain=((-1.0,) * 3, (1.0,) * 3))
    pts = g.node_positions()
    ref = np.clip(np.linalg.norm(pts, axis=-1) - 0.8, -0.2, 0.2)
    diag = np.sqrt(3) * g.h
    assert np.max(np.abs(g.values - ref)) <= 1.5 * diag


def test_tsdf_grid_far_nodes_exact_tau():
    g = sample_tsdf_grid(cube(0.5), 21, TsdfSpec(truncation=0.2))
    far = np.abs(g.values) >= 0.2
    assert set(np.unique(np.abs(g.values[far]))) == {0.2}


def test_tsdf_grid_equals_pointwise():
    m = torus()
    s = MeshSdf.of(m)
    dom = ((-1.2,) * 3, (1.2,) * 3)
    grid = s.tsdf_grid(dom, (17, 17, 17), 0.1)
    pts = grid_points(dom, (17, 17, 17))
    assert np.array_equal(np.sign(grid.ravel()), np.sign(s.tsdf(pts, 0.1)))


def test_domain_too_small():
    with pytest.raises(DomainTooSmall):
        sample_tsdf_grid(cube(), 8, TsdfSpec(0.1), domain=((-1.05,) * 3, (1.05,) * 3))


def test_cube_grid_axis_permutation_exact():
    g = sample_tsdf_grid(cube(0.6), 25, TsdfSpec(0.15), domain=((-1.0,) * 3, (1.0,) * 3))
    v = g.values
    for perm in [(1, 0, 2), (0, 2, 1), (2, 1, 0), (1, 2, 0)]:
        assert np.array_equal(v, np.transpose(v, perm))


def test_floodfill_sign_method_agrees_on_closed_mesh():
    m = icosphere(3, radius=0.8)
    dom = ((-1.0,) * 3, (1.0,) * 3)
    a = sample_tsdf_grid(m, 24, TsdfSpec(0.2, "winding"), dom)
    b = sample_tsdf_grid(m, 24, TsdfSpec(0.2, "floodfill_grid"), dom)
    far = np.abs(a.values) > 2 * a.h
    assert np.array_equal(np.sign(a.values[far]), np.sign(b.values[far]))


def test_sdfgrid_file_roundtrip(tmp_path):
    g = sample_tsdf_grid(cube(0.5), 9, TsdfSpec(0.25))
    p = tmp_path / "g.sdfgrid"
    write_sdfgrid(p, g)
    back = read_sdfgrid(p)
    assert back.dims == g.dims
    assert np.array_equal(back.values, g.values.astype(np.float32).astype(np.float64))
    raw = p.read_bytes()
    header_end = raw.index(b"\n") + 1
    assert header_end % 16 == 0
    # x-fastest: the second float is node (1, 0, 0)
    second = np.frombuffer(raw, "<f4", count=2, offset=header_end)[1]
    assert second == np.float32(g.values[1, 0, 0])


def test_lipschitz_pairs():
    rng = np.random.default_rng(7)
    s = MeshSdf.of(torus())
    p = rng.uniform(-1.3, 1.3, size=(10_000, 3))
    q = p + rng.normal(size=p.shape) * 0.05
    lhs = np.abs(s.signed(p) - s.signed(q))
    assert np.all(lhs <= np.linalg.norm(p - q, axis=1) + 1e-7)


def test_eikonal_away_from_edges():
    s = MeshSdf.of(icosphere(3))
    rng = np.random.default_rng(8)
    dirs = rng.normal(size=(200, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    p = dirs * rng.uniform(1.2, 1.5, size=(200, 1))
    h = 1e-4
    grad = np.stack([(s.signed(p + h * e) - s.signed(p - h * e)) / (2 * h) for e in np.eye(3)], axis=1)
    n = np.linalg.norm(grad, axis=1)
    assert np.all((n > 0.99) & (n < 1.01))
