import numpy as np
import pytest

from meshkit.dmc import active_cells_dense
from meshkit.errors import EmptyIsoSurface, OutOfDomain
from meshkit.isoext import (coarse_scan, constant_field, dense_extract, estimate_gradient, extract_hierarchical,
                            plane_field, quantization_bound, rbf_field, sphere_field, to_bfloat16, torus_field,
                            affine_sphere_field, tsdf_field, box_field)
from meshkit.mesh import validate_mesh
from meshkit.primitives import icosphere
from meshkit.remesh import RemeshParams, remesh_watertight

from oracles import edge_topology


def _canonical(mesh):
    order = np.lexsort(mesh.vertices.T[::-1])
    return mesh.vertices[order]


def _assert_same(a, b):
    assert a.vertex_count == b.vertex_count and a.triangle_count == b.triangle_count
    assert np.max(np.abs(_canonical(a) - _canonical(b))) <= 1e-6
    assert np.array_equal(a.triangles, b.triangles)


def _true_active(field_, n, iso=0.0):
    return {tuple(c) for c in active_cells_dense(field_.lattice((n + 1,) * 3), iso).tolist()}


def test_bfloat16_rounding_within_bound():
    rng = np.random.default_rng(0)
    v = rng.normal(size=10_000) * 10.0 ** rng.uniform(-6, 3, size=10_000)
    q = to_bfloat16(v)
    assert np.all(np.abs(q.astype(np.float64) - v) <= quantization_bound(q))
    assert to_bfloat16([1.0])[0] == 1.0


def test_sphere_scan_prunes():
    scan = coarse_scan(sphere_field(0.8), 64)
    assert scan.pruned_fraction >= 0.85
    assert scan.count == 29152  # frozen


def test_constant_field_no_active_cells():
    assert coarse_scan(constant_field(1.0), 32).count == 0


def test_constant_field_extraction_is_empty():
    with pytest.raises(EmptyIsoSurface):
        extract_hierarchical(constant_field(1.0), 16)
    with pytest.raises(EmptyIsoSurface):
        dense_extract(constant_field(1.0), 16)


def test_plane_scan_is_z_layer():
    # z = 0 is a node plane: cells 15 and 16 touch it, and the Lipschitz margin keeps
    # the next layer on each side, whose far corners sit exactly h away
    n = 32
    scan = coarse_scan(plane_field(), n)
    assert np.unique(scan.cells[:, 2]).tolist() == [14, 15, 16, 17]
    assert scan.count == n * n * 4
    assert set(map(tuple, _true_active(plane_field(), n))) <= {tuple(c) for c in scan.cells.tolist()}


def test_plane_scan_odd_resolution():
    # z = 0 runs through the middle of layer 16
    assert np.unique(coarse_scan(plane_field(), 33).cells[:, 2]).tolist() == [15, 16, 17]


def test_hierarchical_matches_dense_sphere():
    f = sphere_field(0.8)
    _assert_same(extract_hierarchical(f, 64), dense_extract(f, 64))


def test_hierarchical_matches_dense_torus():
    f = torus_field()
    a, b = extract_hierarchical(f, 48), dense_extract(f, 48)
    _assert_same(a, b)
    _, chi, closed, _ = edge_topology(a.triangles)
    assert chi == 0 and closed


def test_hierarchical_matches_dense_box_and_rbf():
    rng = np.random.default_rng(1)
    rbf = rbf_field(rng.uniform(-0.5, 0.5, (6, 3)), rng.uniform(0.5, 1.0, 6))
    for f in (box_field(), rbf):
        _assert_same(extract_hierarchical(f, 40), dense_extract(f, 40))


def test_hierarchical_matches_dense_tsdf_of_remeshed_asset():
    m, _ = remesh_watertight(icosphere(3, radius=0.8), RemeshParams(resolution=32))
    f = tsdf_field(m, truncation=0.1)
    stats = {}
    a = extract_hierarchical(f, 48, stats=stats)
    _assert_same(a, dense_extract(f, 48))
    assert stats["candidate_cells"] == 17832  # frozen


def test_dense_sphere_is_genus_zero():
    rep = validate_mesh(dense_extract(sphere_field(0.8), 32))
    assert rep.is_watertight and rep.is_manifold and rep.euler_characteristic == 2


def test_offset_surface():
    # iso = 0.5 on a sphere of radius 0.3 gives the radius-0.8 offset surface
    n = 64
    m = dense_extract(sphere_field(0.3), n, iso=0.5)
    h = 2.0 / n
    r = np.linalg.norm(m.vertices, axis=1)
    assert np.max(np.abs(r - 0.8)) <= h


def test_plane_sheet_flat():
    n = 32
    m = dense_extract(plane_field(), n)
    assert np.max(np.abs(m.vertices[:, 2])) <= 2.0 / n


def test_stats_report_counts():
    stats = {}
    extract_hierarchical(sphere_field(0.8), 32, stats=stats)
    assert stats["total_cells"] == 32**3
    assert stats["active_cells"] <= stats["candidate_cells"] < stats["total_cells"]
    assert stats["full_evaluations"] < stats["coarse_evaluations"]


def test_gradient_sphere():
    g = estimate_gradient(sphere_field(0.8), [0.5, 0.0, 0.0])
    assert np.allclose(g, [1, 0, 0], atol=1e-6)
    assert abs(np.linalg.norm(g) - 1.0) <= 1e-6


def test_gradient_plane_exact():
    g = estimate_gradient(plane_field(), [0.1, 0.2, 0.3], mode="central_difference")
    assert g.tolist() == [0.0, 0.0, 1.0]


def test_gradient_rbf_analytic_vs_fd():
    rng = np.random.default_rng(2)
    f = rbf_field(rng.uniform(-0.6, 0.6, (8, 3)), rng.normal(size=8), width=0.4)
    pts = rng.uniform(-0.8, 0.8, (100, 3))
    for p in pts:
        a = estimate_gradient(f, p)
        d = estimate_gradient(f, p, mode="central_difference")
        assert np.linalg.norm(a - d) <= 1e-3 * max(np.linalg.norm(a), 1e-3)


def test_gradient_out_of_domain():
    with pytest.raises(OutOfDomain):
        estimate_gradient(sphere_field(), [1.0, 0.0, 0.0])


def test_no_false_negatives_affine_spheres():
    rng = np.random.default_rng(3)
    n = 24
    for _ in range(50):
        a = rng.normal(size=(3, 3)) * 0.6 + np.eye(3) * 1.5
        f = affine_sphere_field(a, rng.uniform(-0.4, 0.4, 3), rng.uniform(0.3, 0.9))
        truth = _true_active(f, n)
        got = {tuple(c) for c in coarse_scan(f, n).cells.tolist()}
        assert truth <= got


@pytest.mark.parametrize("n", [64, 128])
def test_pruning_effective(n):
    f = sphere_field(0.8)
    surface = len(_true_active(f, n))
    scan = coarse_scan(f, n)
    assert scan.pruned_fraction >= 1 - 4 * surface / n**3


@pytest.mark.parametrize("f", [sphere_field(0.5), torus_field(), box_field()], ids=["sphere", "torus", "box"])
def test_eikonal_off_surface(f):
    rng = np.random.default_rng(4)
    pts = rng.uniform(-0.9, 0.9, (300, 3))
    pts = pts[np.abs(f.evaluate(pts)) > 0.05]
    if f.name == "box":
        # skip the interior medial set, where two faces are equally close
        q = np.sort(np.abs(pts) - np.array([0.6, 0.4, 0.5]), axis=1)
        pts = pts[(q[:, 2] > 0) | (q[:, 2] - q[:, 1] > 1e-3)]
    norms = np.array([np.linalg.norm(estimate_gradient(f, p, mode="central_difference")) for p in pts])
    assert len(norms) > 100
    assert np.all((norms >= 0.95) & (norms <= 1.05))
