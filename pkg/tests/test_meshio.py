import json
import struct

import numpy as np
import pygltflib
import pytest

from meshkit.errors import DegenerateBounds, IndexOutOfRange, MalformedFile, MeshkitError, UnsupportedFormat
from meshkit.mesh import TriMesh, normalize_mesh, validate_mesh
from meshkit.meshio import decode_glb, decode_obj, encode_glb, encode_obj, glb_layout_problems, load_mesh, write_mesh
from meshkit.primitives import box, cube, cubes_sharing_edge, icosphere, quantize_f32, split_cube, torus

from oracles import edge_topology


def test_minimal_obj():
    m = decode_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3")
    assert m.vertex_count == 3 and m.triangle_count == 1


def test_quad_fan():
    m = decode_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    assert m.triangles.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_crlf_negative_indices_and_slashes():
    text = "v 0 0 0\r\nv 1 0 0\r\nv 0 1 0\r\nvt 0 0\r\nvt 1 0\r\nvt 0 1\r\nf -3/1 -2/2 -1/3\r\n"
    m = decode_obj(text)
    assert m.triangles.tolist() == [[0, 1, 2]]
    assert m.uvs is not None and m.uvs.shape == (1, 3, 2)


def test_obj_index_out_of_range_reports_line():
    with pytest.raises(IndexOutOfRange) as exc:
        decode_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n")
    assert exc.value.location == 4


def test_obj_bad_number_is_malformed():
    with pytest.raises(MalformedFile):
        decode_obj("v 0 zero 0\n")


def test_obj_one_f_line_per_triangle(tmp_path):
    tri = TriMesh(np.eye(3), np.array([[0, 1, 2]]))
    p = tmp_path / "t.obj"
    write_mesh(tri, p)
    lines = p.read_text().splitlines()
    assert sum(1 for ln in lines if ln.startswith("f ")) == 1


def test_glb_header_magic_and_version(tmp_path):
    p = tmp_path / "c.glb"
    write_mesh(cube(), p)
    data = p.read_bytes()
    assert data[:4] == b"glTF"
    assert struct.unpack_from("<I", data, 4)[0] == 2
    assert struct.unpack_from("<I", data, 8)[0] == len(data)


def test_split_cube_glb_counts(tmp_path):
    p = tmp_path / "c24.glb"
    write_mesh(split_cube(1.0), p)
    m = load_mesh(p)
    assert (m.vertex_count, m.triangle_count) == (24, 12)


def test_glb_readable_by_reference_parser(tmp_path):
    mesh = quantize_f32(icosphere(2))
    p = tmp_path / "s.glb"
    write_mesh(mesh, p)
    g = pygltflib.GLTF2().load(str(p))
    blob = g.binary_blob()
    prim = g.meshes[0].primitives[0]

    def read(acc_idx, dtype, width):
        acc = g.accessors[acc_idx]
        view = g.bufferViews[acc.bufferView]
        start = (view.byteOffset or 0) + (acc.byteOffset or 0)
        n = acc.count * width
        return np.frombuffer(blob, dtype=dtype, count=n, offset=start).reshape(acc.count, width) if width > 1 else \
            np.frombuffer(blob, dtype=dtype, count=n, offset=start)

    pos = read(prim.attributes.POSITION, "<f4", 3)
    idx_acc = g.accessors[prim.indices]
    idx_dtype = {5123: "<u2", 5125: "<u4"}[idx_acc.componentType]
    idx = read(prim.indices, idx_dtype, 1).reshape(-1, 3)
    assert np.array_equal(pos.astype(np.float64)[idx], mesh.vertices[mesh.triangles])
    acc = g.accessors[prim.attributes.POSITION]
    assert np.allclose(acc.min, pos.min(axis=0)) and np.allclose(acc.max, pos.max(axis=0))


def test_glb_roundtrip_with_uvs():
    m = quantize_f32(split_cube(0.5))
    back = decode_glb(encode_glb(m))
    assert np.array_equal(back.vertices[back.triangles], m.vertices[m.triangles])
    assert np.array_equal(back.uvs, m.uvs.astype(np.float32).astype(np.float64))


def test_obj_roundtrip_bit_exact():
    m = torus()
    back = decode_obj(encode_obj(m))
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.triangles, m.triangles)


def test_glb_layout_checker_flags_bad_alignment():
    data = bytearray(encode_glb(cube()))
    assert glb_layout_problems(bytes(data)) == []
    jlen = struct.unpack_from("<I", data, 12)[0]
    struct.pack_into("<I", data, 12, jlen - 1)
    assert glb_layout_problems(bytes(data))


def test_truncated_glb_raises_malformed():
    data = encode_glb(cube())
    for cut in (3, 11, 12, 19, 20, len(data) // 2, len(data) - 1):
        with pytest.raises(MeshkitError):
            decode_glb(data[:cut])


def test_unknown_extension_rejected(tmp_path):
    p = tmp_path / "x.ply"
    p.write_bytes(b"ply\nformat ascii 1.0\n")
    with pytest.raises(UnsupportedFormat):
        load_mesh(p)


def test_detect_by_magic(tmp_path):
    p = tmp_path / "noext"
    p.write_bytes(encode_glb(cube()))
    assert load_mesh(p).triangle_count == 12


# -- validate / normalize ----------------------------------------------------------------


def test_cube_report():
    rep = validate_mesh(cube())
    assert rep.is_watertight and rep.is_manifold and rep.euler_characteristic == 2


def test_cube_missing_face():
    m = cube()
    rep = validate_mesh(m.replace(triangles=m.triangles[2:]))
    assert not rep.is_watertight and rep.boundary_edge_count > 0


def test_shared_edge_is_nonmanifold():
    assert not validate_mesh(cubes_sharing_edge()).is_manifold


def test_torus_euler_matches_oracle():
    m = torus()
    _, chi, closed, _ = edge_topology(m.triangles)
    rep = validate_mesh(m)
    assert rep.euler_characteristic == chi == 0 and rep.is_watertight == closed


def test_split_cube_welds_for_topology():
    # 24 authored vertices, welded inside validation only
    rep = validate_mesh(split_cube(1.0))
    assert rep.is_watertight and rep.euler_characteristic == 2


def test_normalize_cube_0_2():
    m, tf = normalize_mesh(box((0, 0, 0), (2, 2, 2)))
    lo, hi = m.bounds()
    assert np.array_equal(lo, [-1, -1, -1]) and np.array_equal(hi, [1, 1, 1])
    assert tf.scale == 1.0 and tf.translation == (-1.0, -1.0, -1.0)


def test_normalize_box_aspect():
    m, _ = normalize_mesh(box((0, 0, 0), (4, 2, 1)))
    lo, hi = m.bounds()
    assert np.allclose(lo, [-1, -0.5, -0.25]) and np.allclose(hi, [1, 0.5, 0.25])


def test_normalize_idempotent_sphere():
    m, _ = normalize_mesh(icosphere(3))
    _, tf = normalize_mesh(m)
    assert abs(tf.scale - 1.0) < 1e-12 and np.allclose(tf.translation, 0.0, atol=1e-12)


def test_normalize_degenerate():
    with pytest.raises(DegenerateBounds):
        normalize_mesh(TriMesh(np.zeros((3, 3)), np.zeros((0, 3), dtype=np.int64)))


def test_transform_maps_input_to_output():
    src = box((0.5, -2, 3), (1.5, 0, 3.5))
    out, tf = normalize_mesh(src)
    assert np.allclose(tf.apply(src.vertices), out.vertices, atol=1e-12)


def test_validate_json_serializable():
    json.dumps(validate_mesh(cube()).to_dict())
