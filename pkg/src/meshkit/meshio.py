"""OBJ and GLB (glTF 2.0 binary) reading and writing.

UV convention: texture-space v grows downward (image row order), as in glTF.
OBJ stores v upward, so it is flipped on read and write.
"""

from __future__ import annotations

import json
import logging
import os
import struct
from pathlib import Path

import numpy as np

from .errors import IndexOutOfRange, InvalidMesh, IoError, MalformedFile, UnsupportedFormat
from .mesh import TriMesh

log = logging.getLogger(__name__)

GLB_MAGIC = b"glTF"
GLB_VERSION = 2
CHUNK_JSON = 0x4E4F534A
CHUNK_BIN = 0x004E4942

_COMPONENTS = {"SCALAR": 1, "VEC2": 2, "VEC3": 3, "VEC4": 4, "MAT4": 16}
_CTYPES = {
    5120: np.dtype("<i1"),
    5121: np.dtype("<u1"),
    5122: np.dtype("<i2"),
    5123: np.dtype("<u2"),
    5125: np.dtype("<u4"),
    5126: np.dtype("<f4"),
}


def detect_format(path, data: bytes | None = None) -> str:
    ext = Path(path).suffix.lower()
    if ext in (".obj", ".glb"):
        return ext[1:]
    if data is None:
        with open(path, "rb") as fh:
            data = fh.read(64)
    if data[:4] == GLB_MAGIC:
        return "glb"
    head = data[:64].lstrip()
    if head[:2] in (b"v ", b"# ", b"o ", b"g ", b"vn", b"vt", b"mt") or head[:1] == b"#":
        return "obj"
    raise UnsupportedFormat(f"cannot determine mesh format of {path}")


def load_mesh(path, format_hint: str | None = None) -> TriMesh:
    """Read an OBJ or GLB file into a single merged TriMesh."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    fmt = format_hint or detect_format(path, data)
    name = Path(path).stem
    if fmt == "obj":
        return decode_obj(data, name=name)
    if fmt == "glb":
        return decode_glb(data, name=name)
    raise UnsupportedFormat(f"unsupported format {fmt!r}")


def write_mesh(mesh: TriMesh, path, format: str | None = None) -> None:
    fmt = (format or Path(path).suffix.lower().lstrip(".")).lower()
    if not isinstance(mesh, TriMesh):
        raise InvalidMesh("write_mesh expects a TriMesh")
    if fmt == "obj":
        payload = encode_obj(mesh).encode("ascii")
    elif fmt == "glb":
        payload = encode_glb(mesh)
    else:
        raise UnsupportedFormat(f"unsupported format {fmt!r}")
    try:
        with open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise IoError(str(exc)) from exc


# -- OBJ ---------------------------------------------------------------------


def _obj_index(tok: str, count: int, lineno: int) -> int:
    try:
        i = int(tok)
    except ValueError:
        raise MalformedFile(f"bad index {tok!r}", lineno, "line") from None
    if i > 0:
        i -= 1
    elif i < 0:
        i += count
    else:
        raise IndexOutOfRange("OBJ indices are 1-based", lineno, "line")
    if not 0 <= i < count:
        raise IndexOutOfRange(f"index {tok} out of range", lineno, "line")
    return i


def _floats(parts, n, lineno, keyword):
    if len(parts) < n:
        raise MalformedFile(f"'{keyword}' needs {n} values", lineno, "line")
    try:
        vals = [float(x) for x in parts[:n]]
    except ValueError:
        raise MalformedFile(f"bad number in '{keyword}' record", lineno, "line") from None
    if not all(np.isfinite(vals)):
        raise MalformedFile(f"non-finite value in '{keyword}' record", lineno, "line")
    return vals


def _is_convex(poly: np.ndarray) -> bool:
    n = len(poly)
    normal = np.zeros(3)
    for i in range(n):
        normal += np.cross(poly[i], poly[(i + 1) % n])
    for i in range(n):
        a, b, c = poly[i], poly[(i + 1) % n], poly[(i + 2) % n]
        if np.dot(np.cross(b - a, c - b), normal) < -1e-12:
            return False
    return True


def decode_obj(data: bytes | str, name: str = "mesh") -> TriMesh:
    text = data.decode("utf-8", errors="replace") if isinstance(data, bytes) else data
    positions, texcoords, normals = [], [], []
    tris, tri_vt, tri_vn = [], [], []
    nonconvex = dropped = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key, rest = parts[0], parts[1:]
        if key == "v":
            positions.append(_floats(rest, 3, lineno, "v"))
        elif key == "vt":
            uv = _floats(rest, 2, lineno, "vt")
            texcoords.append((uv[0], 1.0 - uv[1]))
        elif key == "vn":
            normals.append(_floats(rest, 3, lineno, "vn"))
        elif key == "f":
            if len(rest) < 3:
                raise MalformedFile("face needs at least 3 vertices", lineno, "line")
            vi, ti, ni = [], [], []
            for tok in rest:
                fields = tok.split("/")
                if len(fields) > 3 or fields[0] == "":
                    raise MalformedFile(f"bad face vertex {tok!r}", lineno, "line")
                vi.append(_obj_index(fields[0], len(positions), lineno))
                ti.append(_obj_index(fields[1], len(texcoords), lineno) if len(fields) > 1 and fields[1] else -1)
                ni.append(_obj_index(fields[2], len(normals), lineno) if len(fields) > 2 and fields[2] else -1)
            if len(vi) > 3 and not _is_convex(np.asarray([positions[i] for i in vi])):
                nonconvex += 1
            for k in range(1, len(vi) - 1):
                tri = (vi[0], vi[k], vi[k + 1])
                if len(set(tri)) < 3:
                    dropped += 1
                    continue
                tris.append(tri)
                tri_vt.append((ti[0], ti[k], ti[k + 1]))
                tri_vn.append((ni[0], ni[k], ni[k + 1]))
        # materials, groups, smoothing, lines and points are ignored
    if nonconvex:
        log.warning("%s: %d non-convex polygon(s) fan-triangulated; triangles may fold", name, nonconvex)
    if dropped:
        log.warning("%s: dropped %d degenerate triangle(s)", name, dropped)

    v = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    t = np.asarray(tris, dtype=np.int64).reshape(-1, 3)
    uvs = None
    tvt = np.asarray(tri_vt, dtype=np.int64).reshape(-1, 3)
    if len(t) and texcoords and np.all(tvt >= 0):
        uvs = np.asarray(texcoords, dtype=np.float64)[tvt]
    vertex_normals = None
    tvn = np.asarray(tri_vn, dtype=np.int64).reshape(-1, 3)
    if len(t) and normals and np.all(tvn >= 0):
        nrm = np.asarray(normals, dtype=np.float64)
        assigned = np.full((len(v), 3), np.nan)
        assigned[t.ravel()] = nrm[tvn.ravel()]
        per_corner = nrm[tvn.ravel()]
        consistent = np.all(assigned[t.ravel()] == per_corner)
        ln = np.linalg.norm(assigned, axis=1)
        if consistent and not np.any(np.isnan(assigned)) and np.all(np.abs(ln - 1) <= 1e-4):
            vertex_normals = assigned
        else:
            log.info("%s: OBJ normals are not per-vertex consistent; dropped", name)
    try:
        return TriMesh(v, t, normals=vertex_normals, uvs=uvs, name=name)
    except InvalidMesh as exc:
        raise MalformedFile(str(exc)) from exc


def _fmt(x: float) -> str:
    # shortest decimal that round-trips the float64 exactly
    return repr(float(x))


def encode_obj(mesh: TriMesh) -> str:
    out = ["# meshkit OBJ", f"o {mesh.name}"]
    out += [f"v {_fmt(a)} {_fmt(b)} {_fmt(c)}" for a, b, c in mesh.vertices]
    if mesh.normals is not None:
        out += [f"vn {_fmt(a)} {_fmt(b)} {_fmt(c)}" for a, b, c in mesh.normals]
    t = mesh.triangles + 1
    if mesh.uvs is not None:
        flat = mesh.uvs.reshape(-1, 2)
        uniq, inv = np.unique(flat, axis=0, return_inverse=True)
        out += [f"vt {_fmt(u)} {_fmt(1.0 - v)}" for u, v in uniq]
        vt = inv.reshape(-1, 3) + 1
        if mesh.normals is not None:
            out += [f"f {a}/{ta}/{a} {b}/{tb}/{b} {c}/{tc}/{c}" for (a, b, c), (ta, tb, tc) in zip(t, vt)]
        else:
            out += [f"f {a}/{ta} {b}/{tb} {c}/{tc}" for (a, b, c), (ta, tb, tc) in zip(t, vt)]
    elif mesh.normals is not None:
        out += [f"f {a}//{a} {b}//{b} {c}//{c}" for a, b, c in t]
    else:
        out += [f"f {a} {b} {c}" for a, b, c in t]
    return "\n".join(out) + "\n"


# -- GLB ---------------------------------------------------------------------


def _pad4(b: bytes, fill: bytes) -> bytes:
    return b + fill * ((4 - len(b) % 4) % 4)


def split_glb(data: bytes) -> tuple[dict, bytes, int]:
    """Validate the GLB container and return (json, bin chunk, bin chunk offset)."""
    if len(data) < 12:
        raise MalformedFile("truncated GLB header", len(data))
    magic, version, length = struct.unpack_from("<4sII", data, 0)
    if magic != GLB_MAGIC:
        raise MalformedFile("bad GLB magic", 0)
    if version != GLB_VERSION:
        raise UnsupportedFormat(f"GLB version {version} is not supported")
    if length > len(data):
        raise MalformedFile(f"GLB declares {length} bytes but only {len(data)} present", len(data))
    offset = 12
    doc = None
    binary, bin_offset = b"", -1
    while offset < length:
        if offset + 8 > length:
            raise MalformedFile("truncated chunk header", offset)
        clen, ctype = struct.unpack_from("<II", data, offset)
        start = offset + 8
        if start + clen > length:
            raise MalformedFile("chunk exceeds file length", offset)
        if clen % 4:
            raise MalformedFile("chunk length not 4-byte aligned", offset)
        chunk = data[start:start + clen]
        if ctype == CHUNK_JSON and doc is None:
            try:
                doc = json.loads(chunk.decode("utf-8"))
            except (UnicodeDecodeError, ValueError) as exc:
                raise MalformedFile(f"invalid JSON chunk: {exc}", start) from None
            if not isinstance(doc, dict):
                raise MalformedFile("JSON chunk is not an object", start)
        elif ctype == CHUNK_BIN and bin_offset < 0:
            binary, bin_offset = chunk, start
        offset = start + clen
    if doc is None:
        raise MalformedFile("missing JSON chunk", 12)
    return doc, binary, bin_offset


def _get(seq, idx, what, at):
    if not isinstance(seq, list) or not isinstance(idx, int) or not 0 <= idx < len(seq) or not isinstance(seq[idx], dict):
        raise MalformedFile(f"invalid {what} reference {idx!r}", at)
    return seq[idx]


def _read_accessor(doc, binary, bin_offset, index):
    acc = _get(doc.get("accessors"), index, "accessor", bin_offset)
    if "sparse" in acc:
        raise UnsupportedFormat("sparse accessors are not supported")
    ctype = _CTYPES.get(acc.get("componentType"))
    ncomp = _COMPONENTS.get(acc.get("type"))
    count = acc.get("count")
    if ctype is None or ncomp is None or not isinstance(count, int) or count < 0:
        raise MalformedFile(f"accessor {index} has invalid layout", bin_offset)
    if "bufferView" not in acc:
        return np.zeros((count, ncomp), dtype=ctype)
    view = _get(doc.get("bufferViews"), acc["bufferView"], "bufferView", bin_offset)
    buf = _get(doc.get("buffers"), view.get("buffer", 0), "buffer", bin_offset)
    if "uri" in buf:
        raise UnsupportedFormat("external or embedded buffer URIs are not supported")
    vo, ao = view.get("byteOffset", 0), acc.get("byteOffset", 0)
    vlen = view.get("byteLength")
    stride = view.get("byteStride") or ctype.itemsize * ncomp
    if not all(isinstance(x, int) and x >= 0 for x in (vo, ao, vlen, stride)):
        raise MalformedFile(f"bufferView for accessor {index} is invalid", bin_offset)
    elem = ctype.itemsize * ncomp
    if stride < elem:
        raise MalformedFile("byteStride smaller than element size", bin_offset + vo)
    need = ao + (stride * (count - 1) + elem if count else 0)
    if need > vlen or vo + vlen > len(binary):
        raise MalformedFile(f"accessor {index} reads past its buffer", bin_offset + vo)
    if count == 0:
        return np.zeros((0, ncomp), dtype=ctype)
    raw = np.frombuffer(binary, dtype=np.uint8, count=need - ao, offset=vo + ao)
    rows = np.lib.stride_tricks.as_strided(raw, shape=(count, elem), strides=(stride, 1))
    return np.ascontiguousarray(rows).view(ctype).reshape(count, ncomp)


def _node_matrix(node) -> np.ndarray:
    if "matrix" in node:
        m = np.asarray(node["matrix"], dtype=np.float64)
        if m.shape != (16,):
            raise MalformedFile("node matrix must have 16 entries")
        return m.reshape(4, 4).T
    t = np.asarray(node.get("translation", [0, 0, 0]), dtype=np.float64)
    q = np.asarray(node.get("rotation", [0, 0, 0, 1]), dtype=np.float64)
    s = np.asarray(node.get("scale", [1, 1, 1]), dtype=np.float64)
    if t.shape != (3,) or q.shape != (4,) or s.shape != (3,):
        raise MalformedFile("node TRS has wrong shape")
    x, y, z, w = q
    r = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )
    m = np.eye(4)
    m[:3, :3] = r * s
    m[:3, 3] = t
    return m


def decode_glb(data: bytes, name: str = "mesh") -> TriMesh:
    doc, binary, bin_offset = split_glb(data)
    meshes = doc.get("meshes")
    if not isinstance(meshes, list):
        raise MalformedFile("GLB has no meshes array", 12)

    # (mesh index, world matrix) instances from the default scene, else every mesh once
    instances = []
    nodes = doc.get("nodes") or []
    scenes = doc.get("scenes")
    if isinstance(scenes, list) and scenes:
        scene = _get(scenes, doc.get("scene", 0), "scene", 12)
        stack = [(n, np.eye(4), 0) for n in scene.get("nodes", [])]
        while stack:
            ni, parent, depth = stack.pop(0)
            if depth > 64:
                raise MalformedFile("node hierarchy too deep or cyclic", 12)
            node = _get(nodes, ni, "node", 12)
            world = parent @ _node_matrix(node)
            if "mesh" in node:
                instances.append((node["mesh"], world))
            stack.extend((c, world, depth + 1) for c in node.get("children", []))
    else:
        instances = [(i, np.eye(4)) for i in range(len(meshes))]

    verts, tris, norms, uvs = [], [], [], []
    have_normals = have_uvs = True
    offset = 0
    for mi, world in instances:
        m = _get(meshes, mi, "mesh", 12)
        for prim in m.get("primitives", []):
            if not isinstance(prim, dict):
                raise MalformedFile("primitive must be an object", 12)
            if prim.get("mode", 4) != 4:
                log.warning("%s: skipping non-triangle primitive (mode %s)", name, prim.get("mode"))
                continue
            attrs = prim.get("attributes") or {}
            if "POSITION" not in attrs:
                raise MalformedFile("primitive without POSITION", 12)
            pos = _read_accessor(doc, binary, bin_offset, attrs["POSITION"])
            if pos.shape[1] != 3 or pos.dtype != np.float32:
                raise MalformedFile("POSITION must be float32 VEC3", bin_offset)
            n = len(pos)
            if "indices" in prim:
                idx = _read_accessor(doc, binary, bin_offset, prim["indices"]).astype(np.int64).ravel()
            else:
                idx = np.arange(n, dtype=np.int64)
            if len(idx) % 3:
                raise MalformedFile("index count is not a multiple of 3", bin_offset)
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise IndexOutOfRange("triangle index exceeds vertex count", bin_offset)
            p = pos.astype(np.float64)
            identity = np.array_equal(world, np.eye(4))
            if not identity:
                p = p @ world[:3, :3].T + world[:3, 3]
            verts.append(p)
            t = idx.reshape(-1, 3)
            tris.append(t + offset)
            if "NORMAL" in attrs:
                nr = _read_accessor(doc, binary, bin_offset, attrs["NORMAL"]).astype(np.float64)
                if nr.shape != (n, 3):
                    raise MalformedFile("NORMAL accessor has wrong shape", bin_offset)
                if not identity:
                    nr = nr @ np.linalg.inv(world[:3, :3])
                    nr /= np.maximum(np.linalg.norm(nr, axis=1, keepdims=True), 1e-300)
                norms.append(nr)
            else:
                have_normals = False
            if "TEXCOORD_0" in attrs:
                uv = _read_accessor(doc, binary, bin_offset, attrs["TEXCOORD_0"]).astype(np.float64)
                if uv.shape != (n, 2):
                    raise MalformedFile("TEXCOORD_0 accessor has wrong shape", bin_offset)
                uvs.append(uv[t])
            else:
                have_uvs = False
            offset += n
    if not verts:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), name=name)
    v = np.concatenate(verts)
    t = np.concatenate(tris)
    bad = (t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])
    uv_all = np.concatenate(uvs) if have_uvs else None
    if bad.any():
        log.warning("%s: dropped %d degenerate triangle(s)", name, int(bad.sum()))
        t = t[~bad]
        if uv_all is not None:
            uv_all = uv_all[~bad]
    normals = np.concatenate(norms) if have_normals else None
    if normals is not None and len(normals) and np.max(np.abs(np.linalg.norm(normals, axis=1) - 1)) > 1e-4:
        log.info("%s: non-unit normals dropped", name)
        normals = None
    try:
        return TriMesh(v, t, normals=normals, uvs=uv_all, name=name)
    except InvalidMesh as exc:
        raise MalformedFile(str(exc)) from exc


def _vertex_uvs(mesh: TriMesh):
    """Per-vertex UV layout for glTF, splitting vertices whose corners disagree."""
    t = mesh.triangles
    corner_uv = mesh.uvs.reshape(-1, 2)
    corner_v = t.ravel()
    key = np.concatenate([corner_v[:, None].astype(np.float64), corner_uv], axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.ravel()
    if len(uniq) == len(np.unique(corner_v)) and len(np.unique(corner_v)) == mesh.vertex_count:
        uv = np.zeros((mesh.vertex_count, 2))
        uv[corner_v] = corner_uv
        return np.arange(mesh.vertex_count), t, uv
    src = uniq[:, 0].astype(np.int64)
    return src, inv.reshape(-1, 3), uniq[:, 1:]


def encode_glb(mesh: TriMesh) -> bytes:
    src = np.arange(mesh.vertex_count)
    tris = mesh.triangles
    uv = None
    if mesh.uvs is not None:
        src, tris, uv = _vertex_uvs(mesh)
    pos = mesh.vertices[src].astype("<f4")
    blobs, views, accessors = [], [], []
    offset = 0

    def add(arr, target, acc):
        nonlocal offset
        raw = np.ascontiguousarray(arr).tobytes()
        views.append({"buffer": 0, "byteOffset": offset, "byteLength": len(raw), "target": target})
        blobs.append(_pad4(raw, b"\x00"))
        offset += len(blobs[-1])
        acc["bufferView"] = len(views) - 1
        accessors.append(acc)
        return len(accessors) - 1

    attributes = {}
    if len(pos):
        bounds = {"min": [float(x) for x in pos.min(0)], "max": [float(x) for x in pos.max(0)]}
    else:
        bounds = {"min": [0.0] * 3, "max": [0.0] * 3}
    attributes["POSITION"] = add(pos, 34962, {"componentType": 5126, "count": len(pos), "type": "VEC3", **bounds})
    if mesh.normals is not None:
        attributes["NORMAL"] = add(mesh.normals[src].astype("<f4"), 34962, {"componentType": 5126, "count": len(pos), "type": "VEC3"})
    if uv is not None:
        attributes["TEXCOORD_0"] = add(uv.astype("<f4"), 34962, {"componentType": 5126, "count": len(pos), "type": "VEC2"})
    if len(pos) < 65536:
        idx, ctype = tris.astype("<u2").ravel(), 5123
    else:
        idx, ctype = tris.astype("<u4").ravel(), 5125
    indices = add(idx, 34963, {"componentType": ctype, "count": int(idx.size), "type": "SCALAR"})

    doc = {
        "asset": {"version": "2.0", "generator": "meshkit"},
        "scene": 0,
        "scenes": [{"nodes": [0]}],
        "nodes": [{"mesh": 0, "name": mesh.name}],
        "meshes": [{"name": mesh.name, "primitives": [{"attributes": attributes, "indices": indices, "material": 0, "mode": 4}]}],
        "materials": [{"name": "default", "pbrMetallicRoughness": {"baseColorFactor": [1.0, 1.0, 1.0, 1.0], "metallicFactor": 0.0, "roughnessFactor": 1.0}}],
        "accessors": accessors,
        "bufferViews": views,
        "buffers": [{"byteLength": offset}],
    }
    js = _pad4(json.dumps(doc, separators=(",", ":")).encode("utf-8"), b" ")
    binary = b"".join(blobs)
    total = 12 + 8 + len(js) + 8 + len(binary)
    return b"".join(
        [
            struct.pack("<4sII", GLB_MAGIC, GLB_VERSION, total),
            struct.pack("<II", len(js), CHUNK_JSON),
            js,
            struct.pack("<II", len(binary), CHUNK_BIN),
            binary,
        ]
    )


def glb_layout_problems(data: bytes) -> list[str]:
    """Container-level checks against the glTF 2.0 binary layout; empty list when valid."""
    problems = []
    if len(data) < 12 or data[:4] != GLB_MAGIC:
        return ["missing glTF magic"]
    _, version, length = struct.unpack_from("<4sII", data, 0)
    if version != 2:
        problems.append(f"version {version} != 2")
    if length != len(data):
        problems.append("header length does not match file size")
    if length % 4:
        problems.append("file length not 4-byte aligned")
    offset, types = 12, []
    while offset + 8 <= min(length, len(data)):
        clen, ctype = struct.unpack_from("<II", data, offset)
        if clen % 4:
            problems.append(f"chunk at {offset} not 4-byte aligned")
        types.append(ctype)
        offset += 8 + clen
    if offset != length:
        problems.append("chunks do not tile the file")
    if not types or types[0] != CHUNK_JSON:
        problems.append("first chunk is not JSON")
    if len(types) > 1 and types[1] != CHUNK_BIN:
        problems.append("second chunk is not BIN")
    return problems


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
