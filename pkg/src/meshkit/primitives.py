"""Procedural fixture meshes: closed primitives, open and pathological shapes."""

from __future__ import annotations

import numpy as np

from .mesh import TriMesh, merge_meshes

_BOX_TRIS = np.array(
    [
        [0, 2, 1], [0, 3, 2],  # -z
        [4, 5, 6], [4, 6, 7],  # +z
        [0, 1, 5], [0, 5, 4],  # -y
        [2, 3, 7], [2, 7, 6],  # +y
        [1, 2, 6], [1, 6, 5],  # +x
        [0, 4, 7], [0, 7, 3],  # -x
    ]
)


def box(lo=(-1.0, -1.0, -1.0), hi=(1.0, 1.0, 1.0), name="box") -> TriMesh:
    """Closed axis-aligned box, 8 shared vertices, outward winding."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    v = np.array(
        [
            [lo[0], lo[1], lo[2]], [hi[0], lo[1], lo[2]], [hi[0], hi[1], lo[2]], [lo[0], hi[1], lo[2]],
            [lo[0], lo[1], hi[2]], [hi[0], lo[1], hi[2]], [hi[0], hi[1], hi[2]], [lo[0], hi[1], hi[2]],
        ]
    )
    return TriMesh(v, _BOX_TRIS.copy(), name=name)


def cube(half=1.0, name="cube") -> TriMesh:
    return box((-half,) * 3, (half,) * 3, name=name)


def split_cube(half=1.0, name="cube24") -> TriMesh:
    """Cube with 4 unshared vertices per face (24 verts, 12 tris), normals and a 3x2 UV atlas."""
    faces = [
        ((1, 0, 0), (0, 0, -1), (0, 1, 0)),
        ((-1, 0, 0), (0, 0, 1), (0, 1, 0)),
        ((0, 1, 0), (1, 0, 0), (0, 0, -1)),
        ((0, -1, 0), (1, 0, 0), (0, 0, 1)),
        ((0, 0, 1), (1, 0, 0), (0, 1, 0)),
        ((0, 0, -1), (-1, 0, 0), (0, 1, 0)),
    ]
    verts, norms, tris, uvs = [], [], [], []
    for f, (n, u, w) in enumerate(faces):
        n, u, w = (np.asarray(x, float) for x in (n, u, w))
        base = len(verts)
        quad = [(-1, -1), (1, -1), (1, 1), (-1, 1)]
        for s, t in quad:
            verts.append(half * (n + s * u + t * w))
            norms.append(n)
        # atlas cell with a small inset so charts never touch
        col, row = f % 3, f // 3
        x0, y0 = col / 3.0, row / 2.0
        inset = 0.02
        cu = [(x0 + inset + (s + 1) / 2 * (1 / 3 - 2 * inset), y0 + inset + (1 - (t + 1) / 2) * (0.5 - 2 * inset)) for s, t in quad]
        tris.append([base, base + 1, base + 2])
        tris.append([base, base + 2, base + 3])
        uvs.append([cu[0], cu[1], cu[2]])
        uvs.append([cu[0], cu[2], cu[3]])
    return TriMesh(np.array(verts), np.array(tris), normals=np.array(norms), uvs=np.array(uvs), name=name)


def icosphere(subdivisions=2, radius=1.0, center=(0.0, 0.0, 0.0), name="icosphere") -> TriMesh:
    """Subdivided icosahedron projected onto a sphere; 20 * 4**subdivisions triangles."""
    p = (1.0 + 5.0 ** 0.5) / 2.0
    v = [
        (-1, p, 0), (1, p, 0), (-1, -p, 0), (1, -p, 0),
        (0, -1, p), (0, 1, p), (0, -1, -p), (0, 1, -p),
        (p, 0, -1), (p, 0, 1), (-p, 0, -1), (-p, 0, 1),
    ]
    f = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.asarray(x, float) / np.linalg.norm(x) for x in v]
    faces = np.array(f)
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        nf = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = np.array(nf)
    unit = np.array(verts)
    return TriMesh(unit * radius + np.asarray(center, float), faces, normals=unit, name=name)


def uv_sphere(n_lat=32, n_lon=64, radius=1.0, name="uv_sphere") -> TriMesh:
    """Latitude/longitude sphere with poles on +-Z."""
    verts = [(0.0, 0.0, 1.0)]
    for i in range(1, n_lat):
        th = np.pi * i / n_lat
        for j in range(n_lon):
            ph = 2 * np.pi * j / n_lon
            verts.append((np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)))
    verts.append((0.0, 0.0, -1.0))
    tris = []
    for j in range(n_lon):
        tris.append((0, 1 + j, 1 + (j + 1) % n_lon))
    for i in range(n_lat - 2):
        r0, r1 = 1 + i * n_lon, 1 + (i + 1) * n_lon
        for j in range(n_lon):
            j1 = (j + 1) % n_lon
            tris.append((r0 + j, r1 + j, r1 + j1))
            tris.append((r0 + j, r1 + j1, r0 + j1))
    last = len(verts) - 1
    r0 = 1 + (n_lat - 2) * n_lon
    for j in range(n_lon):
        tris.append((r0 + j, last, r0 + (j + 1) % n_lon))
    unit = np.array(verts)
    return TriMesh(unit * radius, np.array(tris), normals=unit, name=name)


def torus(major=0.7, minor=0.3, n_major=48, n_minor=24, name="torus") -> TriMesh:
    """Torus around the z axis."""
    u = 2 * np.pi * np.arange(n_major) / n_major
    v = 2 * np.pi * np.arange(n_minor) / n_minor
    uu, vv = np.meshgrid(u, v, indexing="ij")
    x = (major + minor * np.cos(vv)) * np.cos(uu)
    y = (major + minor * np.cos(vv)) * np.sin(uu)
    z = minor * np.sin(vv)
    verts = np.stack([x, y, z], -1).reshape(-1, 3)
    normals = np.stack([np.cos(vv) * np.cos(uu), np.cos(vv) * np.sin(uu), np.sin(vv)], -1).reshape(-1, 3)
    tris = []
    for i in range(n_major):
        i1 = (i + 1) % n_major
        for j in range(n_minor):
            j1 = (j + 1) % n_minor
            a, b, c, d = i * n_minor + j, i1 * n_minor + j, i1 * n_minor + j1, i * n_minor + j1
            tris.append((a, b, c))
            tris.append((a, c, d))
    return TriMesh(verts, np.array(tris), normals=normals, name=name)


def cylinder(radius=0.5, height=2.0, segments=48, capped=True, name="cylinder") -> TriMesh:
    """Cylinder along z; ``capped=False`` gives an open tube."""
    ang = 2 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], 1)
    z0, z1 = -height / 2, height / 2
    verts = np.concatenate([np.c_[ring, np.full(segments, z0)], np.c_[ring, np.full(segments, z1)]])
    tris = []
    for j in range(segments):
        j1 = (j + 1) % segments
        tris.append((j, j1, segments + j1))
        tris.append((j, segments + j1, segments + j))
    if capped:
        bottom = len(verts)
        top = bottom + 1
        verts = np.concatenate([verts, [[0, 0, z0], [0, 0, z1]]])
        for j in range(segments):
            j1 = (j + 1) % segments
            tris.append((bottom, j1, j))
            tris.append((top, segments + j, segments + j1))
    return TriMesh(verts, np.array(tris), name=name)


def cone(radius=0.8, height=2.0, segments=48, name="cone") -> TriMesh:
    ang = 2 * np.pi * np.arange(segments) / segments
    verts = np.c_[radius * np.cos(ang), radius * np.sin(ang), np.full(segments, -height / 2)]
    apex, base = segments, segments + 1
    verts = np.concatenate([verts, [[0, 0, height / 2], [0, 0, -height / 2]]])
    tris = []
    for j in range(segments):
        j1 = (j + 1) % segments
        tris.append((j, j1, apex))
        tris.append((base, j1, j))
    return TriMesh(verts, np.array(tris), name=name)


def extrude(polygon, z0=-0.5, z1=0.5, fan_from=0, name="prism") -> TriMesh:
    """Extrude a CCW polygon (star-shaped w.r.t. vertex ``fan_from``) along z."""
    poly = np.asarray(polygon, float)
    n = len(poly)
    verts = np.concatenate([np.c_[poly, np.full(n, z0)], np.c_[poly, np.full(n, z1)]])
    tris = []
    for j in range(n):
        j1 = (j + 1) % n
        tris.append((j, j1, n + j1))
        tris.append((j, n + j1, n + j))
    order = [(fan_from + k) % n for k in range(n)]
    for k in range(1, n - 1):
        a, b, c = order[0], order[k], order[k + 1]
        tris.append((n + a, n + b, n + c))
        tris.append((a, c, b))
    return TriMesh(verts, np.array(tris), name=name)


def l_bracket(name="l_bracket") -> TriMesh:
    """Extruded L profile: convex 90 degree box edges plus one concave fold."""
    poly = [(-1.0, -1.0), (1.0, -1.0), (1.0, -0.5), (-0.5, -0.5), (-0.5, 1.0), (-1.0, 1.0)]
    return extrude(poly, -0.4, 0.4, fan_from=3, name=name)


def regular_prism(sides=6, radius=0.8, height=1.6, name="prism") -> TriMesh:
    ang = 2 * np.pi * np.arange(sides) / sides
    return extrude(np.c_[radius * np.cos(ang), radius * np.sin(ang)], -height / 2, height / 2, name=name)


def pyramid(sides=4, radius=1.0, height=1.5, name="pyramid") -> TriMesh:
    ang = 2 * np.pi * np.arange(sides) / sides + np.pi / sides
    verts = np.c_[radius * np.cos(ang), radius * np.sin(ang), np.full(sides, -height / 2)]
    verts = np.concatenate([verts, [[0, 0, height / 2]]])
    apex = sides
    tris = [(j, (j + 1) % sides, apex) for j in range(sides)]
    for k in range(1, sides - 1):
        tris.append((0, k + 1, k))
    return TriMesh(verts, np.array(tris), name=name)


def octahedron(radius=1.0, name="octahedron") -> TriMesh:
    v = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float) * radius
    f = [(0, 2, 4), (2, 1, 4), (1, 3, 4), (3, 0, 4), (2, 0, 5), (1, 2, 5), (3, 1, 5), (0, 3, 5)]
    return TriMesh(v, np.array(f), name=name)


def tetrahedron(radius=1.0, name="tetrahedron") -> TriMesh:
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], float) * radius / np.sqrt(3)
    f = [(0, 1, 2), (0, 3, 1), (0, 2, 3), (1, 3, 2)]
    return TriMesh(v, np.array(f), name=name)


def ellipsoid(axes=(1.0, 0.6, 0.4), subdivisions=3, name="ellipsoid") -> TriMesh:
    s = icosphere(subdivisions)
    return TriMesh(s.vertices * np.asarray(axes, float), s.triangles, name=name)


def capsule(radius=0.4, length=1.2, subdivisions=3, name="capsule") -> TriMesh:
    s = icosphere(subdivisions, radius)
    v = s.vertices.copy()
    v[:, 2] += np.where(v[:, 2] >= 0, length / 2, -length / 2)
    return TriMesh(v, s.triangles, name=name)


def square_plate(size=1.0, z=0.0, name="plate") -> TriMesh:
    """Zero-thickness axis-aligned square (two triangles)."""
    h = size / 2
    v = np.array([[-h, -h, z], [h, -h, z], [h, h, z], [-h, h, z]])
    return TriMesh(v, np.array([[0, 1, 2], [0, 2, 3]]), name=name)


def thin_plate(thickness=0.05, size=1.6, name="thin_plate") -> TriMesh:
    h = size / 2
    return box((-h, -h, -thickness / 2), (h, h, thickness / 2), name=name)


def nested_cubes(outer=1.0, inner=0.4, name="nested_cubes") -> TriMesh:
    return merge_meshes([cube(outer), cube(inner)], name=name)


def hollow_sphere(outer=1.0, inner=0.5, subdivisions=3, name="hollow_sphere") -> TriMesh:
    """Outer sphere enclosing an inward-facing inner shell."""
    o = icosphere(subdivisions, outer)
    i = icosphere(subdivisions, inner)
    i = TriMesh(i.vertices, i.triangles[:, ::-1], name="inner")
    return merge_meshes([TriMesh(o.vertices, o.triangles), i], name=name)


def open_box(name="open_box") -> TriMesh:
    """Cube with its +z face removed."""
    c = cube()
    keep = np.ones(len(c.triangles), bool)
    keep[2:4] = False
    return TriMesh(c.vertices, c.triangles[keep], name=name)


def hole_punched_sphere(fraction=0.05, subdivisions=3, seed=0, holes=5, name="holey_sphere") -> TriMesh:
    """Icosphere with ``holes`` disks removed, totalling ~``fraction`` of the area."""
    s = icosphere(subdivisions)
    rng = np.random.default_rng(seed)
    centres = rng.normal(size=(holes, 3))
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    # spherical cap area 2*pi*(1-cos a) per hole
    cos_a = 1.0 - 2.0 * fraction / holes
    fc = s.vertices[s.triangles].mean(axis=1)
    fc /= np.linalg.norm(fc, axis=1, keepdims=True)
    drop = np.any(fc @ centres.T > cos_a, axis=1)
    return TriMesh(s.vertices, s.triangles[~drop], name=name)


def coincident_face_cube(name="coincident_cube") -> TriMesh:
    """Cube with two faces duplicated, one with reversed winding."""
    c = cube()
    extra = np.concatenate([c.triangles[8:10], c.triangles[4:6][:, ::-1]])
    return TriMesh(c.vertices, np.concatenate([c.triangles, extra]), name=name)


def cubes_sharing_edge(name="edge_cubes") -> TriMesh:
    """Two unit cubes touching along one edge (non-manifold edge)."""
    a = box((0, 0, 0), (1, 1, 1))
    b = box((1, 1, 0), (2, 2, 1))
    m = merge_meshes([a, b])
    # weld the shared edge so the edge is literally shared by four faces
    v = m.vertices
    _, first, inv = np.unique(v, axis=0, return_index=True, return_inverse=True)
    remap = first[inv.ravel()]
    uniq, inv2 = np.unique(remap, return_inverse=True)
    return TriMesh(v[uniq], inv2.ravel()[m.triangles], name=name)


def quad(size=2.0, z=0.0, name="quad") -> TriMesh:
    """Square facing +z with a full-chart UV map (v grows downward in image rows)."""
    h = size / 2
    v = np.array([[-h, -h, z], [h, -h, z], [h, h, z], [-h, h, z]])
    uv = np.array([[0, 1], [1, 1], [1, 0], [0, 0]], float)
    t = np.array([[0, 1, 2], [0, 2, 3]])
    return TriMesh(v, t, uvs=uv[t], name=name)


def quantize_f32(mesh: TriMesh) -> TriMesh:
    """Round vertex data to float32-representable values (exact GLB round trip)."""
    normals = mesh.normals
    if normals is not None:
        normals = normals.astype(np.float32).astype(np.float64)
    uvs = mesh.uvs.astype(np.float32).astype(np.float64) if mesh.uvs is not None else None
    return mesh.replace(vertices=mesh.vertices.astype(np.float32).astype(np.float64), normals=normals, uvs=uvs)


def fixture_corpus() -> dict:
    """Named meshes used across the test-suite and the remesh acceptance run."""
    return {
        "cube": cube(),
        "icosphere": icosphere(3),
        "torus": torus(),
        "cylinder": cylinder(),
        "cone": cone(),
        "l_bracket": l_bracket(),
        "octahedron": octahedron(),
        "open_cylinder": cylinder(capped=False, name="open_cylinder"),
        "holey_sphere": hole_punched_sphere(),
        "nested_cubes": nested_cubes(),
        "coincident_cube": coincident_face_cube(),
        "thin_plate": thin_plate(),
    }


def distinct_primitives() -> dict:
    """Twenty shapes that must never be merged by deduplication."""
    shapes = {
        "cube": cube(),
        "box_2_1_1": box((-1, -0.5, -0.5), (1, 0.5, 0.5)),
        "box_2_1_03": box((-1, -0.5, -0.15), (1, 0.5, 0.15)),
        "box_2_2_05": box((-1, -1, -0.25), (1, 1, 0.25)),
        "sphere": icosphere(3),
        "ellipsoid_a": ellipsoid((1.0, 0.6, 0.4)),
        "ellipsoid_b": ellipsoid((0.5, 1.0, 0.5)),
        "torus_thick": torus(0.6, 0.4),
        "torus_thin": torus(0.8, 0.15),
        "cylinder": cylinder(),
        "disk": cylinder(radius=1.0, height=0.2),
        "cone": cone(),
        "pyramid": pyramid(),
        "tetrahedron": tetrahedron(),
        "octahedron": octahedron(),
        "hex_prism": regular_prism(6),
        "tri_prism": regular_prism(3),
        "l_bracket": l_bracket(),
        "capsule": capsule(),
        "thin_plate": thin_plate(),
    }
    return {k: m.replace(name=k) for k, m in shapes.items()}
