"""Procedural desk-scale meshes: primitives, demo part categories, bins.

Compound parts (screw = head + shaft, bracket = two legs) are built as
concatenations of closed shells. The union is still a valid inside/outside
field for winding-number queries, but surface samples can land on faces
buried inside the other shell; drop_buried_points removes those.
"""

from __future__ import annotations

import numpy as np

from .geometry import PointCloud, TriMesh, poisson_disk_sample
from .geometry.sdf import winding_number

__all__ = [
    "make_box", "make_cylinder", "make_icosphere", "make_tube", "make_hex_nut",
    "make_plate_with_hole", "make_open_box", "make_screw", "make_bracket",
    "drop_buried_points", "surface_cloud",
    "screw_variants", "nut_variants", "bracket_variants", "demo_category",
]


def make_box(extents, center=(0.0, 0.0, 0.0)):
    """Axis-aligned closed box, outward winding."""
    e = np.asarray(extents, dtype=np.float64) / 2.0
    c = np.asarray(center, dtype=np.float64)
    signs = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)],
                     dtype=np.float64)
    verts = c + signs * e
    faces = np.array([
        [0, 1, 3], [0, 3, 2],  # -x
        [4, 6, 7], [4, 7, 5],  # +x
        [0, 4, 5], [0, 5, 1],  # -y
        [2, 3, 7], [2, 7, 6],  # +y
        [0, 2, 6], [0, 6, 4],  # -z
        [1, 5, 7], [1, 7, 3],  # +z
    ], dtype=np.int64)
    return TriMesh(verts, faces, name="box")


def _ring(radius, segments, phase=0.0):
    ang = phase + 2 * np.pi * np.arange(segments) / segments
    return np.column_stack([radius * np.cos(ang), radius * np.sin(ang)])


def _prism(ring_xy, z0, z1, name):
    """Closed convex prism from a 2-D ring (capped with center fans)."""
    k = len(ring_xy)
    bot = np.column_stack([ring_xy, np.full(k, z0)])
    top = np.column_stack([ring_xy, np.full(k, z1)])
    cb = np.array([[ring_xy[:, 0].mean(), ring_xy[:, 1].mean(), z0]])
    ct = np.array([[ring_xy[:, 0].mean(), ring_xy[:, 1].mean(), z1]])
    verts = np.vstack([bot, top, cb, ct])
    ib, it, icb, ict = 0, k, 2 * k, 2 * k + 1
    faces = []
    for i in range(k):
        j = (i + 1) % k
        faces += [[ib + i, ib + j, it + j], [ib + i, it + j, it + i]]  # wall
        faces += [[icb, ib + j, ib + i]]                               # bottom cap
        faces += [[ict, it + i, it + j]]                               # top cap
    return TriMesh(verts, np.asarray(faces, dtype=np.int64), name=name)


def _ring_solid(outer_xy, inner_xy, z0, z1, name):
    """Closed solid between two matched K-point rings (e.g. a washer)."""
    k = len(outer_xy)
    if len(inner_xy) != k:
        raise ValueError("ring vertex counts must match")
    ob = np.column_stack([outer_xy, np.full(k, z0)])
    ot = np.column_stack([outer_xy, np.full(k, z1)])
    nb = np.column_stack([inner_xy, np.full(k, z0)])
    nt = np.column_stack([inner_xy, np.full(k, z1)])
    verts = np.vstack([ob, ot, nb, nt])
    iob, iot, inb, int_ = 0, k, 2 * k, 3 * k
    faces = []
    for i in range(k):
        j = (i + 1) % k
        faces += [[iob + i, iob + j, iot + j], [iob + i, iot + j, iot + i]]   # outer wall
        faces += [[inb + i, int_ + j, inb + j], [inb + i, int_ + i, int_ + j]]  # inner wall
        faces += [[iot + i, iot + j, int_ + j], [iot + i, int_ + j, int_ + i]]  # top
        faces += [[iob + i, inb + j, iob + j], [iob + i, inb + i, inb + j]]     # bottom
    return TriMesh(verts, np.asarray(faces, dtype=np.int64), name=name)


def make_cylinder(radius, height, segments=24):
    return _prism(_ring(radius, segments), -height / 2, height / 2, "cylinder")


def make_tube(outer_radius, inner_radius, height, segments=24):
    return _ring_solid(_ring(outer_radius, segments), _ring(inner_radius, segments),
                       -height / 2, height / 2, "tube")


def make_icosphere(radius, subdivisions=2):
    t = (1 + np.sqrt(5)) / 2
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    for _ in range(subdivisions):
        edge_mid = {}
        new_faces = []
        verts = list(verts)

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in edge_mid:
                verts.append((np.asarray(verts[i]) + verts[j]) / 2.0)
                edge_mid[key] = len(verts) - 1
            return edge_mid[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.asarray(verts)
        faces = np.asarray(new_faces, dtype=np.int64)
    verts = verts / np.linalg.norm(verts, axis=1, keepdims=True) * radius
    return TriMesh(verts, faces, name="icosphere")


def make_hex_nut(across_flats, height, hole_radius):
    """Hex prism with a through hole; outer hexagon sampled at 12 ring points."""
    r_corner = across_flats / np.sqrt(3.0)
    hexagon = _ring(r_corner, 6, phase=np.pi / 6)
    outer = np.empty((12, 2))
    outer[0::2] = hexagon
    outer[1::2] = (hexagon + np.roll(hexagon, -1, axis=0)) / 2.0
    phase0 = float(np.arctan2(outer[0, 1], outer[0, 0]))
    inner = _ring(hole_radius, 12, phase=phase0)
    return _ring_solid(outer, inner, -height / 2, height / 2, "nut")


def make_plate_with_hole(width, thickness, hole_radius, per_side=6):
    """Square plate with a centered circular through hole; z in [0, thickness]."""
    k = 4 * per_side
    ang = 2 * np.pi * (np.arange(k) + 0.5) / k
    # square boundary point along each ray direction
    d = np.column_stack([np.cos(ang), np.sin(ang)])
    half = width / 2.0
    t_hit = half / np.maximum(np.abs(d).max(axis=1), 1e-12)
    outer = d * t_hit[:, None]
    inner = d * hole_radius
    return _ring_solid(outer, inner, 0.0, thickness, "plate_with_hole")


def make_open_box(inner_size, wall_height, wall_thickness=0.008, floor_thickness=0.008):
    """Open-top bin; floor top surface at z = 0, interior centered on the origin."""
    ix, iy = float(inner_size[0]), float(inner_size[1])
    t, fl, h = wall_thickness, floor_thickness, wall_height
    parts = [
        make_box([ix + 2 * t, iy + 2 * t, fl], center=[0, 0, -fl / 2]),
        make_box([t, iy + 2 * t, h + fl], center=[(ix + t) / 2, 0, (h - fl) / 2]),
        make_box([t, iy + 2 * t, h + fl], center=[-(ix + t) / 2, 0, (h - fl) / 2]),
        make_box([ix, t, h + fl], center=[0, (iy + t) / 2, (h - fl) / 2]),
        make_box([ix, t, h + fl], center=[0, -(iy + t) / 2, (h - fl) / 2]),
    ]
    mesh = parts[0]
    for p in parts[1:]:
        mesh = mesh.concatenated(p)
    mesh.name = "bin"
    return mesh


def make_screw(head_radius=0.012, head_height=0.012, shaft_radius=0.005,
               shaft_length=0.030, segments=24):
    """Flat-head screw along +z: shaft spans z in [-shaft_length, ~0], head above.

    The shaft shell pokes 2 mm into the head shell so the compound union is a
    connected solid.
    """
    overlap = 0.002
    shaft = make_cylinder(shaft_radius, shaft_length + overlap, max(12, segments // 2))
    shaft = shaft.translated([0, 0, (overlap - shaft_length) / 2])  # spans [-L, +overlap]
    head = make_cylinder(head_radius, head_height, segments)
    head = head.translated([0, 0, head_height / 2])
    mesh = head.concatenated(shaft)
    mesh.name = "screw"
    return mesh


def make_bracket(leg_a=(0.056, 0.020, 0.014), leg_b=(0.020, 0.040, 0.026)):
    """Asymmetric L bracket: two overlapping closed boxes sharing a corner."""
    a = np.asarray(leg_a, dtype=np.float64)
    b = np.asarray(leg_b, dtype=np.float64)
    box_a = make_box(a, center=[a[0] / 2, a[1] / 2, a[2] / 2])
    box_b = make_box(b, center=[b[0] / 2, b[1] / 2, b[2] / 2])
    mesh = box_a.concatenated(box_b)
    mesh.name = "bracket"
    return mesh


def drop_buried_points(mesh, cloud, offset=1e-5):
    """Remove samples on faces buried inside another shell of a compound mesh.

    Winding is evaluated a hair outside the surface along the sample normal,
    where it is numerically stable: ~0 for true outer surface, ~1 when the
    face is enclosed by another closed shell.
    """
    if cloud.normals is None:
        raise ValueError("cloud needs normals to classify buried samples")
    w = winding_number(mesh, cloud.points + offset * cloud.normals)
    return cloud.subset(np.flatnonzero(w < 0.5))


def surface_cloud(mesh, radius, seed=0):
    """Blue-noise surface cloud with buried compound-shell samples removed."""
    return drop_buried_points(mesh, poisson_disk_sample(mesh, radius, seed=seed))


def screw_variants(n=4):
    """A small screw category: sizes vary, proportions stay screw-like."""
    specs = [
        dict(head_radius=0.012, head_height=0.012, shaft_radius=0.0050, shaft_length=0.030),
        dict(head_radius=0.014, head_height=0.013, shaft_radius=0.0060, shaft_length=0.034),
        dict(head_radius=0.010, head_height=0.010, shaft_radius=0.0042, shaft_length=0.026),
        dict(head_radius=0.013, head_height=0.014, shaft_radius=0.0055, shaft_length=0.038),
        dict(head_radius=0.015, head_height=0.014, shaft_radius=0.0062, shaft_length=0.035),
    ]
    out = []
    for i, s in enumerate(specs[:n]):
        m = make_screw(**s)
        m.name = f"screw_{i:02d}"
        out.append(m)
    return out


def nut_variants(n=3):
    specs = [
        dict(across_flats=0.024, height=0.010, hole_radius=0.006),
        dict(across_flats=0.030, height=0.012, hole_radius=0.008),
        dict(across_flats=0.020, height=0.009, hole_radius=0.005),
        dict(across_flats=0.027, height=0.014, hole_radius=0.007),
    ]
    out = []
    for i, s in enumerate(specs[:n]):
        m = make_hex_nut(**s)
        m.name = f"nut_{i:02d}"
        out.append(m)
    return out


def bracket_variants(n=3):
    specs = [
        ((0.056, 0.020, 0.014), (0.020, 0.040, 0.026)),
        ((0.064, 0.023, 0.016), (0.023, 0.045, 0.030)),
        ((0.049, 0.018, 0.012), (0.018, 0.036, 0.023)),
        ((0.060, 0.021, 0.015), (0.021, 0.043, 0.028)),
    ]
    out = []
    for i, (la, lb) in enumerate(specs[:n]):
        m = make_bracket(la, lb)
        m.name = f"bracket_{i:02d}"
        out.append(m)
    return out


def demo_category(name, n=3):
    if name == "screws":
        return screw_variants(n)
    if name == "nuts":
        return nut_variants(n)
    if name == "brackets":
        return bracket_variants(n)
    raise ValueError(f"unknown demo category {name!r}")
