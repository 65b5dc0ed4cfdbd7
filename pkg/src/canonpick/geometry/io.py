"""Mesh, point-cloud, and depth-map file formats.

OBJ (geometry only), PLY (ASCII and binary little-endian, per-vertex scalar
attributes), and PFM (single-channel 32-bit float, little-endian). Writers
emit no timestamps or hostnames so repeated runs produce identical bytes.
"""

from __future__ import annotations

import numpy as np

__all__ = ["read_obj", "write_obj", "read_ply", "write_ply", "read_pfm", "write_pfm"]


def _fmt(x):
    # repr gives the shortest string that round-trips a float64
    return repr(float(x))


# ---------------------------------------------------------------------------
# OBJ


def read_obj(path):
    """Parse an OBJ file into (vertices (V,3), faces (F,3) int).

    Polygon faces are fan-triangulated. Normals, texture coordinates, and
    material statements are ignored. Raises ValueError on malformed content.
    """
    verts = []
    faces = []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise ValueError(f"{path}:{lineno}: truncated vertex line")
                try:
                    verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: bad vertex: {raw!r}") from exc
            elif tag == "f":
                if len(parts) < 4:
                    raise ValueError(f"{path}:{lineno}: face with fewer than 3 vertices")
                idx = []
                for tok in parts[1:]:
                    head = tok.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError as exc:
                        raise ValueError(f"{path}:{lineno}: bad face index {tok!r}") from exc
                    # negative indices count back from the current vertex list
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    v = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(f) and (f.min() < 0 or f.max() >= len(v)):
        raise ValueError(f"{path}: face index out of range (truncated file?)")
    return v, f


def write_obj(path, vertices, faces):
    verts = np.asarray(vertices, dtype=np.float64)
    tris = np.asarray(faces, dtype=np.int64)
    lines = []
    for p in verts:
        lines.append(f"v {_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}")
    for f in tris:
        lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# PLY

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
_PLY_NAMES = {"i1": "char", "u1": "uchar", "i2": "short", "u2": "ushort",
              "i4": "int", "u4": "uint", "f4": "float", "f8": "double"}


def write_ply(path, points, normals=None, attributes=None, faces=None, binary=True):
    """Write a PLY point cloud or mesh.

    attributes maps name -> (N,) array; float arrays are stored as double,
    integer arrays as int32. Property order: x y z [nx ny nz] [attrs in dict
    order]. faces, when given, are (F, 3) vertex indices.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    cols = [("x", "f8", pts[:, 0]), ("y", "f8", pts[:, 1]), ("z", "f8", pts[:, 2])]
    if normals is not None:
        nrm = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
        if len(nrm) != n:
            raise ValueError("normals length mismatch")
        cols += [("nx", "f8", nrm[:, 0]), ("ny", "f8", nrm[:, 1]), ("nz", "f8", nrm[:, 2])]
    for name, arr in (attributes or {}).items():
        a = np.asarray(arr)
        if len(a) != n:
            raise ValueError(f"attribute {name!r} length mismatch")
        code = "i4" if np.issubdtype(a.dtype, np.integer) else "f8"
        cols.append((name, code, a.astype(code)))

    fmt = "binary_little_endian" if binary else "ascii"
    header = ["ply", f"format {fmt} 1.0", f"element vertex {n}"]
    header += [f"property {_PLY_NAMES[c[1]]} {c[0]}" for c in cols]
    tris = None
    if faces is not None:
        tris = np.asarray(faces, dtype=np.int32).reshape(-1, 3)
        header.append(f"element face {len(tris)}")
        header.append("property list uchar int vertex_indices")
    header.append("end_header")

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            rec = np.empty(n, dtype=[(c[0], "<" + c[1]) for c in cols])
            for name, _, data in cols:
                rec[name] = data
            fh.write(rec.tobytes())
            if tris is not None:
                frec = np.empty(len(tris), dtype=[("n", "u1"), ("v", "<i4", (3,))])
                frec["n"] = 3
                frec["v"] = tris
                fh.write(frec.tobytes())
        else:
            for i in range(n):
                vals = []
                for _, code, data in cols:
                    vals.append(str(int(data[i])) if code == "i4" else _fmt(data[i]))
                fh.write((" ".join(vals) + "\n").encode("ascii"))
            if tris is not None:
                for f in tris:
                    fh.write(f"3 {f[0]} {f[1]} {f[2]}\n".encode("ascii"))


def read_ply(path):
    """Read a PLY file written by write_ply (or compatible).

    Returns dict with 'points' (N,3), 'normals' (N,3 or None), 'attributes'
    (dict of extra per-vertex arrays), 'faces' ((F,3) int or None).
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"ply"):
        raise ValueError(f"{path}: not a PLY file")
    end = data.find(b"end_header\n")
    if end < 0:
        raise ValueError(f"{path}: missing end_header")
    header = data[:end].decode("ascii", errors="replace").splitlines()
    body = data[end + len(b"end_header\n"):]

    fmt = None
    elements = []  # (name, count, [(prop_name, code)]) ; face list prop coded specially
    for line in header[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append([parts[1], int(parts[2]), []])
        elif parts[0] == "property":
            if parts[1] == "list":
                elements[-1][2].append((parts[-1], ("list", _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]])))
            else:
                elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise ValueError(f"{path}: unsupported format {fmt!r}")

    out = {"points": None, "normals": None, "attributes": {}, "faces": None}
    if fmt == "ascii":
        tokens = body.decode("ascii").split("\n")
        row = 0
        for name, count, props in elements:
            rows = [tokens[row + i].split() for i in range(count)]
            row += count
            _consume_element(out, name, count, props, rows=rows)
    else:
        offset = 0
        for name, count, props in elements:
            if any(isinstance(code, tuple) for _, code in props):
                # list property: assume triangles (uniform count 3), verify as we go
                cdt, idt = props[0][1][1], props[0][1][2]
                rec = np.dtype([("n", "<" + cdt), ("v", "<" + idt, (3,))])
                arr = np.frombuffer(body, dtype=rec, count=count, offset=offset)
                offset += rec.itemsize * count
                if count and not (arr["n"] == 3).all():
                    raise ValueError(f"{path}: non-triangular faces unsupported")
                _consume_element(out, name, count, props, faces=arr["v"].astype(np.int64))
            else:
                rec = np.dtype([(p, "<" + code) for p, code in props])
                arr = np.frombuffer(body, dtype=rec, count=count, offset=offset)
                offset += rec.itemsize * count
                _consume_element(out, name, count, props, rec_arr=arr)
    return out


def _consume_element(out, name, count, props, rows=None, rec_arr=None, faces=None):
    if name == "vertex":
        cols = {}
        for j, (pname, code) in enumerate(props):
            if rec_arr is not None:
                cols[pname] = np.asarray(rec_arr[pname], dtype=np.float64)
            else:
                cast = int if code.startswith(("i", "u")) else float
                cols[pname] = np.asarray([cast(r[j]) for r in rows], dtype=np.float64)
            if code.startswith(("i", "u")):
                cols[pname] = cols[pname].astype(np.int64)
        for key in ("x", "y", "z"):
            if key not in cols:
                raise ValueError("vertex element lacks x/y/z")
        out["points"] = np.column_stack([cols.pop("x"), cols.pop("y"), cols.pop("z")]).astype(np.float64)
        if all(k in cols for k in ("nx", "ny", "nz")):
            out["normals"] = np.column_stack(
                [cols.pop("nx"), cols.pop("ny"), cols.pop("nz")]).astype(np.float64)
        out["attributes"] = cols
    elif name == "face":
        if faces is not None:
            out["faces"] = faces
        else:
            tri = []
            for r in rows:
                k = int(r[0])
                if k != 3:
                    raise ValueError("non-triangular faces unsupported")
                tri.append([int(r[1]), int(r[2]), int(r[3])])
            out["faces"] = np.asarray(tri, dtype=np.int64).reshape(-1, 3)


# ---------------------------------------------------------------------------
# PFM


def write_pfm(path, depth):
    """Write (H, W) float array as grayscale PFM, row 0 = top of image.

    PFM stores rows bottom-to-top; scale -1 marks little-endian data.
    """
    arr = np.asarray(depth, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError("depth must be 2-D")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(arr[::-1].astype("<f4").tobytes())


def read_pfm(path):
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"Pf":
            raise ValueError(f"{path}: not a grayscale PFM")
        w, h = (int(t) for t in fh.readline().split())
        scale = float(fh.readline())
        data = np.frombuffer(fh.read(w * h * 4), dtype="<f4" if scale < 0 else ">f4")
    if data.size != w * h:
        raise ValueError(f"{path}: truncated PFM payload")
    return data.reshape(h, w)[::-1].astype(np.float32)
