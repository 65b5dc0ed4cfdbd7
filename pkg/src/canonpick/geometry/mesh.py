"""Triangle mesh container and loading with unit handling."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from ..validation import as_points
from .io import read_obj, read_ply, write_obj, write_ply

__all__ = ["TriMesh", "load_mesh", "save_mesh"]

_DEGENERATE_AREA = 1e-14  # m^2; faces below this are dropped on load


@dataclass
class TriMesh:
    """Indexed triangle mesh in meters.

    Faces are assumed consistently wound with outward normals where the mesh
    is closed. Derived quantities are cached lazily and invalidated only by
    constructing a new mesh; treat instances as immutable.
    """

    vertices: np.ndarray
    faces: np.ndarray
    name: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.vertices = as_points(self.vertices, "vertices", allow_empty=True)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces):
            if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
                raise ValueError("face index out of range")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def triangles(self):
        """(F, 3, 3) corner coordinates."""
        if "triangles" not in self._cache:
            self._cache["triangles"] = self.vertices[self.faces]
        return self._cache["triangles"]

    @property
    def face_normals(self):
        """(F, 3) unit normals; zero vector for (cleaned-away) degenerate faces."""
        if "face_normals" not in self._cache:
            t = self.triangles
            n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
            lens = np.linalg.norm(n, axis=1, keepdims=True)
            self._cache["face_normals"] = np.where(lens > 0, n / np.where(lens == 0, 1, lens), 0.0)
        return self._cache["face_normals"]

    @property
    def face_areas(self):
        if "face_areas" not in self._cache:
            t = self.triangles
            self._cache["face_areas"] = 0.5 * np.linalg.norm(
                np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)
        return self._cache["face_areas"]

    @property
    def area(self):
        return float(self.face_areas.sum())

    @property
    def surface_centroid(self):
        """Area-weighted centroid of the surface (thin-shell center of mass)."""
        c = self.triangles.mean(axis=1)
        w = self.face_areas
        return (c * w[:, None]).sum(axis=0) / w.sum()

    @property
    def volume_centroid(self):
        """Center of mass at uniform density, via signed tetrahedra against
        the origin. Meaningful only for closed, consistently wound meshes."""
        if "volume_centroid" not in self._cache:
            t = self.triangles
            v6 = np.einsum("fi,fi->f", t[:, 0], np.cross(t[:, 1], t[:, 2]))
            vol = v6.sum()
            if abs(vol) < 1e-18:
                raise ValueError(f"{self.name or 'mesh'}: zero enclosed volume")
            c = t.sum(axis=1) / 4.0
            self._cache["volume_centroid"] = (c * v6[:, None]).sum(axis=0) / vol
        return self._cache["volume_centroid"]

    @property
    def aabb(self):
        """(min (3,), max (3,)) axis-aligned bounds."""
        if "aabb" not in self._cache:
            self._cache["aabb"] = (self.vertices.min(axis=0), self.vertices.max(axis=0))
        return self._cache["aabb"]

    @property
    def extents(self):
        lo, hi = self.aabb
        return hi - lo

    @property
    def is_watertight(self):
        """True when every undirected edge is shared by exactly two faces."""
        if "watertight" not in self._cache:
            if len(self.faces) == 0:
                self._cache["watertight"] = False
            else:
                e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]],
                                    self.faces[:, [2, 0]]])
                e.sort(axis=1)
                _, counts = np.unique(e, axis=0, return_counts=True)
                self._cache["watertight"] = bool((counts == 2).all())
        return self._cache["watertight"]

    def transformed(self, pose, name=None):
        """Return a new mesh with vertices mapped through a Pose6D/Pose9D."""
        return TriMesh(pose.apply(self.vertices), self.faces.copy(),
                       name=self.name if name is None else name)

    def translated(self, offset):
        return TriMesh(self.vertices + np.asarray(offset, dtype=np.float64),
                       self.faces.copy(), name=self.name)

    def scaled(self, scale):
        """Per-axis or scalar scale about the origin."""
        s = np.broadcast_to(np.asarray(scale, dtype=np.float64), (3,))
        return TriMesh(self.vertices * s, self.faces.copy(), name=self.name)

    def concatenated(self, other):
        return TriMesh(np.vstack([self.vertices, other.vertices]),
                       np.vstack([self.faces, other.faces + self.n_vertices]),
                       name=self.name)


def _clean(vertices, faces, name):
    if len(vertices) == 0 or len(faces) == 0:
        raise ValueError(f"{name}: mesh has no geometry")
    t = vertices[faces]
    areas = 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)
    keep = areas > _DEGENERATE_AREA
    faces = faces[keep]
    if len(faces) == 0:
        raise ValueError(f"{name}: all faces degenerate")
    return vertices, faces


def load_mesh(path, scale_to_m=1.0):
    """Load an OBJ or PLY mesh, scaling coordinates by scale_to_m into meters.

    Zero-area faces are dropped; an empty or all-degenerate mesh raises
    ValueError. Unreferenced vertices are kept (harmless for our uses).
    """
    ext = os.path.splitext(path)[1].lower()
    if ext == ".obj":
        v, f = read_obj(path)
    elif ext == ".ply":
        d = read_ply(path)
        v, f = d["points"], d["faces"]
        if f is None:
            raise ValueError(f"{path}: PLY has no faces (point cloud, not a mesh)")
    else:
        raise ValueError(f"{path}: unsupported mesh format {ext!r}")
    v = v * float(scale_to_m)
    v, f = _clean(v, f, str(path))
    return TriMesh(v, f, name=os.path.splitext(os.path.basename(path))[0])


def save_mesh(path, mesh, binary=True):
    ext = os.path.splitext(path)[1].lower()
    if ext == ".obj":
        write_obj(path, mesh.vertices, mesh.faces)
    elif ext == ".ply":
        write_ply(path, mesh.vertices, faces=mesh.faces, binary=binary)
    else:
        raise ValueError(f"{path}: unsupported mesh format {ext!r}")
