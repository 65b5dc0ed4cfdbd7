"""Point cloud container and normal estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..validation import as_points, as_vector3
from .io import read_ply, write_ply

__all__ = ["PointCloud", "estimate_normals"]


@dataclass
class PointCloud:
    """Points in meters with optional unit normals, same length."""

    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.points = as_points(self.points, allow_empty=True)
        if self.normals is not None:
            self.normals = as_points(self.normals, "normals", allow_empty=True)
            if len(self.normals) != len(self.points):
                raise ValueError("normals length mismatch")

    def __len__(self):
        return len(self.points)

    def transformed(self, pose, inverse=False):
        pts = pose.apply_inverse(self.points) if inverse else pose.apply(self.points)
        nrm = None
        if self.normals is not None:
            if hasattr(pose, "apply_normals") and not inverse:
                nrm = pose.apply_normals(self.normals)
            elif inverse and hasattr(pose, "scale"):
                # inverse map scales by 1/s after unrotating; normals transform
                # by the inverse-transpose of that linear part, then renormalize
                out = (self.normals @ pose.rotation) * pose.scale
                lens = np.linalg.norm(out, axis=1, keepdims=True)
                lens[lens == 0] = 1.0
                nrm = out / lens
            else:
                nrm = self.normals @ pose.rotation if inverse else self.normals @ pose.rotation.T
        return PointCloud(pts, nrm)

    def subset(self, indices):
        return PointCloud(self.points[indices],
                          None if self.normals is None else self.normals[indices])

    def save(self, path, binary=True, attributes=None):
        write_ply(path, self.points, normals=self.normals, attributes=attributes,
                  binary=binary)

    @classmethod
    def load(cls, path):
        d = read_ply(path)
        return cls(d["points"], d["normals"])


def estimate_normals(points, k=16, viewpoint=(0.0, 0.0, 0.0)):
    """Per-point normals from local PCA over the k nearest neighbors.

    The smallest-covariance eigenvector is flipped to face the viewpoint
    (sensor origin), which disambiguates sign on rendered partial views.
    """
    pts = as_points(points)
    view = as_vector3(viewpoint, "viewpoint")
    k = min(k, len(pts) - 1)
    if k < 2:
        raise ValueError("normal estimation needs at least 3 points")
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k + 1)
    nbrs = pts[idx]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    flip = np.einsum("ni,ni->n", normals, view - pts) < 0
    normals[flip] *= -1
    lens = np.linalg.norm(normals, axis=1, keepdims=True)
    lens[lens == 0] = 1.0
    return normals / lens
