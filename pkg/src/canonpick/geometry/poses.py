"""Rigid and scaled-rigid transforms.

Pose9D maps p' = R @ diag(scale) @ p + t. Composition of two such maps is a
general affine (R1 S1 R2 S2 does not factor back into R S), so there is no
inverse() returning a Pose9D; use transform_points(..., inverse=True) or
chain apply calls instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from ..validation import as_points, as_vector3, check_rotation

__all__ = ["Pose6D", "Pose9D", "transform_points", "rotation_to_quat", "quat_to_rotation"]


def rotation_to_quat(r):
    """Rotation matrix -> quaternion [x, y, z, w], canonical sign (w >= 0)."""
    return Rotation.from_matrix(r).as_quat(canonical=True)


def quat_to_rotation(q):
    """Quaternion [x, y, z, w] -> rotation matrix."""
    return Rotation.from_quat(np.asarray(q, dtype=np.float64)).as_matrix()


@dataclass
class Pose6D:
    """Rigid transform: p' = rotation @ p + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = check_rotation(self.rotation)
        self.translation = as_vector3(self.translation, "translation")

    def apply(self, points):
        pts = as_points(points, allow_empty=True)
        return pts @ self.rotation.T + self.translation

    def apply_inverse(self, points):
        pts = as_points(points, allow_empty=True)
        return (pts - self.translation) @ self.rotation

    def compose(self, other: "Pose6D") -> "Pose6D":
        """Return self ∘ other (other applied first)."""
        return Pose6D(self.rotation @ other.rotation,
                      self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose6D":
        return Pose6D(self.rotation.T, -self.rotation.T @ self.translation)

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def to_dict(self):
        return {"quat_xyzw": rotation_to_quat(self.rotation).tolist(),
                "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(quat_to_rotation(d["quat_xyzw"]), np.asarray(d["translation"]))


@dataclass
class Pose9D:
    """Scaled-rigid transform with per-axis scale: p' = R @ diag(s) @ p + t.

    scale entries must be strictly positive; the scaling happens in the source
    frame before rotation.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        self.rotation = check_rotation(self.rotation)
        self.translation = as_vector3(self.translation, "translation")
        self.scale = as_vector3(self.scale, "scale")
        if not (self.scale > 0).all():
            raise ValueError(f"scale must be strictly positive, got {self.scale}")

    def apply(self, points):
        pts = as_points(points, allow_empty=True)
        return (pts * self.scale) @ self.rotation.T + self.translation

    def apply_inverse(self, points):
        pts = as_points(points, allow_empty=True)
        return ((pts - self.translation) @ self.rotation) / self.scale

    def apply_normals(self, normals):
        """Map unit normals through the linear part's inverse transpose, renormalized.

        For R @ diag(s) the inverse transpose is R @ diag(1/s).
        """
        nrm = as_points(normals, "normals", allow_empty=True)
        out = (nrm / self.scale) @ self.rotation.T
        lens = np.linalg.norm(out, axis=1, keepdims=True)
        lens[lens == 0] = 1.0
        return out / lens

    def linear(self):
        """The 3x3 linear part R @ diag(s)."""
        return self.rotation * self.scale

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.linear()
        m[:3, 3] = self.translation
        return m

    def to_dict(self):
        return {"quat_xyzw": rotation_to_quat(self.rotation).tolist(),
                "translation": self.translation.tolist(),
                "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(quat_to_rotation(d["quat_xyzw"]), np.asarray(d["translation"]),
                   np.asarray(d["scale"]))

    @classmethod
    def identity(cls):
        return cls()


def transform_points(points, pose, inverse=False):
    """Apply a Pose6D/Pose9D to an (N, 3) array; inverse=True applies the inverse map."""
    if inverse:
        return pose.apply_inverse(points)
    return pose.apply(points)
