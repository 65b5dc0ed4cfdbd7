"""Parallel-jaw gripper model.

Gripper frame convention: origin at the grasp center (midpoint of the two
surface contacts), +x the closing axis (fingers at +-width/2), +z the
approach axis pointing from palm to fingertips. Finger meshes are stored at
maximum opening; fingertip planes sit grasp_depth beyond the origin so a
sampled contact lies that deep inside the jaws.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .geometry.mesh import TriMesh, load_mesh, save_mesh
from .assets import make_box
from .validation import check_positive

__all__ = ["GripperModel", "make_parallel_jaw"]

SCHEMA_VERSION = 1


@dataclass
class GripperModel:
    fingers: tuple[TriMesh, TriMesh]     # (+x finger, -x finger) at max opening
    palm: TriMesh
    max_opening: float
    finger_depth: float                  # inner-face span along approach
    grasp_depth: float                   # fingertip plane z offset from origin
    approach_axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    closing_axis: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    friction_mu: float = 0.4

    def __post_init__(self):
        check_positive(self.max_opening, "max_opening")
        check_positive(self.finger_depth, "finger_depth")
        self.approach_axis = np.asarray(self.approach_axis, dtype=np.float64)
        self.closing_axis = np.asarray(self.closing_axis, dtype=np.float64)
        for name, ax in (("approach_axis", self.approach_axis),
                         ("closing_axis", self.closing_axis)):
            if abs(np.linalg.norm(ax) - 1) > 1e-9:
                raise ValueError(f"{name} must be a unit vector")
        if abs(self.approach_axis @ self.closing_axis) > 1e-9:
            raise ValueError("approach and closing axes must be orthogonal")

    def fingers_at(self, width):
        """Finger meshes with inner faces at +-width/2."""
        if width < 0 or width > self.max_opening + 1e-12:
            raise ValueError(f"width {width} outside [0, {self.max_opening}]")
        shift = (self.max_opening - width) / 2
        fp, fm = self.fingers
        return (fp.translated([-shift, 0.0, 0.0]), fm.translated([shift, 0.0, 0.0]))

    def meshes_at(self, width, pose=None):
        """All solids at the given jaw width, optionally posed."""
        fp, fm = self.fingers_at(width)
        out = [fp, fm, self.palm]
        if pose is not None:
            out = [m.transformed(pose) for m in out]
        return out

    def closing_region(self, width):
        """AABB (lo, hi) in gripper frame swept by the inner faces closing
        from +-width/2 to the center."""
        fp = self.fingers[0]
        lo, hi = fp.aabb
        return (np.array([-width / 2, lo[1], lo[2]]),
                np.array([width / 2, hi[1], hi[2]]))

    def bounding_radius(self, width=None):
        """Radius of a sphere at the origin containing every solid."""
        w = self.max_opening if width is None else width
        r = 0.0
        for m in self.meshes_at(w):
            r = max(r, float(np.linalg.norm(m.vertices, axis=1).max()))
        return r

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        save_mesh(os.path.join(directory, "finger_pos.obj"), self.fingers[0])
        save_mesh(os.path.join(directory, "finger_neg.obj"), self.fingers[1])
        save_mesh(os.path.join(directory, "palm.obj"), self.palm)
        doc = {
            "schema_version": SCHEMA_VERSION,
            "kind": "gripper",
            "max_opening": self.max_opening,
            "finger_depth": self.finger_depth,
            "grasp_depth": self.grasp_depth,
            "approach_axis": self.approach_axis.tolist(),
            "closing_axis": self.closing_axis.tolist(),
            "friction_mu": self.friction_mu,
            "meshes": {"finger_pos": "finger_pos.obj", "finger_neg": "finger_neg.obj",
                       "palm": "palm.obj"},
        }
        tmp = os.path.join(directory, "gripper.json.tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, os.path.join(directory, "gripper.json"))

    @classmethod
    def load(cls, directory):
        with open(os.path.join(directory, "gripper.json"), "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("kind") != "gripper":
            raise ValueError(f"{directory}: not a gripper directory")
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"{directory}: unsupported gripper schema "
                             f"{doc.get('schema_version')}")
        meshes = {k: load_mesh(os.path.join(directory, v))
                  for k, v in doc["meshes"].items()}
        return cls(
            fingers=(meshes["finger_pos"], meshes["finger_neg"]),
            palm=meshes["palm"],
            max_opening=doc["max_opening"],
            finger_depth=doc["finger_depth"],
            grasp_depth=doc["grasp_depth"],
            approach_axis=np.asarray(doc["approach_axis"]),
            closing_axis=np.asarray(doc["closing_axis"]),
            friction_mu=doc["friction_mu"],
        )


def make_parallel_jaw(max_opening=0.060, finger_depth=0.022, grasp_depth=0.006,
                      finger_thickness=0.008, finger_width=0.016,
                      palm_thickness=0.014, friction_mu=0.4):
    """Box-built two-finger gripper in the canonical gripper frame."""
    z_hi = grasp_depth
    z_lo = grasp_depth - finger_depth
    half = max_opening / 2
    fp = make_box((finger_thickness, finger_width, finger_depth),
                  center=(half + finger_thickness / 2, 0.0, (z_lo + z_hi) / 2))
    fp.name = "finger_pos"
    fm = make_box((finger_thickness, finger_width, finger_depth),
                  center=(-half - finger_thickness / 2, 0.0, (z_lo + z_hi) / 2))
    fm.name = "finger_neg"
    span = max_opening + 2 * finger_thickness
    palm = make_box((span, finger_width, palm_thickness),
                    center=(0.0, 0.0, z_lo - palm_thickness / 2))
    palm.name = "palm"
    return GripperModel(fingers=(fp, fm), palm=palm, max_opening=max_opening,
                        finger_depth=finger_depth, grasp_depth=grasp_depth,
                        friction_mu=friction_mu)
