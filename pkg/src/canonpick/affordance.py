"""Task-relevant contact discovery and scoring.

Trial grasps that survive the lift oracle drive a placement rehearsal into a
receptacle; the per-point ratio of placement successes to grasp successes
becomes a contact heatmap, aggregated onto the canonical template and read
back at planning time to rank grasp candidates by task relevance.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .canonical import normalize_unit_cube
from .geometry.cloud import PointCloud
from .geometry.collision import mesh_collision
from .geometry.io import read_ply, write_ply
from .geometry.mesh import load_mesh, save_mesh
from .geometry.poses import Pose6D
from .geometry.sdf import signed_distance
from .grasping import GraspConfig, _close_fingers, grasp_oracle
from .validation import check_positive

__all__ = [
    "ContactHeatmap", "PlacementTask", "discover_heatmap", "placement_check",
    "aggregate_heatmaps", "task_relevance", "joint_score",
]

SCHEMA_VERSION = 1
UNEXPLORED = 0.5


@dataclass
class ContactHeatmap:
    """Per-point placement-success statistics over a surface cloud.

    p_TgG is n_GT/n_G where a point was ever contacted and exactly 0.5 where
    it was not; the 0.5 marks unexplored surface, not indifference measured.
    """

    cloud: object
    n_G: np.ndarray
    n_GT: np.ndarray
    p_TgG: np.ndarray
    instance_index: int | None = None

    def __post_init__(self):
        n = len(self.cloud.points)
        self.n_G = np.asarray(self.n_G, dtype=np.int64)
        self.n_GT = np.asarray(self.n_GT, dtype=np.int64)
        self.p_TgG = np.asarray(self.p_TgG, dtype=np.float64)
        for name, arr in (("n_G", self.n_G), ("n_GT", self.n_GT),
                          ("p_TgG", self.p_TgG)):
            if arr.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},)")
        if (self.n_G < 0).any() or (self.n_GT < 0).any():
            raise ValueError("counts must be non-negative")
        if (self.n_GT > self.n_G).any():
            raise ValueError("n_GT exceeds n_G")
        if ((self.p_TgG < 0) | (self.p_TgG > 1)).any():
            raise ValueError("p_TgG outside [0, 1]")

    @classmethod
    def from_counts(cls, cloud, n_G, n_GT, instance_index=None):
        n_G = np.asarray(n_G, dtype=np.int64)
        n_GT = np.asarray(n_GT, dtype=np.int64)
        p = np.full(len(n_G), UNEXPLORED)
        hit = n_G > 0
        p[hit] = n_GT[hit] / n_G[hit]
        return cls(cloud, n_G, n_GT, p, instance_index)

    def save(self, base_path):
        """Write base_path.ply (cloud + per-vertex scalars) and base_path.json."""
        write_ply(base_path + ".ply", self.cloud.points, normals=self.cloud.normals,
                  attributes={"p_TgG": self.p_TgG, "n_G": self.n_G,
                              "n_GT": self.n_GT})
        doc = {
            "schema_version": SCHEMA_VERSION,
            "kind": "contact_heatmap",
            "instance_index": self.instance_index,
            "points": len(self.p_TgG),
            "total_n_G": int(self.n_G.sum()),
            "total_n_GT": int(self.n_GT.sum()),
        }
        tmp = base_path + ".json.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, base_path + ".json")

    @classmethod
    def load(cls, base_path):
        with open(base_path + ".json", "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("kind") != "contact_heatmap":
            raise ValueError(f"{base_path}: not a contact heatmap")
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"{base_path}: unsupported schema")
        d = read_ply(base_path + ".ply")
        cloud = PointCloud(d["points"], d["normals"])
        a = d["attributes"]
        return cls(cloud, a["n_G"], a["n_GT"], a["p_TgG"], doc["instance_index"])


@dataclass
class PlacementTask:
    """A receptacle with a declared insertion path.

    path holds object poses in the receptacle frame, in insertion order; the
    last entry is the rest pose. The receptacle frame has +z up, so rest
    stability is judged by the center of mass projected onto the xy plane.
    """

    receptacle: object
    path: tuple
    tolerance: float = 0.002
    name: str = "task"

    def __post_init__(self):
        self.path = tuple(self.path)
        if not self.path:
            raise ValueError("insertion path is empty")
        check_positive(self.tolerance, "tolerance")

    @property
    def rest_pose(self):
        return self.path[-1]

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        save_mesh(os.path.join(directory, "receptacle.obj"), self.receptacle)
        doc = {
            "schema_version": SCHEMA_VERSION,
            "kind": "placement_task",
            "name": self.name,
            "receptacle": "receptacle.obj",
            "path": [p.to_dict() for p in self.path],
            "tolerance": self.tolerance,
        }
        tmp = os.path.join(directory, "task.json.tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, os.path.join(directory, "task.json"))

    @classmethod
    def load(cls, directory):
        with open(os.path.join(directory, "task.json"), "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("kind") != "placement_task":
            raise ValueError(f"{directory}: not a placement task")
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"{directory}: unsupported schema")
        receptacle = load_mesh(os.path.join(directory, doc["receptacle"]))
        path = tuple(Pose6D.from_dict(p) for p in doc["path"])
        return cls(receptacle, path, doc["tolerance"], doc["name"])


def _support_contains(points_xy, com_xy, tolerance):
    """Center-of-mass containment in the support region, with tolerance slack.

    Degenerate supports (collinear or single contacts) fall back to distance
    from the contact set.
    """
    if len(points_xy) >= 3:
        try:
            hull = ConvexHull(points_xy)
            slack = hull.equations[:, :2] @ com_xy + hull.equations[:, 2]
            return float(slack.max()) <= tolerance
        except QhullError:
            pass
    d = np.linalg.norm(points_xy - com_xy, axis=1)
    return float(d.min()) <= tolerance


def placement_check(obj, grasp, gripper, task, closing_width=None):
    """Kinematic placement rehearsal.

    True iff the gripper, rigidly holding the object at the grasp pose with
    fingers at closing_width (the grasp's width when not given), clears the
    receptacle at every pose along the insertion path, and at the rest pose
    the object neither penetrates the receptacle beyond the task tolerance
    nor balances its center of mass outside the support contacts.
    """
    width = min(grasp.width if closing_width is None else closing_width,
                gripper.max_opening)
    meshes = gripper.meshes_at(width)
    for obj_pose in task.path:
        gripper_pose = obj_pose.compose(grasp.pose)
        for m in meshes:
            if mesh_collision(m, task.receptacle, pose_a=gripper_pose):
                return False

    rest = task.rest_pose
    samples = np.vstack([obj.vertices, obj.triangles.mean(axis=1)])
    pts = rest.apply(samples)
    sd = signed_distance(task.receptacle, pts)
    if float(sd.min()) < -task.tolerance:
        return False
    support = pts[sd <= task.tolerance]
    if len(support) == 0:
        return False
    com = rest.apply(obj.volume_centroid)[0]
    return _support_contains(support[:, :2], com[:2], task.tolerance)


def discover_heatmap(obj, cloud, grasps, gripper, task, config=None):
    """Count-based contact statistics from grasp and placement trials.

    Per grasp: a failed lift oracle contributes nothing; a successful one
    increments n_G at its contact points and, when the placement rehearsal
    also succeeds, n_GT at the same points. Order of grasps cannot matter.
    """
    config = config or GraspConfig()
    n = len(cloud.points)
    n_G = np.zeros(n, dtype=np.int64)
    n_GT = np.zeros(n, dtype=np.int64)
    if not grasps:
        warnings.warn("no grasps given; heatmap is all-unexplored")
        return ContactHeatmap.from_counts(cloud, n_G, n_GT)
    for grasp in grasps:
        outcome = grasp_oracle(obj, cloud, grasp, gripper, config)
        if not outcome.success:
            continue
        n_G[outcome.contact_indices] += 1
        if placement_check(obj, grasp, gripper, task,
                           closing_width=outcome.closing_width):
            n_GT[outcome.contact_indices] += 1
    return ContactHeatmap.from_counts(cloud, n_G, n_GT)


def aggregate_heatmaps(per_instance, canon, mode="mean"):
    """Combine instance heatmaps onto the canonical template.

    Each heatmap's cloud is normalized to its unit cube and carried through
    its instance registration; values land on the nearest template point.
    mode "mean" averages the contributed p values per point; mode "pool"
    recomputes p from the summed counts instead, weighting instances by how
    often they were grasped. Template points reached by no instance keep the
    unexplored 0.5. Counts are summed either way.
    """
    if mode not in ("mean", "pool"):
        raise ValueError(f"unknown aggregation mode {mode!r}")
    tmpl = canon.template.points
    sums = np.zeros(len(tmpl))
    hits = np.zeros(len(tmpl), dtype=np.int64)
    n_G = np.zeros(len(tmpl), dtype=np.int64)
    n_GT = np.zeros(len(tmpl), dtype=np.int64)
    tree = canon.template_tree()
    for k, hm in enumerate(per_instance):
        idx = hm.instance_index if hm.instance_index is not None else k
        if idx not in canon.instance_poses:
            raise ValueError(f"heatmap instance {idx} not in the canonical model")
        normalized = normalize_unit_cube(hm.cloud)
        in_canon = canon.instance_poses[idx].apply(normalized.points)
        nearest = tree.query(in_canon)[1]
        np.add.at(sums, nearest, hm.p_TgG)
        np.add.at(hits, nearest, 1)
        np.add.at(n_G, nearest, hm.n_G)
        np.add.at(n_GT, nearest, hm.n_GT)
    p = np.full(len(tmpl), UNEXPLORED)
    if mode == "mean":
        touched = hits > 0
        p[touched] = sums[touched] / hits[touched]
    else:
        touched = n_G > 0
        p[touched] = n_GT[touched] / n_G[touched]
    cloud = PointCloud(tmpl.copy(), None if canon.template.normals is None
                       else canon.template.normals.copy())
    return ContactHeatmap(cloud, n_G, n_GT, p)


def task_relevance(grasp, pose, canon, heatmap, gripper, config=None,
                   no_contact_relevance=0.0):
    """Mean heatmap value over the model-predicted contact points.

    The canonical template is carried into the camera frame by the estimated
    pose and the gripper is closed against it at the grasp pose, using the
    same contact identification as the lift oracle. A grasp that closes on
    no template points is unrankable and returns no_contact_relevance.
    """
    config = config or GraspConfig()
    if len(heatmap.p_TgG) != len(canon.template.points):
        raise ValueError("heatmap is not aligned with the canonical template")
    pts_cam = pose.apply(canon.template.points)
    pts_g = grasp.pose.inverse().apply(pts_cam)
    closed = _close_fingers(gripper, pts_g, gripper.max_opening,
                            config.contact_eps)
    if closed is None:
        return float(no_contact_relevance)
    _, _, c_pos, c_neg = closed
    contacts = np.unique(np.concatenate([c_pos, c_neg]))
    if len(contacts) == 0:
        return float(no_contact_relevance)
    return float(heatmap.p_TgG[contacts].mean())


def joint_score(p_g, p_tgg):
    """Joint task-and-grasp success score: the product of the two terms."""
    for name, v in (("p_g", p_g), ("p_tgg", p_tgg)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    return float(p_g) * float(p_tgg)
