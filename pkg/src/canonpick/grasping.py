"""Antipodal grasp sampling, the quasi-static grasp oracle, neighborhood
quality scoring, the canonical grasp codebook, and hybrid proposal
generation.

The oracle replaces a physics lift test: place the open gripper, close the
fingers along the closing axis until they meet the surface cloud, then ask
whether any pair of opposing contacts achieves two-finger force closure
under Coulomb friction.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .assets import surface_cloud
from .canonical import normalize_unit_cube
from .geometry.cloud import PointCloud, estimate_normals
from .geometry.collision import mesh_collision
from .geometry.poses import Pose6D, quat_to_rotation, rotation_to_quat
from .geometry.sdf import signed_distance, unsigned_distance, winding_number
from .validation import as_points, check_positive

__all__ = [
    "Grasp", "GraspOutcome", "GraspConfig", "PerturbParams", "GraspCodebook",
    "sample_grasps", "grasp_oracle", "score_grasp", "build_codebook",
    "grasp_to_canonical", "grasp_from_canonical", "propose_grasps",
]

SCHEMA_VERSION = 1


@dataclass
class PerturbParams:
    sigma_t: float = 0.003        # m, per axis
    sigma_r_deg: float = 5.0      # axis-angle magnitude


@dataclass
class GraspConfig:
    antipodal_tol_deg: float = 15.0
    clearance: float = 0.002
    contact_eps: float = 0.001
    friction_mu: float | None = None   # None = use the gripper's
    ray_radius: float = 0.006          # lateral catch radius of the antipodal cast
    max_approach_angle_deg: float = 75.0
    approach_sweep: float = 0.03       # retreat distance checked for scene collisions
    sweep_steps: int = 4
    keep_threshold: float = 0.5
    score_samples: int = 50
    perturb: PerturbParams = field(default_factory=PerturbParams)


@dataclass
class Grasp:
    pose: Pose6D
    width: float
    quality: float = 0.0
    origin: str = "direct"            # "direct" or "codebook"

    def __post_init__(self):
        if self.width < 0:
            raise ValueError("grasp width must be non-negative")
        if not 0.0 <= self.quality <= 1.0:
            raise ValueError("grasp quality must lie in [0, 1]")

    def jaw_endpoints(self, closing_axis=np.array([1.0, 0.0, 0.0])):
        """The two inner-face centers in the grasp's parent frame."""
        axis = self.pose.rotation @ closing_axis
        return (self.pose.translation + axis * self.width / 2,
                self.pose.translation - axis * self.width / 2)

    def to_dict(self):
        return {
            "quat_xyzw": rotation_to_quat(self.pose.rotation).tolist(),
            "translation": self.pose.translation.tolist(),
            "width": self.width,
            "quality": self.quality,
            "origin": self.origin,
        }

    @classmethod
    def from_dict(cls, d):
        pose = Pose6D(quat_to_rotation(d["quat_xyzw"]), np.asarray(d["translation"]))
        return cls(pose, d["width"], d["quality"], d.get("origin", "direct"))


@dataclass
class GraspOutcome:
    success: bool
    contact_indices: np.ndarray
    closing_width: float

    def __post_init__(self):
        self.contact_indices = np.asarray(self.contact_indices, dtype=np.int64)
        if self.success != (len(self.contact_indices) > 0):
            raise ValueError("contacts must be non-empty exactly when successful")


def _orthonormal_basis(axis):
    helper = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(axis, helper)
    u /= np.linalg.norm(u)
    v = np.cross(axis, u)
    return u, v


def sample_grasps(cloud, gripper, n, seed=0, config=None, budget_factor=30):
    """Uniform antipodal grasp candidates on a surface cloud.

    For a picked point p1, the cast along -n1 collects points near the ray
    whose normal opposes n1 within the antipodal tolerance; the nearest such
    exit point becomes p2. Closing axis joins the pair, approach is a uniform
    direction in its orthogonal plane, width adds the clearance margin.
    Returns (grasps, report) where report counts attempts and rejections;
    fewer than n grasps is not an error.
    """
    config = config or GraspConfig()
    pts = as_points(cloud.points)
    if cloud.normals is None:
        raise ValueError("grasp sampling needs surface normals")
    normals = cloud.normals
    if len(pts) < 2:
        return [], {"attempts": 0, "no_pair": 0, "too_wide": 0}
    rng = np.random.default_rng(seed)
    cos_tol = np.cos(np.radians(config.antipodal_tol_deg))
    grasps = []
    report = {"attempts": 0, "no_pair": 0, "too_wide": 0}
    budget = budget_factor * n
    while len(grasps) < n and report["attempts"] < budget:
        report["attempts"] += 1
        # every attempt consumes the same draws, so rejection does not
        # desynchronize otherwise-identical runs (e.g. rescaled instances)
        i1 = int(rng.integers(len(pts)))
        phi = rng.uniform(0.0, 2 * np.pi)
        p1, n1 = pts[i1], normals[i1]
        rel = pts - p1
        t = rel @ -n1
        lateral2 = (rel**2).sum(axis=1) - t**2
        # faceted meshes put many normals exactly on the cone boundary and
        # many points at exactly equal ray depth; the 1e-12 windows keep the
        # selection stable against last-bit noise (e.g. rescaled instances)
        opposing = (normals @ (-n1)) >= cos_tol - 1e-12
        cand = opposing & (t > 1e-9) & (lateral2 <= config.ray_radius**2)
        cand[i1] = False
        idx = np.flatnonzero(cand)
        if len(idx) == 0:
            report["no_pair"] += 1
            continue
        near = idx[t[idx] <= t[idx].min() + 1e-12]
        i2 = near.min()
        p2 = pts[i2]
        width = float(np.linalg.norm(p2 - p1)) + config.clearance
        if width > gripper.max_opening:
            report["too_wide"] += 1
            continue
        x_axis = (p2 - p1) / np.linalg.norm(p2 - p1)
        u, v = _orthonormal_basis(x_axis)
        approach = np.cos(phi) * u + np.sin(phi) * v
        y_axis = np.cross(approach, x_axis)
        rot = np.column_stack([x_axis, y_axis, approach])
        grasps.append(Grasp(Pose6D(rot, (p1 + p2) / 2), width))
    return grasps, report


def _close_fingers(gripper, pts_g, width, contact_eps):
    """Symmetric closing against points given in the gripper frame.

    Returns (stop_pos, stop_neg, contacts_pos, contacts_neg): the inner-face
    x positions where each finger meets the cloud and the indices of points
    within contact_eps of each stopped finger.
    """
    lo, hi = gripper.closing_region(width)
    in_region = np.all((pts_g >= lo) & (pts_g <= hi), axis=1)
    x = pts_g[:, 0]
    pos_side = in_region & (x > 0)
    neg_side = in_region & (x < 0)
    if not pos_side.any() or not neg_side.any():
        return None
    stop_pos = float(x[pos_side].max())
    stop_neg = float(x[neg_side].min())
    width_pos = 2 * stop_pos
    width_neg = -2 * stop_neg
    fp = gripper.fingers_at(min(width_pos, gripper.max_opening))[0]
    fm = gripper.fingers_at(min(width_neg, gripper.max_opening))[1]
    cand = np.flatnonzero(in_region)
    d_pos = signed_distance(fp, pts_g[cand])
    d_neg = signed_distance(fm, pts_g[cand])
    contacts_pos = cand[d_pos <= contact_eps]
    contacts_neg = cand[d_neg <= contact_eps]
    return stop_pos, stop_neg, contacts_pos, contacts_neg


def _force_closure_pairs(c_pos, c_neg, pts, normals, mu):
    """Two-contact antipodal force closure: some pair (c1, c2) has the
    connecting line inside both friction cones."""
    if len(c_pos) == 0 or len(c_neg) == 0:
        return False
    cone = np.arctan(mu)
    p1 = pts[c_pos][:, None, :]
    p2 = pts[c_neg][None, :, :]
    d = p2 - p1
    norm = np.linalg.norm(d, axis=2)
    ok = norm > 1e-12
    with np.errstate(invalid="ignore", divide="ignore"):
        du = d / norm[..., None]
        a1 = np.arccos(np.clip((du * (-normals[c_pos][:, None, :])).sum(axis=2), -1, 1))
        a2 = np.arccos(np.clip((du * normals[c_neg][None, :, :]).sum(axis=2), -1, 1))
    return bool(np.any(ok & (a1 <= cone) & (a2 <= cone)))


def grasp_oracle(obj, cloud, grasp, gripper, config=None):
    """Quasi-static grasp evaluation.

    The gripper approaches fully open: the pre-close collision check and the
    closing sweep both start from max_opening, regardless of the grasp's
    commanded width. obj is the object TriMesh for the pre-close check, or
    None to fall back to a cloud-containment check (any cloud point strictly
    inside a gripper solid). Closing and force closure always use the cloud.
    """
    config = config or GraspConfig()
    mu = config.friction_mu if config.friction_mu is not None else gripper.friction_mu
    pts = as_points(cloud.points)
    if cloud.normals is None:
        raise ValueError("grasp oracle needs surface normals")
    width = gripper.max_opening

    if obj is not None:
        for m in gripper.meshes_at(width, pose=grasp.pose):
            if mesh_collision(m, obj):
                return GraspOutcome(False, [], 0.0)

    inv = grasp.pose.inverse()
    pts_g = inv.apply(pts)
    if obj is None:
        inside = np.zeros(len(pts_g), dtype=bool)
        near = np.linalg.norm(pts_g, axis=1) <= gripper.bounding_radius(width) + 1e-6
        for m in gripper.meshes_at(width):
            if near.any():
                inside[near] |= winding_number(m, pts_g[near]) > 0.5
        if inside.any():
            return GraspOutcome(False, [], 0.0)

    closed = _close_fingers(gripper, pts_g, width, config.contact_eps)
    if closed is None:
        return GraspOutcome(False, [], 0.0)
    stop_pos, stop_neg, c_pos, c_neg = closed
    normals_g = cloud.normals @ inv.rotation.T
    if not _force_closure_pairs(c_pos, c_neg, pts_g, normals_g, mu):
        return GraspOutcome(False, [], 0.0)
    contacts = np.unique(np.concatenate([c_pos, c_neg]))
    return GraspOutcome(True, contacts, stop_pos - stop_neg)


def score_grasp(obj, cloud, grasp, gripper, k=50, perturb=None, seed=0, config=None):
    """Empirical stability: fraction of k Gaussian pose perturbations (in the
    grasp's local frame) that still pass the oracle. The nominal pose is not
    counted."""
    check_positive(k, "k")
    config = config or GraspConfig()
    perturb = perturb or config.perturb
    rng = np.random.default_rng(seed)
    successes = 0
    sigma_r = np.radians(perturb.sigma_r_deg)
    for _ in range(k):
        dt = rng.normal(0.0, perturb.sigma_t, 3)
        rv = rng.normal(0.0, sigma_r, 3)
        r = grasp.pose.rotation @ Rotation.from_rotvec(rv).as_matrix()
        t = grasp.pose.translation + grasp.pose.rotation @ dt
        jittered = replace(grasp, pose=Pose6D(r, t))
        if grasp_oracle(obj, cloud, jittered, gripper, config).success:
            successes += 1
    return successes / k


# ---------------------------------------------------------------------------
# Codebook


class _InverseMap:
    """Inverse view of a scaled-rigid map, for grasp transport only. The
    rotation part of the inverse linear map is the transposed rotation."""

    def __init__(self, pose):
        self._pose = pose
        self.rotation = pose.rotation.T

    def apply(self, points):
        return self._pose.apply_inverse(points)


def _transfer_pose(grasp, maps):
    """Carry a grasp through a chain of scaled-rigid maps.

    The grasp center and jaw endpoints ride the full map; orientation is
    transported by the rotation part only and re-orthonormalized (the
    gripper stays rigid while its placement scales); width is the distance
    between the mapped endpoints, so anisotropic scaling is reflected.
    """
    e1, e2 = grasp.jaw_endpoints()
    pts = np.vstack([grasp.pose.translation, e1, e2])
    r = grasp.pose.rotation.copy()
    for m in maps:
        pts = m.apply(pts)
        r = m.rotation @ r
    u, _, vt = np.linalg.svd(r)
    r = u @ vt
    if np.linalg.det(r) < 0:
        r = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return replace(grasp, pose=Pose6D(r, pts[0]),
                   width=float(np.linalg.norm(pts[1] - pts[2])))


def grasp_to_canonical(grasp, normalization, instance_pose):
    """Instance frame -> canonical frame: unit-cube normalization followed by
    the instance's registration onto the template."""
    return _transfer_pose(grasp, [normalization, instance_pose])


def grasp_from_canonical(grasp, normalization, instance_pose):
    """Inverse of grasp_to_canonical; pose round-trips within float round-off."""
    return _transfer_pose(grasp, [_InverseMap(instance_pose),
                                  _InverseMap(normalization)])


@dataclass
class GraspCodebook:
    grasps: list
    category: str
    seed: int
    counts: dict

    def save(self, path):
        doc = {
            "schema_version": SCHEMA_VERSION,
            "kind": "grasp_codebook",
            "category": self.category,
            "seed": self.seed,
            "counts": self.counts,
            "grasps": [g.to_dict() for g in self.grasps],
        }
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("kind") != "grasp_codebook":
            raise ValueError(f"{path}: not a grasp codebook")
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"{path}: unsupported schema {doc.get('schema_version')}")
        return cls([Grasp.from_dict(g) for g in doc["grasps"]],
                   doc["category"], doc["seed"], doc["counts"])


def build_codebook(models, canon, gripper, n_per_instance=200, seed=0,
                   config=None, cloud_radius=0.003):
    """Sample, score, filter, and canonicalize grasps across the category.

    Each instance is re-sampled with a radius (and antipodal catch radius)
    scaled by its size relative to the template instance, and the generator
    restarts at the same seed per instance. Instances differing only by
    uniform scale therefore produce matching canonical grasp sets, which the
    unit-cube normalization collapses.
    """
    config = config or GraspConfig()
    if len(models) != len(canon.instance_poses):
        raise ValueError("model count does not match the canonical model")
    kept = []
    counts = {"sampled": 0, "scored": 0, "kept": 0, "skipped_instances": 0}
    sizes = [float(np.exp(np.log(m.extents).mean())) for m in models]
    ref = sizes[canon.template_index]
    for i, mesh in enumerate(models):
        rel = sizes[i] / ref
        cfg_i = replace(config, ray_radius=config.ray_radius * rel)
        cloud = surface_cloud(mesh, cloud_radius * rel, seed=seed)
        grasps, _ = sample_grasps(cloud, gripper, n_per_instance, seed=seed,
                                  config=cfg_i)
        counts["sampled"] += len(grasps)
        norm = normalize_unit_cube(cloud).normalization_pose()
        inst_kept = 0
        for j, g in enumerate(grasps):
            s = score_grasp(mesh, cloud, g, gripper, k=config.score_samples,
                            perturb=config.perturb, seed=seed + j, config=cfg_i)
            counts["scored"] += 1
            if s >= config.keep_threshold:
                scored = replace(g, quality=s, origin="codebook")
                kept.append(grasp_to_canonical(scored, norm,
                                               canon.instance_poses[i]))
                inst_kept += 1
        if inst_kept == 0:
            counts["skipped_instances"] += 1
            warnings.warn(f"instance {i}: no grasps above keep threshold")
    counts["kept"] = len(kept)
    if not kept:
        raise RuntimeError("codebook build failed: every instance yielded zero grasps")
    return GraspCodebook(kept, canon.category, seed, counts)


# ---------------------------------------------------------------------------
# Proposal generation


def _swept_gripper_hits(gripper, pose, scene_pts, config):
    """True if the fully open gripper, retreated stepwise along its approach
    axis, comes within clearance of (or contains) any scene point. Step
    spacing stays below the solids' approach-axis spans, so the stepped
    union equals the continuous swept volume for these box bodies."""
    width = gripper.max_opening
    r_bound = gripper.bounding_radius(width) + config.clearance
    approach_w = pose.rotation @ gripper.approach_axis
    meshes = gripper.meshes_at(width)
    steps = np.linspace(0.0, config.approach_sweep, config.sweep_steps)
    tree = cKDTree(scene_pts)
    for back in steps:
        center = pose.translation - approach_w * back
        near_idx = tree.query_ball_point(center, r_bound + 1e-9)
        if not near_idx:
            continue
        local = Pose6D(pose.rotation, center).inverse().apply(scene_pts[near_idx])
        for m in meshes:
            d = unsigned_distance(m, local)
            w = winding_number(m, local)
            if np.any((d <= config.clearance) | (w > 0.5)):
                return True
    return False


def propose_grasps(segment, pose, codebook, gripper, scene_cloud, n_direct=0,
                   seed=0, config=None, down_dir=(0.0, 0.0, 1.0)):
    """Hybrid grasp proposals in the camera frame.

    Codebook grasps ride the canonical->camera pose (position through the
    full affine, orientation rotation-only); direct grasps come from
    antipodal sampling on the visible segment. Both pass a reachability cone
    (approach within max_approach_angle of down_dir) and an open-gripper
    swept-volume check against the scene cloud. Returns (survivors, report);
    an empty list is valid and the report says why.
    """
    config = config or GraspConfig()
    down = np.asarray(down_dir, dtype=np.float64)
    down = down / np.linalg.norm(down)
    candidates = [_transfer_pose(g, [pose]) for g in codebook.grasps]
    if n_direct > 0:
        seg = segment
        if seg.normals is None:
            seg = PointCloud(seg.points, estimate_normals(seg.points))
        direct, _ = sample_grasps(seg, gripper, n_direct, seed=seed,
                                  config=config)
        candidates.extend(replace(g, origin="direct") for g in direct)

    cos_max = np.cos(np.radians(config.max_approach_angle_deg))
    scene_pts = as_points(scene_cloud.points if hasattr(scene_cloud, "points")
                          else scene_cloud)
    report = {"candidates": len(candidates), "too_wide": 0,
              "unreachable": 0, "collides": 0, "kept": 0}
    out = []
    for g in candidates:
        if g.width > gripper.max_opening:
            report["too_wide"] += 1
            continue
        approach = g.pose.rotation @ gripper.approach_axis
        if float(approach @ down) < cos_max:
            report["unreachable"] += 1
            continue
        if _swept_gripper_hits(gripper, g.pose, scene_pts, config):
            report["collides"] += 1
            continue
        out.append(g)
    report["kept"] = len(out)
    return out, report
