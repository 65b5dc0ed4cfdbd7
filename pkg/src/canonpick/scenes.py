"""Synthetic clutter scenes: geometric settling, a virtual depth camera, labels.

Objects are dropped into a bin one at a time and lowered to first contact,
with a few random jiggles to find a lower rest pose. No dynamics: piles are
shallower than physically settled ones, which downstream consumers do not
depend on. The renderer is a pinhole camera ray cast against every mesh,
producing a depth image, the back-projected scene cloud in the camera frame,
and exact labels (instance ids, center offsets, unit-cube coordinates, 9-DoF
poses) derived from the known object poses.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .geometry.cloud import PointCloud
from .geometry.collision import mesh_collision
from .geometry.io import read_pfm, write_pfm, write_ply, read_ply
from .geometry.mesh import save_mesh
from .geometry.poses import Pose6D, Pose9D, quat_to_rotation
from .geometry.raycast import raycast_mesh
from .geometry.sdf import winding_number
from .validation import as_vector3, check_positive

__all__ = [
    "CameraModel", "SceneInstance", "Scene", "DepthImage", "GroundTruth",
    "SceneParams", "generate_scene", "render_depth", "write_scene_dir",
    "load_scene_dir", "load_scene_obs", "generate_dataset",
]

SCHEMA_VERSION = 1

BACKGROUND_ID = -1      # bin surface
EMPTY_ID = -2           # pixel with no return


@dataclass
class CameraModel:
    """Pinhole intrinsics; x right, y down, z forward (optical axis)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        check_positive(self.fx, "fx")
        check_positive(self.fy, "fy")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")

    def pixel_rays(self):
        """(H*W, 3) ray directions with unit z, row-major pixel order."""
        u = np.arange(self.width) + 0.0
        v = np.arange(self.height) + 0.0
        uu, vv = np.meshgrid(u, v)
        x = (uu - self.cx) / self.fx
        y = (vv - self.cy) / self.fy
        return np.column_stack([x.ravel(), y.ravel(),
                                np.ones(self.width * self.height)])

    def project(self, points):
        """Camera-frame points -> (u, v) pixel coordinates (float)."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if np.any(p[:, 2] <= 0):
            raise ValueError("cannot project points at or behind the camera")
        return np.column_stack([p[:, 0] / p[:, 2] * self.fx + self.cx,
                                p[:, 1] / p[:, 2] * self.fy + self.cy])

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class SceneInstance:
    model_id: str
    pose: Pose6D
    scale: np.ndarray

    def __post_init__(self):
        self.scale = as_vector3(self.scale)
        if np.any(self.scale <= 0):
            raise ValueError("instance scale must be positive")

    def mesh(self, models):
        return models[self.model_id].scaled(self.scale)

    def to_dict(self):
        return {"model": self.model_id, "pose": self.pose.to_dict(),
                "scale": [float(s) for s in self.scale]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["model"], Pose6D.from_dict(d["pose"]), d["scale"])


@dataclass
class Scene:
    bin_mesh: TriMesh
    bin_pose: Pose6D
    instances: list
    camera: CameraModel
    camera_pose: Pose6D          # camera frame -> world
    seed: int

    def world_meshes(self, models):
        """Bin plus instance meshes in the world frame, instance order kept."""
        out = [self.bin_mesh.transformed(self.bin_pose)]
        out += [inst.mesh(models).transformed(inst.pose)
                for inst in self.instances]
        return out

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "scene",
            "seed": self.seed,
            "bin": {"model": "bin", "pose": self.bin_pose.to_dict()},
            "camera": {"intrinsics": self.camera.to_dict(),
                       "pose": self.camera_pose.to_dict()},
            "instances": [inst.to_dict() for inst in self.instances],
        }

    def save(self, path):
        _write_json(path, self.to_dict())

    @classmethod
    def load(cls, path, bin_mesh):
        with open(path, "r", encoding="utf-8") as fh:
            d = json.load(fh)
        if d.get("kind") != "scene":
            raise ValueError(f"{path} is not a scene file")
        return cls(bin_mesh=bin_mesh,
                   bin_pose=Pose6D.from_dict(d["bin"]["pose"]),
                   instances=[SceneInstance.from_dict(i) for i in d["instances"]],
                   camera=CameraModel.from_dict(d["camera"]["intrinsics"]),
                   camera_pose=Pose6D.from_dict(d["camera"]["pose"]),
                   seed=int(d["seed"]))


@dataclass
class DepthImage:
    depth: np.ndarray            # (H, W) meters, 0 = no return
    camera: CameraModel

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.depth.shape != (self.camera.height, self.camera.width):
            raise ValueError("depth shape does not match intrinsics")
        if not np.all(np.isfinite(self.depth)) or np.any(self.depth < 0):
            raise ValueError("depths must be finite and non-negative")

    def save(self, base):
        write_pfm(str(base) + ".pfm", self.depth.astype(np.float32))
        _write_json(str(base) + ".json",
                    {"schema_version": SCHEMA_VERSION, "kind": "depth",
                     "intrinsics": self.camera.to_dict()})

    @classmethod
    def load(cls, base):
        with open(str(base) + ".json", "r", encoding="utf-8") as fh:
            d = json.load(fh)
        depth = np.asarray(read_pfm(str(base) + ".pfm"), dtype=np.float64)
        return cls(depth, CameraModel.from_dict(d["intrinsics"]))


@dataclass
class GroundTruth:
    """Labels for one rendered scene; point arrays follow the scene cloud."""

    pixel_ids: np.ndarray        # (H, W) int32: instance index, -1 bin, -2 empty
    point_ids: np.ndarray        # (N,)
    offsets: np.ndarray          # (N, 3), point + offset = instance center
    canonical: np.ndarray        # (N, 3) in [0,1]^3, zero for background
    pixel_index: np.ndarray      # (N,) flat row-major source pixel
    poses: dict                  # instance index -> Pose9D (canonical->camera)
    centers: np.ndarray          # (K, 3) instance centers, camera frame

    def foreground(self):
        return np.flatnonzero(self.point_ids >= 0)


@dataclass
class SceneParams:
    """Knobs for settling, the camera draw, and depth corruption."""

    scale_range: tuple = (0.9, 1.15)       # per-axis, sampled independently
    aniso_axis_range: tuple | None = None  # one random axis drawn from here instead
    drop_height: float = 0.12
    xy_margin: float = 0.65                # usable fraction of the bin interior
    place_attempts: int = 100
    scene_retries: int = 10
    jiggles: int = 20
    jiggle_rot: float = 0.12               # rad
    jiggle_slide: float = 0.004
    jiggle_lift: float = 0.003
    descend_step: float = 0.004
    descend_tol: float = 1e-5
    camera_dist: tuple = (0.42, 0.58)
    camera_cone_deg: float = 22.0
    look_jitter: float = 0.01
    depth_sigma: float = 0.0
    dropout: float = 0.0


def default_camera():
    """240x180 camera sized so a desk bin fills most of the image."""
    return CameraModel(fx=270.0, fy=270.0, cx=119.5, cy=89.5,
                       width=240, height=180)


def _write_json(path, payload):
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return quat_to_rotation(q)


def _rodrigues(axis_angle):
    v = np.asarray(axis_angle, dtype=np.float64)
    ang = np.linalg.norm(v)
    if ang < 1e-12:
        return np.eye(3)
    k = v / ang
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(ang) * kx + (1 - np.cos(ang)) * (kx @ kx)


def _collides(mesh, pose, obstacles):
    return any(mesh_collision(mesh, om, pose_a=pose) for om in obstacles)


def _descend(mesh, pose, obstacles, params):
    """Lower along -z to just above first contact. Start must be free."""
    lo = 0.0
    hi = None
    dz = params.descend_step
    while hi is None:
        cand = Pose6D(pose.rotation, pose.translation - [0, 0, dz])
        if _collides(mesh, cand, obstacles):
            hi = dz
        else:
            lo = dz
            dz += params.descend_step
            if dz > 1.0:
                raise RuntimeError("instance fell through the scene")
    while hi - lo > params.descend_tol:
        mid = 0.5 * (lo + hi)
        cand = Pose6D(pose.rotation, pose.translation - [0, 0, mid])
        if _collides(mesh, cand, obstacles):
            hi = mid
        else:
            lo = mid
    return Pose6D(pose.rotation, pose.translation - [0, 0, lo])


def _settle(mesh, pose, obstacles, rng, params):
    pose = _descend(mesh, pose, obstacles, params)
    for _ in range(params.jiggles):
        rot = rng.normal(size=3) * params.jiggle_rot
        slide = rng.normal(size=2) * params.jiggle_slide
        cand = Pose6D(_rodrigues(rot) @ pose.rotation,
                      pose.translation + [slide[0], slide[1], params.jiggle_lift])
        if _collides(mesh, cand, obstacles):
            continue
        cand = _descend(mesh, cand, obstacles, params)
        if cand.translation[2] < pose.translation[2] - 1e-6:
            pose = cand
    return pose


def _bin_interior(bin_mesh):
    """Inner (x, y) half-extents of an open bin centered on the origin.

    Wall-top vertices sit on both faces of each wall; the inner face is the
    smallest |x| (and |y|) among them.
    """
    verts = bin_mesh.vertices
    top = verts[:, 2].max()
    wall = verts[verts[:, 2] > top - 1e-9]
    if len(wall) < 4 or top <= 1e-6:
        raise ValueError("bin mesh has no recognizable walls")
    return np.abs(wall[:, :2]).min(axis=0)


def _inside_bin(mesh, pose, half_xy):
    v = pose.apply(mesh.vertices)
    if v[:, 2].min() < -1e-4:
        return False
    return bool(np.all(np.abs(v[:, :2]).max(axis=0) <= half_xy - 1e-4))


def _sample_scale(rng, params):
    lo, hi = params.scale_range
    s = rng.uniform(lo, hi, size=3)
    if params.aniso_axis_range is not None:
        axis = int(rng.integers(3))
        s[axis] = rng.uniform(*params.aniso_axis_range)
    return s


def _sample_camera_pose(rng, params, focus):
    """Camera in a cone above the bin, optical axis through the focus point."""
    cone = np.radians(params.camera_cone_deg)
    ang = np.arccos(1 - rng.uniform() * (1 - np.cos(cone)))  # area-uniform
    azim = rng.uniform(0, 2 * np.pi)
    dist = rng.uniform(*params.camera_dist)
    offset = dist * np.array([np.sin(ang) * np.cos(azim),
                              np.sin(ang) * np.sin(azim),
                              np.cos(ang)])
    target = focus + rng.uniform(-params.look_jitter, params.look_jitter, size=3)
    position = target + offset
    forward = target - position
    forward /= np.linalg.norm(forward)
    roll = rng.uniform(0, 2 * np.pi)
    hint = np.array([1.0, 0.0, 0.0])
    if abs(forward @ hint) > 0.95:
        hint = np.array([0.0, 1.0, 0.0])
    right = hint - (hint @ forward) * forward
    right /= np.linalg.norm(right)
    right = np.cos(roll) * right + np.sin(roll) * np.cross(forward, right)
    down = np.cross(forward, right)
    return Pose6D(np.column_stack([right, down, forward]), position)


def generate_scene(models, count_range=(4, 6), bin_mesh=None, camera=None,
                   seed=0, params=None):
    """Drop a random draw of instances into the bin and settle them.

    models: dict model-id -> TriMesh in its own frame. Each instance gets a
    per-axis scale from params, a uniform random orientation, and a descent
    to first contact with the bin or earlier instances followed by up to
    params.jiggles accepted-if-lower random nudges. A scene whose instance
    cannot be placed collision-free within params.place_attempts restarts
    with the next sub-seed; after params.scene_retries restarts it raises.
    """
    if not models:
        raise ValueError("need at least one model")
    lo, hi = int(count_range[0]), int(count_range[1])
    if lo < 1 or hi < lo:
        raise ValueError("count_range must satisfy 1 <= lo <= hi")
    params = params or SceneParams()
    bin_mesh = bin_mesh if bin_mesh is not None else _default_bin()
    camera = camera or default_camera()
    half_xy = _bin_interior(bin_mesh)
    model_ids = sorted(models)

    last_err = None
    for sub in range(params.scene_retries):
        rng = np.random.default_rng([seed, sub])
        try:
            instances = _fill_bin(models, model_ids, (lo, hi), bin_mesh,
                                  half_xy, rng, params)
        except _PlacementFailure as err:
            last_err = err
            continue
        focus = np.array([0.0, 0.0, 0.02])
        cam_pose = _sample_camera_pose(rng, params, focus)
        scene = Scene(bin_mesh=bin_mesh, bin_pose=Pose6D(),
                      instances=instances, camera=camera,
                      camera_pose=cam_pose, seed=seed)
        _verify_scene(scene, models)
        return scene
    raise RuntimeError(f"scene generation failed after {params.scene_retries} "
                       f"sub-seeds: {last_err}")


class _PlacementFailure(Exception):
    pass


def _fill_bin(models, model_ids, count_range, bin_mesh, half_xy, rng, params):
    count = int(rng.integers(count_range[0], count_range[1] + 1))
    obstacles = [bin_mesh]
    instances = []
    span = params.xy_margin * half_xy
    for _ in range(count):
        mid = model_ids[int(rng.integers(len(model_ids)))]
        scale = _sample_scale(rng, params)
        mesh = models[mid].scaled(scale)
        placed = None
        for _ in range(params.place_attempts):
            rot = _random_rotation(rng)
            xy = rng.uniform(-span, span)
            v = mesh.vertices @ rot.T
            t = np.array([xy[0] - 0.5 * (v[:, 0].min() + v[:, 0].max()),
                          xy[1] - 0.5 * (v[:, 1].min() + v[:, 1].max()),
                          params.drop_height - v[:, 2].min()])
            pose = Pose6D(rot, t)
            if _collides(mesh, pose, obstacles):
                continue
            pose = _settle(mesh, pose, obstacles, rng, params)
            if not _inside_bin(mesh, pose, half_xy):
                continue
            placed = pose
            break
        if placed is None:
            raise _PlacementFailure(f"could not place {mid}")
        instances.append(SceneInstance(mid, placed, scale))
        obstacles.append(mesh.transformed(placed))
    return instances


def _default_bin():
    from .assets import make_open_box
    return make_open_box((0.24, 0.24), 0.06)


def _verify_scene(scene, models):
    """Settled scenes must be collision-free; checked from scratch."""
    meshes = scene.world_meshes(models)
    for i in range(len(meshes)):
        for j in range(i + 1, len(meshes)):
            if mesh_collision(meshes[i], meshes[j]):
                raise RuntimeError(
                    f"settled scene has a collision between meshes {i} and {j}")


def render_depth(scene, models, params=None, seed=0):
    """Ray-cast the scene into (DepthImage, scene cloud, GroundTruth).

    The cloud is the back-projection of every pixel with a return, in the
    camera frame, row-major pixel order. Labels come from the known poses:
    instance ids, offsets to each instance's surface centroid, per-axis
    unit-cube coordinates of the model, and the exact canonical-to-camera
    9-DoF pose per instance. Optional Gaussian depth noise and dropout are
    applied after labeling, so offsets stay exact by construction.
    """
    params = params or SceneParams()
    cam = scene.camera
    cam_pose = scene.camera_pose
    meshes = scene.world_meshes(models)
    for k, m in enumerate(meshes):
        if winding_number(m, cam_pose.translation[None, :])[0] > 0.5:
            raise ValueError(f"camera is inside scene mesh {k}")

    dirs_cam = cam.pixel_rays()
    dirs_world = dirs_cam @ cam_pose.rotation.T
    n_pix = len(dirs_world)
    depth_flat = np.full(n_pix, np.inf)
    hit_mesh = np.full(n_pix, -1, dtype=np.int64)
    for k, m in enumerate(meshes):
        t, _ = raycast_mesh(cam_pose.translation, dirs_world, m, t_min=1e-6)
        closer = t < depth_flat
        depth_flat[closer] = t[closer]
        hit_mesh[closer] = k
    hit = hit_mesh >= 0
    depth_flat = np.where(hit, depth_flat, 0.0)

    pixel_ids = np.where(hit, hit_mesh - 1, EMPTY_ID).astype(np.int32)
    pix = np.flatnonzero(hit)
    points = dirs_cam[pix] * depth_flat[pix][:, None]
    point_ids = (hit_mesh[pix] - 1).astype(np.int32)

    offsets = np.zeros((len(pix), 3))
    canonical = np.zeros((len(pix), 3))
    centers = np.zeros((len(scene.instances), 3))
    poses = {}
    for k, inst in enumerate(scene.instances):
        model = models[inst.model_id]
        scaled = model.scaled(inst.scale)
        center_world = inst.pose.apply(scaled.surface_centroid[None, :])[0]
        centers[k] = cam_pose.apply_inverse(center_world[None, :])[0]
        sel = point_ids == k
        if np.any(sel):
            offsets[sel] = centers[k] - points[sel]
            p_world = cam_pose.apply(points[sel])
            p_model = inst.pose.apply_inverse(p_world) / inst.scale
            amin, amax = model.aabb
            ext = np.maximum(amax - amin, 1e-12)
            canonical[sel] = np.clip((p_model - amin) / ext, 0.0, 1.0)
        poses[k] = _canonical_to_camera(model, inst, cam_pose)

    rng = np.random.default_rng([seed, 977])
    if params.depth_sigma > 0:
        noise = rng.normal(0.0, params.depth_sigma, size=n_pix)
        depth_flat = np.where(hit, np.maximum(depth_flat + noise, 1e-6), 0.0)
    if params.dropout > 0:
        drop = hit & (rng.uniform(size=n_pix) < params.dropout)
        depth_flat = np.where(drop, 0.0, depth_flat)
        pixel_ids = np.where(drop, EMPTY_ID, pixel_ids).astype(np.int32)
        keep = ~drop[pix]
        pix, points = pix[keep], points[keep]
        point_ids, offsets = point_ids[keep], offsets[keep]
        canonical = canonical[keep]

    depth_img = DepthImage(depth_flat.reshape(cam.height, cam.width), cam)
    gt = GroundTruth(pixel_ids=pixel_ids.reshape(cam.height, cam.width),
                     point_ids=point_ids, offsets=offsets, canonical=canonical,
                     pixel_index=pix.astype(np.int64), poses=poses,
                     centers=centers)
    return depth_img, PointCloud(points), gt


def _canonical_to_camera(model, inst, cam_pose):
    """Exact 9-DoF pose taking the model's unit cube to the camera frame."""
    amin, amax = model.aabb
    ext = np.maximum(amax - amin, 1e-12)
    rot_wc = cam_pose.rotation.T
    rotation = rot_wc @ inst.pose.rotation
    translation = rot_wc @ (inst.pose.rotation @ (inst.scale * amin)
                            + inst.pose.translation - cam_pose.translation)
    return Pose9D(rotation, translation, inst.scale * ext)


# ---------------------------------------------------------------------------
# Dataset directory layout


def write_scene_dir(dirpath, scene, depth, cloud, gt):
    os.makedirs(dirpath, exist_ok=True)
    scene.save(os.path.join(dirpath, "scene.json"))
    depth.save(os.path.join(dirpath, "depth"))
    ids = {str(k): {"model": scene.instances[k].model_id,
                    "scale": [float(s) for s in scene.instances[k].scale],
                    "pose9d": gt.poses[k].to_dict(),
                    "center": [float(c) for c in gt.centers[k]]}
           for k in sorted(gt.poses)}
    _write_json(os.path.join(dirpath, "gt_poses.json"),
                {"schema_version": SCHEMA_VERSION, "kind": "scene_gt",
                 "camera_pose": scene.camera_pose.to_dict(), "instances": ids})
    write_ply(os.path.join(dirpath, "gt.ply"), cloud.points,
              attributes={
                  "instance_id": gt.point_ids.astype(np.int32),
                  "pixel_index": gt.pixel_index.astype(np.int32),
                  "offset_x": gt.offsets[:, 0], "offset_y": gt.offsets[:, 1],
                  "offset_z": gt.offsets[:, 2],
                  "canon_x": gt.canonical[:, 0], "canon_y": gt.canonical[:, 1],
                  "canon_z": gt.canonical[:, 2]})


def load_scene_obs(dirpath):
    """Observation-side view of a scene directory, no meshes required.

    Returns (camera_pose, DepthImage, cloud, GroundTruth) — everything the
    planner consumes at test time.
    """
    depth = DepthImage.load(os.path.join(dirpath, "depth"))
    data = read_ply(os.path.join(dirpath, "gt.ply"))
    pts = data["points"]
    att = data["attributes"]
    with open(os.path.join(dirpath, "gt_poses.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    camera_pose = Pose6D.from_dict(meta["camera_pose"])
    poses = {int(k): Pose9D.from_dict(v["pose9d"])
             for k, v in meta["instances"].items()}
    centers = np.array([meta["instances"][str(k)]["center"]
                        for k in sorted(poses)]).reshape(-1, 3)
    point_ids = att["instance_id"].astype(np.int32)
    pixel_index = att["pixel_index"].astype(np.int64)
    offsets = np.column_stack([att["offset_x"], att["offset_y"], att["offset_z"]])
    canonical = np.column_stack([att["canon_x"], att["canon_y"], att["canon_z"]])
    h, w = depth.camera.height, depth.camera.width
    pixel_ids = np.full(h * w, EMPTY_ID, dtype=np.int32)
    pixel_ids[pixel_index] = point_ids
    gt = GroundTruth(pixel_ids=pixel_ids.reshape(h, w), point_ids=point_ids,
                     offsets=offsets, canonical=canonical,
                     pixel_index=pixel_index, poses=poses, centers=centers)
    return camera_pose, depth, PointCloud(pts), gt


def load_scene_dir(dirpath, models, bin_mesh):
    """Rebuild (Scene, DepthImage, cloud, GroundTruth) from a scene directory."""
    scene = Scene.load(os.path.join(dirpath, "scene.json"), bin_mesh)
    _, depth, cloud, gt = load_scene_obs(dirpath)
    return scene, depth, cloud, gt


def generate_dataset(models, out_dir, n_scenes, count_range=(4, 6),
                     bin_mesh=None, camera=None, seed=0, params=None):
    """Write models/ and scenes/scene_NNNN/ under out_dir; returns scene count."""
    check_positive(n_scenes, "n_scenes")
    params = params or SceneParams()
    bin_mesh = bin_mesh if bin_mesh is not None else _default_bin()
    os.makedirs(os.path.join(out_dir, "models"), exist_ok=True)
    for mid in sorted(models):
        save_mesh(os.path.join(out_dir, "models", f"{mid}.obj"), models[mid])
    save_mesh(os.path.join(out_dir, "models", "bin.obj"), bin_mesh)
    for i in range(n_scenes):
        scene = generate_scene(models, count_range, bin_mesh, camera,
                               seed=seed + i, params=params)
        depth, cloud, gt = render_depth(scene, models, params, seed=seed + i)
        write_scene_dir(os.path.join(out_dir, "scenes", f"scene_{i:04d}"),
                        scene, depth, cloud, gt)
    _write_json(os.path.join(out_dir, "dataset.json"),
                {"schema_version": SCHEMA_VERSION, "kind": "dataset",
                 "models": sorted(models), "n_scenes": int(n_scenes),
                 "seed": int(seed),
                 "count_range": [int(count_range[0]), int(count_range[1])]})
    return n_scenes
