"""One config tree for every tunable in the pipeline.

Each section mirrors the knobs of one stage with plain scalars so the whole
tree serializes to a single readable JSON file. Loading rejects unknown keys
at every level: a typo in a config file fails loudly instead of silently
running with defaults. Adapter methods hand each stage its own parameter
object, so modules never import this file.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .canonical import AlignParams, RansacParams
from .grasping import GraspConfig, PerturbParams
from .scenes import CameraModel, SceneParams

__all__ = ["PipelineConfig", "CanonicalSection", "GraspSection",
           "AffordanceSection", "SceneSection", "SegmentationSection",
           "PlannerSection", "load_config", "save_config"]

SCHEMA_VERSION = 1


@dataclass
class CanonicalSection:
    sample_radius: float = 0.0015
    rotation_dirs: int = 24
    inplane_steps: int = 24
    refine_iters: int = 20
    refine_starts: int = 12
    accept_chamfer: float | None = None
    coarse_subsample: int = 500
    template_subsample: int = 400
    uniform_scale: bool = False

    def align_params(self, seed=0):
        return AlignParams(
            rotation_dirs=self.rotation_dirs, inplane_steps=self.inplane_steps,
            refine_iters=self.refine_iters, refine_starts=self.refine_starts,
            accept_chamfer=self.accept_chamfer,
            coarse_subsample=self.coarse_subsample,
            template_subsample=self.template_subsample,
            uniform_scale=self.uniform_scale, seed=seed,
            ransac=RansacParams(seed=seed))


@dataclass
class GraspSection:
    antipodal_tol_deg: float = 15.0
    clearance: float = 0.002
    contact_eps: float = 0.001
    friction_mu: float = 0.4
    ray_radius: float = 0.006
    max_approach_angle_deg: float = 75.0
    approach_sweep: float = 0.03
    sweep_steps: int = 4
    keep_threshold: float = 0.5
    score_samples: int = 50
    sigma_t: float = 0.003
    sigma_r_deg: float = 5.0
    n_per_instance: int = 200
    cloud_radius: float = 0.003

    def grasp_config(self):
        return GraspConfig(
            antipodal_tol_deg=self.antipodal_tol_deg, clearance=self.clearance,
            contact_eps=self.contact_eps, friction_mu=self.friction_mu,
            ray_radius=self.ray_radius,
            max_approach_angle_deg=self.max_approach_angle_deg,
            approach_sweep=self.approach_sweep, sweep_steps=self.sweep_steps,
            keep_threshold=self.keep_threshold,
            score_samples=self.score_samples,
            perturb=PerturbParams(sigma_t=self.sigma_t,
                                  sigma_r_deg=self.sigma_r_deg))


@dataclass
class AffordanceSection:
    discovery_grasps: int = 500
    placement_tolerance: float = 0.002
    aggregate_mode: str = "mean"          # or "pool": recompute from counts
    no_contact_relevance: float = 0.0


@dataclass
class SceneSection:
    count_lo: int = 4
    count_hi: int = 6
    scale_lo: float = 0.9
    scale_hi: float = 1.15
    aniso_lo: float | None = None         # one random axis drawn from this range
    aniso_hi: float | None = None
    drop_height: float = 0.12
    xy_margin: float = 0.65
    place_attempts: int = 100
    scene_retries: int = 10
    jiggles: int = 20
    jiggle_rot: float = 0.12
    jiggle_slide: float = 0.004
    jiggle_lift: float = 0.003
    descend_step: float = 0.004
    descend_tol: float = 1e-5
    camera_dist_lo: float = 0.42
    camera_dist_hi: float = 0.58
    camera_cone_deg: float = 22.0
    look_jitter: float = 0.01
    depth_sigma: float = 0.0
    dropout: float = 0.0
    fx: float = 270.0
    fy: float = 270.0
    cx: float = 119.5
    cy: float = 89.5
    width: int = 240
    height: int = 180
    bin_inner: float = 0.24
    bin_wall_height: float = 0.06

    def scene_params(self):
        aniso = None
        if self.aniso_lo is not None and self.aniso_hi is not None:
            aniso = (self.aniso_lo, self.aniso_hi)
        return SceneParams(
            scale_range=(self.scale_lo, self.scale_hi), aniso_axis_range=aniso,
            drop_height=self.drop_height, xy_margin=self.xy_margin,
            place_attempts=self.place_attempts, scene_retries=self.scene_retries,
            jiggles=self.jiggles, jiggle_rot=self.jiggle_rot,
            jiggle_slide=self.jiggle_slide, jiggle_lift=self.jiggle_lift,
            descend_step=self.descend_step, descend_tol=self.descend_tol,
            camera_dist=(self.camera_dist_lo, self.camera_dist_hi),
            camera_cone_deg=self.camera_cone_deg, look_jitter=self.look_jitter,
            depth_sigma=self.depth_sigma, dropout=self.dropout)

    def camera(self):
        return CameraModel(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy,
                           width=self.width, height=self.height)

    def count_range(self):
        return (self.count_lo, self.count_hi)


@dataclass
class SegmentationSection:
    eps: float = 0.005
    min_pts: int = 30
    offset_sigma: float = 0.0             # Gaussian corruption of GT offsets


@dataclass
class PlannerSection:
    direct_samples: int = 40
    max_candidates: int = 60              # proposals scored per segment
    exhaustive: bool = False              # rank across all segments
    no_affordance: bool = False           # constant-1.0 relevance


@dataclass
class PipelineConfig:
    seed: int = 0
    canonical: CanonicalSection = field(default_factory=CanonicalSection)
    grasping: GraspSection = field(default_factory=GraspSection)
    affordance: AffordanceSection = field(default_factory=AffordanceSection)
    scene: SceneSection = field(default_factory=SceneSection)
    segmentation: SegmentationSection = field(default_factory=SegmentationSection)
    planner: PlannerSection = field(default_factory=PlannerSection)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        version = d.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported config schema_version {version}")
        return _build(cls, d, "config")


def _build(cls, d, path):
    """Construct a section dataclass, rejecting keys it does not declare."""
    if not isinstance(d, dict):
        raise ValueError(f"{path}: expected an object")
    by_name = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - set(by_name))
    if unknown:
        raise ValueError(f"{path}: unknown keys {unknown}")
    kwargs = {}
    for name, value in d.items():
        if name in _SECTION_TYPES:
            kwargs[name] = _build(_SECTION_TYPES[name], value, f"{path}.{name}")
        else:
            kwargs[name] = value
    return cls(**kwargs)


_SECTION_TYPES = {
    "canonical": CanonicalSection,
    "grasping": GraspSection,
    "affordance": AffordanceSection,
    "scene": SceneSection,
    "segmentation": SegmentationSection,
    "planner": PlannerSection,
}


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return PipelineConfig.from_dict(json.load(fh))


def save_config(path, config):
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
