"""Command-line surface: offline artifact builds, scene generation, planning.

Every subcommand reads one JSON config (--config) and one root seed (--seed);
all artifact files carry a schema_version and are written atomically. Exit
codes: 0 success, 2 planning found no grasp, 1 any error.
"""

from __future__ import annotations

import json
import os

import click
import numpy as np

from .affordance import ContactHeatmap, PlacementTask
from .assets import demo_category, make_open_box, make_plate_with_hole, surface_cloud
from .canonical import CategoryModel, RansacParams, build_category_model, \
    symmetry_rotations
from .config import PipelineConfig, load_config, save_config
from .geometry import Pose6D
from .geometry.io import write_ply
from .geometry.mesh import load_mesh, save_mesh
from .grasping import GraspCodebook, build_codebook
from .gripper import GripperModel, make_parallel_jaw
from .planner import build_heatmap, constant_heatmap, eval_dataset, plan
from .runtime import set_workers
from .scenes import generate_dataset, load_scene_dir, load_scene_obs

__all__ = ["cli", "main"]


@click.group()
@click.option("--config", "config_path", metavar="FILE",
              type=click.Path(exists=True, dir_okay=False),
              help="Pipeline config JSON; defaults apply when omitted.")
@click.option("--seed", type=int, default=None,
              help="Root seed, overriding the config's.")
@click.option("--threads", type=int, default=1, show_default=True,
              help="Worker threads for nearest-neighbor queries.")
@click.option("--debug-dir", metavar="DIR",
              type=click.Path(file_okay=False), default=None,
              help="Write per-stage debug exports here.")
@click.pass_context
def cli(ctx, config_path, seed, threads, debug_dir):
    """Category-canonical task-aware grasp planning."""
    cfg = load_config(config_path) if config_path else PipelineConfig()
    if seed is not None:
        cfg.seed = int(seed)
    set_workers(threads)
    ctx.obj = {"config": cfg, "debug_dir": debug_dir}


def _load_models(models_dir):
    """All OBJ meshes except the bin, keyed by stem, sorted."""
    names = sorted(f for f in os.listdir(models_dir)
                   if f.endswith(".obj") and f != "bin.obj")
    if not names:
        raise click.ClickException(f"{models_dir}: no .obj models found")
    out = {}
    for f in names:
        mesh = load_mesh(os.path.join(models_dir, f))
        mesh.name = f[:-4]
        out[f[:-4]] = mesh
    return out


def _load_bin(models_dir, cfg):
    path = os.path.join(models_dir, "bin.obj")
    if os.path.exists(path):
        return load_mesh(path)
    return make_open_box((cfg.scene.bin_inner, cfg.scene.bin_inner),
                         cfg.scene.bin_wall_height)


def _model_clouds(models, cfg):
    """The exact clouds the canonical build saw, in id order."""
    ids = sorted(models)
    return ids, [surface_cloud(models[i], cfg.canonical.sample_radius,
                               seed=cfg.seed) for i in ids]


def _check_compat(model, codebook=None, heatmap=None):
    if codebook is not None and codebook.category != model.category:
        raise click.ClickException(
            f"codebook category {codebook.category!r} does not match "
            f"canonical model {model.category!r}")
    if heatmap is not None and len(heatmap.p_TgG) != len(model.template.points):
        raise click.ClickException(
            "heatmap cloud size does not match the canonical template")


def _write_json(path, doc):
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


@cli.command("make-assets")
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--category", default="screws", show_default=True,
              type=click.Choice(["screws", "nuts", "brackets"]))
@click.option("--count", default=3, show_default=True,
              help="Number of category variants to write.")
@click.pass_obj
def cmd_make_assets(obj, out_dir, category, count):
    """Write demo meshes, a gripper, and (for screws) a placement task.

    Produces models/ (variants plus bin.obj), gripper/, task/ (drop-through
    plate, screws only), and the effective config.json.
    """
    cfg = obj["config"]
    models_dir = os.path.join(out_dir, "models")
    os.makedirs(models_dir, exist_ok=True)
    for mesh in demo_category(category, count):
        save_mesh(os.path.join(models_dir, f"{mesh.name}.obj"), mesh)
    save_mesh(os.path.join(models_dir, "bin.obj"),
              make_open_box((cfg.scene.bin_inner, cfg.scene.bin_inner),
                            cfg.scene.bin_wall_height))
    make_parallel_jaw().save(os.path.join(out_dir, "gripper"))
    if category == "screws":
        # hole passes every variant shaft (max 6.2 mm radius x 1.15 scale)
        # and blocks every head (min 10 mm x 0.9); rest pose seats the head
        # flange on the plate top
        plate = make_plate_with_hole(0.080, 0.012, 0.008)
        path = tuple(Pose6D(translation=[0.0, 0.0, z])
                     for z in (0.050, 0.030, 0.020, 0.012))
        task = PlacementTask(plate, path,
                             tolerance=cfg.affordance.placement_tolerance,
                             name="drop-through")
        task.save(os.path.join(out_dir, "task"))
    save_config(os.path.join(out_dir, "config.json"), cfg)
    click.echo(f"assets written to {out_dir}")


@cli.command("build-canonical")
@click.argument("models_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("out", type=click.Path(dir_okay=False))
@click.option("--category", default="category", show_default=True)
@click.option("--symmetry-order", default=1, show_default=True,
              help="Rotational symmetry about the canonical z axis.")
@click.pass_obj
def cmd_build_canonical(obj, models_dir, out, category, symmetry_order):
    """Build the canonical template and per-instance registrations."""
    cfg = obj["config"]
    models = _load_models(models_dir)
    _, clouds = _model_clouds(models, cfg)
    sym = symmetry_rotations("z", symmetry_order) if symmetry_order > 1 else ()
    model = build_category_model(clouds, category=category,
                                 sample_radius=cfg.canonical.sample_radius,
                                 symmetry=sym,
                                 ransac=RansacParams(seed=cfg.seed))
    model.save(out)
    click.echo(f"canonical model ({len(model.template.points)} template points, "
               f"{len(clouds)} instances) -> {out}")


@cli.command("build-codebook")
@click.argument("models_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("canonical", type=click.Path(exists=True, dir_okay=False))
@click.argument("gripper_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("out", type=click.Path(dir_okay=False))
@click.pass_obj
def cmd_build_codebook(obj, models_dir, canonical, gripper_dir, out):
    """Sample, score, and canonicalize stable grasps across the category."""
    cfg = obj["config"]
    models = _load_models(models_dir)
    model = CategoryModel.load(canonical)
    gripper = GripperModel.load(gripper_dir)
    meshes = [models[i] for i in sorted(models)]
    codebook = build_codebook(meshes, model, gripper,
                              n_per_instance=cfg.grasping.n_per_instance,
                              seed=cfg.seed,
                              config=cfg.grasping.grasp_config(),
                              cloud_radius=cfg.grasping.cloud_radius)
    codebook.save(out)
    click.echo(f"codebook with {len(codebook.grasps)} grasps -> {out}")


@cli.command("build-heatmap")
@click.argument("models_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("canonical", type=click.Path(exists=True, dir_okay=False))
@click.argument("codebook", type=click.Path(exists=True, dir_okay=False))
@click.argument("gripper_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("task_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("out_base", type=click.Path(dir_okay=False))
@click.pass_obj
def cmd_build_heatmap(obj, models_dir, canonical, codebook, gripper_dir,
                      task_dir, out_base):
    """Discover placement-success contact statistics on the template.

    The codebook is checked for compatibility (same category as the
    canonical model); discovery itself draws fresh grasps per instance so
    contact counts are not biased toward codebook survivors.
    """
    cfg = obj["config"]
    models = _load_models(models_dir)
    model = CategoryModel.load(canonical)
    book = GraspCodebook.load(codebook)
    _check_compat(model, codebook=book)
    gripper = GripperModel.load(gripper_dir)
    task = PlacementTask.load(task_dir)
    ids, clouds = _model_clouds(models, cfg)
    heatmap = build_heatmap([models[i] for i in ids], clouds, model, gripper,
                            task, config=cfg)
    heatmap.save(out_base)
    explored = int((heatmap.n_G > 0).sum())
    click.echo(f"heatmap over {len(heatmap.p_TgG)} template points "
               f"({explored} explored) -> {out_base}.ply/.json")


@cli.command("gen-scenes")
@click.argument("models_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("n_scenes", type=int)
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.pass_obj
def cmd_gen_scenes(obj, models_dir, n_scenes, out_dir):
    """Drop, settle, and render n_scenes bin scenes with ground truth."""
    cfg = obj["config"]
    models = _load_models(models_dir)
    bin_mesh = _load_bin(models_dir, cfg)
    n = generate_dataset(models, out_dir, n_scenes,
                         count_range=cfg.scene.count_range(),
                         bin_mesh=bin_mesh, camera=cfg.scene.camera(),
                         seed=cfg.seed, params=cfg.scene.scene_params())
    click.echo(f"{n} scenes -> {out_dir}")


def _write_plan_debug(debug_dir, result, model, heatmap, pts):
    os.makedirs(debug_dir, exist_ok=True)
    for seg in result.segments:
        base = os.path.join(debug_dir, f"segment_{seg.cluster:02d}")
        write_ply(base + ".ply", pts[seg.indices])
        if seg.aligned:
            write_ply(base + "_template.ply",
                      seg.pose.apply(model.template.points),
                      attributes={"p_TgG": heatmap.p_TgG})


@cli.command("plan")
@click.argument("scene_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--canonical", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--codebook", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--heatmap", "heatmap_base", default=None, metavar="BASE",
              help="Heatmap base path (BASE.ply + BASE.json); "
                   "required unless --no-affordance.")
@click.option("--gripper", "gripper_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--no-affordance", is_flag=True,
              help="Rank by stability alone (constant relevance).")
@click.option("--uniform-scale", is_flag=True,
              help="Constrain pose fits to isotropic scale.")
@click.pass_obj
def cmd_plan(obj, scene_dir, canonical, codebook, heatmap_base, gripper_dir,
             out, no_affordance, uniform_scale):
    """Rank task-relevant grasps for one rendered scene.

    Exit code 2 when no segment yields a valid proposal; the result file is
    still written with per-stage rejection counts.
    """
    cfg = obj["config"]
    cfg.planner.no_affordance = cfg.planner.no_affordance or no_affordance
    cfg.canonical.uniform_scale = cfg.canonical.uniform_scale or uniform_scale
    model = CategoryModel.load(canonical)
    book = GraspCodebook.load(codebook)
    _check_compat(model, codebook=book)
    heatmap = None
    if heatmap_base is not None:
        heatmap = ContactHeatmap.load(heatmap_base)
        _check_compat(model, heatmap=heatmap)
    elif not cfg.planner.no_affordance:
        raise click.ClickException("--heatmap is required unless --no-affordance")
    gripper = GripperModel.load(gripper_dir)

    cam_pose, depth, cloud, gt = load_scene_obs(scene_dir)
    mask = gt.point_ids >= 0
    down = cam_pose.rotation.T @ np.array([0.0, 0.0, -1.0])
    result = plan(cloud, gt.offsets, mask, depth, model, book, heatmap,
                  gripper, config=cfg, down_dir=down)
    result.save(out)
    if obj["debug_dir"]:
        eff = heatmap if heatmap is not None and not cfg.planner.no_affordance \
            else constant_heatmap(model)
        _write_plan_debug(obj["debug_dir"], result, model, eff, cloud.points)
    if result.no_grasp:
        click.echo(f"no grasp found -> {out}")
        return 2
    e = result.chosen
    click.echo(f"{len(result.entries)} grasps, best joint={e.joint:.3f} "
               f"(p_g={e.p_g:.2f}, p_tgg={e.p_tgg:.3f}) -> {out}")
    return 0


@cli.command("eval")
@click.argument("dataset_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--canonical", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--codebook", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--heatmap", "heatmap_base", default=None, metavar="BASE")
@click.option("--gripper", "gripper_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--task", "task_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--no-affordance", is_flag=True)
@click.option("--uniform-scale", is_flag=True)
@click.pass_obj
def cmd_eval(obj, dataset_dir, canonical, codebook, heatmap_base, gripper_dir,
             task_dir, out, no_affordance, uniform_scale):
    """Plan every dataset scene and score outcomes against ground truth.

    Each plan is classified failure / stable / task-relevant by rehearsing
    the chosen grasp and the placement on the true instance mesh. An empty
    dataset yields an empty report and exit 0.
    """
    cfg = obj["config"]
    cfg.planner.no_affordance = cfg.planner.no_affordance or no_affordance
    cfg.canonical.uniform_scale = cfg.canonical.uniform_scale or uniform_scale
    model = CategoryModel.load(canonical)
    book = GraspCodebook.load(codebook)
    _check_compat(model, codebook=book)
    heatmap = None
    if heatmap_base is not None:
        heatmap = ContactHeatmap.load(heatmap_base)
        _check_compat(model, heatmap=heatmap)
    gripper = GripperModel.load(gripper_dir)
    task = PlacementTask.load(task_dir)

    models_dir = os.path.join(dataset_dir, "models")
    models = _load_models(models_dir) if os.path.isdir(models_dir) else {}
    bin_mesh = _load_bin(models_dir, cfg) if models else None
    scenes_root = os.path.join(dataset_dir, "scenes")
    names = sorted(os.listdir(scenes_root)) if os.path.isdir(scenes_root) else []

    def scenes():
        for name in names:
            yield load_scene_dir(os.path.join(scenes_root, name), models,
                                 bin_mesh)

    report = eval_dataset(scenes(), models, model, book, heatmap, gripper,
                          task, config=cfg)
    _write_json(out, report)
    click.echo(f"evaluated {report['n_scenes']} scenes -> {out}")


def main(argv=None):
    try:
        rv = cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as err:
        return int(err.exit_code)
    except click.Abort:
        return 1
    except click.ClickException as err:
        err.show()
        return 1
    except Exception as err:  # CLI boundary: every failure maps to exit 1
        click.echo(f"error: {err}", err=True)
        return 1
    return int(rv) if isinstance(rv, int) else 0
