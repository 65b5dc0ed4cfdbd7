"""Geometry core: meshes, clouds, transforms, distances, sampling, collision."""

from .cloud import PointCloud
from .collision import mesh_collision, tri_tri_intersect
from .io import read_obj, read_pfm, read_ply, write_obj, write_pfm, write_ply
from .mesh import TriMesh, load_mesh, save_mesh
from .metrics import chamfer_distance, nearest_neighbors, one_sided_chamfer
from .poses import Pose6D, Pose9D, quat_to_rotation, rotation_to_quat, transform_points
from .raycast import raycast_mesh
from .sampling import poisson_disk_sample, sample_surface_uniform
from .sdf import signed_distance, unsigned_distance, winding_number

__all__ = [
    "PointCloud", "TriMesh", "load_mesh", "save_mesh",
    "Pose6D", "Pose9D", "transform_points", "rotation_to_quat", "quat_to_rotation",
    "read_obj", "write_obj", "read_ply", "write_ply", "read_pfm", "write_pfm",
    "chamfer_distance", "one_sided_chamfer", "nearest_neighbors",
    "poisson_disk_sample", "sample_surface_uniform",
    "signed_distance", "unsigned_distance", "winding_number",
    "mesh_collision", "tri_tri_intersect", "raycast_mesh",
]
