"""canonpick: category-level canonicalization and task-aware grasp planning.

Desk-scale pipeline: build a canonical category model from a handful of CAD
meshes, attach a grasp codebook and a task-affordance heatmap to it offline,
then segment rendered bin scenes, align each segment to the canonical model
with a 9-DoF scaled-rigid pose, and rank transferred grasps jointly by grasp
robustness and task relevance.
"""

__version__ = "0.1.0"
