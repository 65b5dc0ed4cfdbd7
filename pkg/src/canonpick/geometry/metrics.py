"""Cloud-to-cloud distance metrics."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from ..runtime import get_workers
from ..validation import as_points

__all__ = ["chamfer_distance", "one_sided_chamfer", "nearest_neighbors"]


def _pts(x):
    return as_points(x.points if hasattr(x, "points") else x)


def nearest_neighbors(query, reference):
    """Indices and distances of the nearest reference point per query point."""
    q, r = _pts(query), _pts(reference)
    dist, idx = cKDTree(r).query(q, workers=get_workers())
    return idx, dist


def one_sided_chamfer(source, target):
    """Mean nearest-neighbor distance from source points to target points."""
    _, dist = nearest_neighbors(source, target)
    return float(dist.mean())


def chamfer_distance(a, b):
    """Symmetric Chamfer distance: mean NN distance a->b plus mean NN b->a.

    Accepts arrays or anything with a .points attribute. Exact (k-d tree),
    raises on empty input.
    """
    return one_sided_chamfer(a, b) + one_sided_chamfer(b, a)
