"""Instance segmentation of a scene cloud from per-point center offsets.

Each point carries a predicted offset to its instance center; shifting the
cloud by its offsets condenses every instance into a tight blob, which
density clustering separates without knowing the instance count. Offsets
here come from ground truth, optionally corrupted with Gaussian noise to
emulate predictor error. Visibility ordering ranks clusters by how many
depth pixels they cover, so the least-occluded object is attempted first.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator

from .geometry.io import write_ply
from .validation import as_points, check_positive

__all__ = ["SegmentResult", "dbscan_labels", "cluster_offsets",
           "corrupt_offsets", "order_by_visibility", "OffsetClusterer"]

SCHEMA_VERSION = 1


@dataclass
class SegmentResult:
    """Cluster labels plus optional visibility ranking."""

    labels: np.ndarray                 # (N,) int64, -1 = noise
    clusters: list                     # per cluster: sorted point index array
    visibility: list | None = None     # per cluster: covered pixel count
    order: list | None = None          # cluster indices, most visible first

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        seen = np.zeros(len(self.labels), dtype=bool)
        for k, idx in enumerate(self.clusters):
            if len(idx) == 0:
                raise ValueError(f"cluster {k} is empty")
            if np.any(self.labels[idx] != k) or np.any(seen[idx]):
                raise ValueError("clusters must partition the non-noise points")
            seen[idx] = True
        if np.any(seen != (self.labels >= 0)):
            raise ValueError("clusters must cover every non-noise point")

    @property
    def n_clusters(self):
        return len(self.clusters)

    def save(self, base, points=None):
        """JSON summary at base.json; labeled cloud at base.ply when given."""
        payload = {
            "schema_version": SCHEMA_VERSION,
            "kind": "segments",
            "n_points": int(len(self.labels)),
            "n_noise": int(np.count_nonzero(self.labels < 0)),
            "cluster_sizes": [int(len(c)) for c in self.clusters],
            "visibility": None if self.visibility is None
            else [int(v) for v in self.visibility],
            "order": None if self.order is None else [int(k) for k in self.order],
        }
        tmp = str(base) + ".json.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, str(base) + ".json")
        if points is not None:
            pts = as_points(points.points if hasattr(points, "points") else points)
            write_ply(str(base) + ".ply", pts,
                      attributes={"label": self.labels.astype(np.int32)})


def dbscan_labels(points, eps, min_pts):
    """Density clustering; returns (N,) labels with -1 for noise.

    A point is core when its eps-ball holds at least min_pts points, itself
    included. Clusters grow breadth-first from the lowest-index unclaimed
    core point; border points go to the first cluster that reaches them.
    Neighbor lists are visited in index order, making the labeling a pure
    function of the point set.
    """
    pts = as_points(points, allow_empty=True)
    check_positive(eps, "eps")
    n = len(pts)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels
    tree = cKDTree(pts)
    neigh = tree.query_ball_point(pts, eps)
    core = np.array([len(nb) >= min_pts for nb in neigh])
    cluster = 0
    for start in range(n):
        if not core[start] or labels[start] >= 0:
            continue
        labels[start] = cluster
        queue = [start]
        while queue:
            j = queue.pop(0)
            for k in sorted(neigh[j]):
                if labels[k] >= 0:
                    continue
                labels[k] = cluster
                if core[k]:
                    queue.append(k)
        cluster += 1
    return labels


def cluster_offsets(cloud, offsets, eps=0.005, min_pts=30):
    """Cluster the offset-shifted cloud; labels map back to the input points."""
    pts = as_points(cloud.points if hasattr(cloud, "points") else cloud,
                    allow_empty=True)
    off = as_points(offsets, allow_empty=True)
    if off.shape != pts.shape:
        raise ValueError("offsets must match the cloud point for point")
    labels = dbscan_labels(pts + off, eps, min_pts)
    clusters = [np.flatnonzero(labels == k) for k in range(labels.max() + 1)]
    return SegmentResult(labels, clusters)


def corrupt_offsets(offsets, sigma, seed=0):
    """Add isotropic Gaussian error, emulating an imperfect offset predictor."""
    off = as_points(offsets, allow_empty=True)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return off.copy()
    rng = np.random.default_rng([seed, 331])
    return off + rng.normal(0.0, sigma, size=off.shape)


def order_by_visibility(seg, cloud, depth):
    """Rank clusters by covered depth pixels, most visible first.

    Each cloud point projects onto its source pixel; a pixel counts toward
    the cluster of its point. Ties break to the lower cluster index, making
    the order total.
    """
    pts = as_points(cloud.points if hasattr(cloud, "points") else cloud,
                    allow_empty=True)
    if len(pts) != len(seg.labels):
        raise ValueError("cloud does not match the segmentation")
    cam = depth.camera
    counts = [0] * seg.n_clusters
    if len(pts):
        uv = np.rint(cam.project(pts)).astype(np.int64)
        ok = ((uv[:, 0] >= 0) & (uv[:, 0] < cam.width)
              & (uv[:, 1] >= 0) & (uv[:, 1] < cam.height))
        flat = uv[:, 1] * cam.width + uv[:, 0]
        for k, idx in enumerate(seg.clusters):
            good = idx[ok[idx]]
            counts[k] = int(len(np.unique(flat[good])))
    order = sorted(range(seg.n_clusters), key=lambda k: (-counts[k], k))
    return SegmentResult(seg.labels.copy(),
                         [idx.copy() for idx in seg.clusters],
                         visibility=counts, order=order)


class OffsetClusterer(BaseEstimator):
    """Estimator facade: fit(points, offsets) clusters, predict ranks.

    fit stores labels_ and clusters_; fit_predict returns the labels.
    predict(depth, cloud) adds visibility ordering for a rendered view and
    returns the completed SegmentResult.
    """

    def __init__(self, eps=0.005, min_pts=30):
        self.eps = eps
        self.min_pts = min_pts

    def fit(self, X, offsets):
        result = cluster_offsets(X, offsets, eps=self.eps, min_pts=self.min_pts)
        self.result_ = result
        self.labels_ = result.labels
        self.clusters_ = result.clusters
        return self

    def fit_predict(self, X, offsets):
        return self.fit(X, offsets).labels_

    def predict(self, depth, cloud):
        if not hasattr(self, "result_"):
            raise RuntimeError("fit the clusterer first")
        self.result_ = order_by_visibility(self.result_, cloud, depth)
        return self.result_
