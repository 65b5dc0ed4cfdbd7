"""Surface point sampling."""

from __future__ import annotations

import warnings

import numpy as np

from .cloud import PointCloud

__all__ = ["sample_surface_uniform", "poisson_disk_sample"]

# candidate pool size per expected output point; larger approaches maximal
# coverage at linear cost
_OVERSAMPLE = 12.0


def sample_surface_uniform(mesh, n, seed=0, rng=None):
    """Area-weighted uniform surface samples: (points (n,3), normals (n,3))."""
    if rng is None:
        rng = np.random.default_rng(seed)
    areas = mesh.face_areas
    total = areas.sum()
    if total <= 0:
        raise ValueError("mesh has zero surface area")
    cum = np.cumsum(areas) / total
    face_idx = np.searchsorted(cum, rng.random(n), side="right").clip(0, len(areas) - 1)
    t = mesh.triangles[face_idx]
    # sqrt trick for uniform barycentric coordinates
    r1 = np.sqrt(rng.random(n))[:, None]
    r2 = rng.random(n)[:, None]
    pts = (1 - r1) * t[:, 0] + r1 * (1 - r2) * t[:, 1] + r1 * r2 * t[:, 2]
    return pts, mesh.face_normals[face_idx]


def poisson_disk_sample(mesh, radius, seed=0):
    """Blue-noise surface sampling by seeded dart throwing.

    Draws a dense area-weighted candidate pool, then accepts greedily with a
    grid-hashed minimum-distance test at `radius`. Accepted points are
    pairwise at least `radius` apart (hence >= 0.95 * radius). Deterministic
    for a given seed. Returns a PointCloud with source-face normals.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    area = mesh.area
    if area <= 0:
        raise ValueError("mesh has zero surface area")
    lo, hi = mesh.aabb
    diameter = float(np.linalg.norm(hi - lo))
    rng = np.random.default_rng(seed)
    if radius >= diameter:
        warnings.warn("poisson_disk_sample: radius exceeds mesh diameter, "
                      "returning a single sample", stacklevel=2)
        pts, nrm = sample_surface_uniform(mesh, 1, rng=rng)
        return PointCloud(pts, nrm)

    # hexagonal-packing density estimate times oversampling factor
    n_cand = int(np.ceil(_OVERSAMPLE * 2.0 / np.sqrt(3.0) * area / radius**2))
    n_cand = max(n_cand, 64)
    cand, cand_n = sample_surface_uniform(mesh, n_cand, rng=rng)

    cell = radius  # any point closer than radius lies within one cell in each axis
    keys = np.floor((cand - lo) / cell).astype(np.int64)
    r2 = radius * radius

    accepted = np.empty((n_cand, 3))
    accepted_idx = []
    grid: dict[tuple, list] = {}
    count = 0
    for i in range(n_cand):
        kx, ky, kz = keys[i]
        p = cand[i]
        ok = True
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    bucket = grid.get((kx + dx, ky + dy, kz + dz))
                    if bucket:
                        d = accepted[bucket] - p
                        if (np.einsum("ij,ij->i", d, d) < r2).any():
                            ok = False
                            break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            accepted[count] = p
            grid.setdefault((kx, ky, kz), []).append(count)
            accepted_idx.append(i)
            count += 1
    return PointCloud(accepted[:count].copy(), cand_n[accepted_idx])
