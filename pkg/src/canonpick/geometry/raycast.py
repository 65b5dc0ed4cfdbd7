"""Ray casting against triangle meshes from a common origin."""

from __future__ import annotations

import numpy as np

__all__ = ["raycast_mesh"]

_EDGE_EPS = 1e-12


def raycast_mesh(origin, directions, mesh, t_min=1e-9, chunk_faces=64):
    """Nearest hit of each ray origin + t * d against the mesh.

    Rays share one origin; directions need not be unit length, so t is in
    units of the direction vector (a direction with unit z component makes t
    the z-depth directly). Returns (t (N,), face (N,) int; -1 and inf where
    nothing is hit). Both face sides are hit (no culling); hits on shared
    edges resolve to the nearest face.
    """
    o = np.asarray(origin, dtype=np.float64).reshape(3)
    d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    n = len(d)
    best_t = np.full(n, np.inf)
    best_f = np.full(n, -1, dtype=np.int64)
    if mesh.n_faces == 0 or n == 0:
        return best_t, best_f

    tris = mesh.triangles
    v0 = tris[:, 0]
    e1 = tris[:, 1] - v0
    e2 = tris[:, 2] - v0
    tvec = o - v0                      # (F, 3), shared origin
    qvec = np.cross(tvec, e1)          # (F, 3)
    t_num = np.einsum("fj,fj->f", e2, qvec)

    for start in range(0, len(tris), chunk_faces):
        sl = slice(start, start + chunk_faces)
        pvec = np.cross(d[:, None, :], e2[None, sl, :])         # (N, C, 3)
        det = np.einsum("fj,nfj->nf", e1[sl], pvec)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            u = np.einsum("fj,nfj->nf", tvec[sl], pvec) * inv
            v = np.einsum("nj,fj->nf", d, qvec[sl]) * inv
            t = t_num[sl][None, :] * inv
        ok = ((np.abs(det) > _EDGE_EPS)
              & (u >= -_EDGE_EPS) & (v >= -_EDGE_EPS) & (u + v <= 1 + _EDGE_EPS)
              & (t > t_min))
        t = np.where(ok, t, np.inf)
        j = t.argmin(axis=1)
        tc = t[np.arange(n), j]
        upd = tc < best_t
        best_t[upd] = tc[upd]
        best_f[upd] = j[upd] + start
    return best_t, best_f
