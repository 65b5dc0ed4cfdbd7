"""Mesh-mesh intersection tests.

Contact counts as collision: the predicate is closed, so exactly-touching
faces report True. Candidate face pairs come from axis-aligned box overlap;
exact tests are edge-through-triangle piercing checks with coplanar and
edge-in-plane configurations handled separately. Full containment of one mesh
in the other (no surface crossing) is caught by a winding-number test on a
single vertex.
"""

from __future__ import annotations

import numpy as np

from .sdf import winding_number

__all__ = ["mesh_collision", "tri_tri_intersect"]


def _bary_inside(px, py, ax, ay, bx, by, cx, cy, eps):
    """Inclusive 2-D point-in-triangle via signed areas (orientation-free)."""
    d1 = (px - bx) * (ay - by) - (ax - bx) * (py - by)
    d2 = (px - cx) * (by - cy) - (bx - cx) * (py - cy)
    d3 = (px - ax) * (cy - ay) - (cx - ax) * (py - ay)
    neg = (d1 < -eps) | (d2 < -eps) | (d3 < -eps)
    pos = (d1 > eps) | (d2 > eps) | (d3 > eps)
    return ~(neg & pos)


def _seg_seg_2d(p, q, a, b, eps):
    """Inclusive 2-D segment intersection (scalar)."""
    r = q - p
    s = b - a
    denom = r[0] * s[1] - r[1] * s[0]
    qp = a - p
    if abs(denom) < eps:
        # parallel: collinear overlap?
        if abs(qp[0] * r[1] - qp[1] * r[0]) > eps:
            return False
        rr = r @ r
        if rr < eps * eps:
            return np.linalg.norm(qp) <= eps
        t0 = (qp @ r) / rr
        t1 = ((b - p) @ r) / rr
        return min(t0, t1) <= 1 + 1e-12 and max(t0, t1) >= -1e-12
    t = (qp[0] * s[1] - qp[1] * s[0]) / denom
    u = (qp[0] * r[1] - qp[1] * r[0]) / denom
    return -1e-12 <= t <= 1 + 1e-12 and -1e-12 <= u <= 1 + 1e-12


def _project_axis(n):
    return int(np.argmax(np.abs(n)))


def _tri2d(t, drop):
    keep = [i for i in range(3) if i != drop]
    return t[:, keep]


def _coplanar_overlap(t1, t2, n, eps):
    """2-D overlap of coplanar triangles (inclusive)."""
    drop = _project_axis(n)
    a = _tri2d(t1, drop)
    b = _tri2d(t2, drop)
    for i in range(3):
        for j in range(3):
            if _seg_seg_2d(a[i], a[(i + 1) % 3], b[j], b[(j + 1) % 3], eps):
                return True
    if _bary_inside(a[0, 0], a[0, 1], b[0, 0], b[0, 1], b[1, 0], b[1, 1],
                    b[2, 0], b[2, 1], eps):
        return True
    return bool(_bary_inside(b[0, 0], b[0, 1], a[0, 0], a[0, 1], a[1, 0], a[1, 1],
                             a[2, 0], a[2, 1], eps))


def _seg_in_plane_hits(p, q, tri, n, eps):
    """Segment lying in the triangle's plane: 2-D overlap test (scalar)."""
    drop = _project_axis(n)
    keep = [i for i in range(3) if i != drop]
    p2, q2 = p[keep], q[keep]
    t2 = tri[:, keep]
    for j in range(3):
        if _seg_seg_2d(p2, q2, t2[j], t2[(j + 1) % 3], eps):
            return True
    return bool(_bary_inside(p2[0], p2[1], t2[0, 0], t2[0, 1], t2[1, 0], t2[1, 1],
                             t2[2, 0], t2[2, 1], eps))


def tri_tri_intersect(t1, t2, eps=None):
    """Closed intersection test for a batch of triangle pairs.

    t1, t2: (M, 3, 3). Returns (M,) bool; touching at a point, edge, or face
    counts as intersection.
    """
    t1 = np.asarray(t1, dtype=np.float64).reshape(-1, 3, 3)
    t2 = np.asarray(t2, dtype=np.float64).reshape(-1, 3, 3)
    m = len(t1)
    if eps is None:
        span = max(np.abs(t1).max(initial=0.0), np.abs(t2).max(initial=0.0), 1e-3)
        eps = 1e-9 * span
    out = np.zeros(m, dtype=bool)

    n1 = np.cross(t1[:, 1] - t1[:, 0], t1[:, 2] - t1[:, 0])
    n2 = np.cross(t2[:, 1] - t2[:, 0], t2[:, 2] - t2[:, 0])
    # distances of each triangle's vertices to the other's plane
    d1 = np.einsum("mi,mvi->mv", n2, t1 - t2[:, 0:1])  # (M, 3)
    d2 = np.einsum("mi,mvi->mv", n1, t2 - t1[:, 0:1])
    scale1 = np.linalg.norm(n2, axis=1, keepdims=True)
    scale2 = np.linalg.norm(n1, axis=1, keepdims=True)
    tol1 = eps * np.where(scale1 > 0, scale1, 1.0)
    tol2 = eps * np.where(scale2 > 0, scale2, 1.0)

    coplanar = (np.abs(d1) <= tol1).all(axis=1)
    # strictly one-sided pairs cannot intersect
    separated = ((d1 > tol1[:, 0:1]).all(axis=1) | (d1 < -tol1[:, 0:1]).all(axis=1)
                 | (d2 > tol2[:, 0:1]).all(axis=1) | (d2 < -tol2[:, 0:1]).all(axis=1))
    active = ~(separated | coplanar)

    if active.any():
        idx = np.flatnonzero(active)
        hit = np.zeros(len(idx), dtype=bool)
        special = np.zeros(len(idx), dtype=bool)
        for (ta, tb, nb) in ((t1[idx], t2[idx], n2[idx]), (t2[idx], t1[idx], n1[idx])):
            db = np.einsum("mi,mvi->mv", nb, ta - tb[:, 0:1])
            tolb = eps * np.maximum(np.linalg.norm(nb, axis=1, keepdims=True), 1e-300)
            for e in range(3):
                p, q = ta[:, e], ta[:, (e + 1) % 3]
                dp, dq = db[:, e], db[:, (e + 1) % 3]
                tb_tol = tolb[:, 0]
                in_plane = (np.abs(dp) <= tb_tol) & (np.abs(dq) <= tb_tol)
                special |= in_plane & ~hit
                crossing = ~in_plane & (np.minimum(dp, dq) <= tb_tol) & \
                    (np.maximum(dp, dq) >= -tb_tol)
                if crossing.any():
                    c = np.flatnonzero(crossing)
                    denom = dp[c] - dq[c]
                    denom = np.where(np.abs(denom) < 1e-300, 1e-300, denom)
                    tpar = np.clip(dp[c] / denom, 0.0, 1.0)
                    x = p[c] + tpar[:, None] * (q[c] - p[c])
                    # inclusive inside test in the pierced triangle's plane
                    tri = tb[c]
                    axes = np.argmax(np.abs(nb[c]), axis=1)
                    ins = np.zeros(len(c), dtype=bool)
                    for drop in range(3):
                        sel = axes == drop
                        if not sel.any():
                            continue
                        keep = [i for i in range(3) if i != drop]
                        xx = x[sel][:, keep]
                        tt = tri[sel][:, :, keep]
                        ins[sel] = _bary_inside(
                            xx[:, 0], xx[:, 1],
                            tt[:, 0, 0], tt[:, 0, 1], tt[:, 1, 0], tt[:, 1, 1],
                            tt[:, 2, 0], tt[:, 2, 1], eps * 10)
                    hit[c] |= ins
        # rare: an edge lying exactly in the other triangle's plane
        for k in np.flatnonzero(special & ~hit):
            ia = idx[k]
            for (ta, tb, nb) in ((t1[ia], t2[ia], n2[ia]), (t2[ia], t1[ia], n1[ia])):
                db = (ta - tb[0]) @ nb
                tol = eps * max(np.linalg.norm(nb), 1e-300)
                for e in range(3):
                    if abs(db[e]) <= tol and abs(db[(e + 1) % 3]) <= tol:
                        if _seg_in_plane_hits(ta[e], ta[(e + 1) % 3], tb, nb, eps * 10):
                            hit[k] = True
                if hit[k]:
                    break
        out[idx] = hit

    for k in np.flatnonzero(coplanar):
        n = n2[k] if np.linalg.norm(n2[k]) > 0 else n1[k]
        out[k] = _coplanar_overlap(t1[k], t2[k], n, eps * 10)
    return out


def _face_boxes(tris):
    return tris.min(axis=1), tris.max(axis=1)


def mesh_collision(mesh_a, mesh_b, pose_a=None, pose_b=None):
    """True when the posed meshes intersect, touch, or one contains the other."""
    a = mesh_a if pose_a is None else mesh_a.transformed(pose_a)
    b = mesh_b if pose_b is None else mesh_b.transformed(pose_b)
    alo, ahi = a.aabb
    blo, bhi = b.aabb
    if (alo > bhi).any() or (blo > ahi).any():
        return False

    ta, tb = a.triangles, b.triangles
    a_lo, a_hi = _face_boxes(ta)
    b_lo, b_hi = _face_boxes(tb)
    pairs_a = []
    pairs_b = []
    chunk = max(1, int(2e6) // max(len(tb), 1))
    for start in range(0, len(ta), chunk):
        sl = slice(start, start + chunk)
        overlap = ((a_lo[sl, None, :] <= b_hi[None, :, :]).all(axis=2)
                   & (b_lo[None, :, :] <= a_hi[sl, None, :]).all(axis=2))
        ii, jj = np.nonzero(overlap)
        pairs_a.append(ii + start)
        pairs_b.append(jj)
    ii = np.concatenate(pairs_a)
    jj = np.concatenate(pairs_b)
    if len(ii):
        step = 65536
        for start in range(0, len(ii), step):
            if tri_tri_intersect(ta[ii[start:start + step]],
                                 tb[jj[start:start + step]]).any():
                return True
    # no surface crossing: one mesh may still sit entirely inside the other
    if winding_number(b, a.vertices[:1])[0] > 0.5:
        return True
    if winding_number(a, b.vertices[:1])[0] > 0.5:
        return True
    return False
