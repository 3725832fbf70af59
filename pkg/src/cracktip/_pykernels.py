"""Pure-Python implementations of the clipping kernels.

These mirror ``_ckernels.pyx`` line for line.  Triangles that are trivially
inside or outside the disk are classified with numpy; only the ones cut by
the circle go through the scalar loop.
"""

import math

import numpy as np


def _edge_crossings(px, py, qx, qy, r2):
    """Parameters t in (0, 1) where the segment p->q meets the circle |x| = r."""
    dx = qx - px
    dy = qy - py
    a = dx * dx + dy * dy
    if a == 0.0:
        return ()
    b = 2.0 * (px * dx + py * dy)
    c = px * px + py * py - r2
    disc = b * b - 4.0 * a * c
    if disc <= 0.0:
        return ()
    s = math.sqrt(disc)
    t1 = (-b - s) / (2.0 * a)
    t2 = (-b + s) / (2.0 * a)
    out = []
    if 0.0 < t1 < 1.0:
        out.append(t1)
    if 0.0 < t2 < 1.0 and t2 != t1:
        out.append(t2)
    return out


def _sector_triangle_area(px, py, qx, qy, r2):
    """Signed area of disk ∩ triangle(O, p, q), disk centred at the origin."""
    pts = [(px, py)]
    for t in _edge_crossings(px, py, qx, qy, r2):
        pts.append((px + t * (qx - px), py + t * (qy - py)))
    pts.append((qx, qy))
    area = 0.0
    for (ax, ay), (bx, by) in zip(pts[:-1], pts[1:]):
        mx = 0.5 * (ax + bx)
        my = 0.5 * (ay + by)
        cr = ax * by - ay * bx
        if mx * mx + my * my <= r2:
            area += 0.5 * cr
        else:
            area += 0.5 * r2 * math.atan2(cr, ax * bx + ay * by)
    return area


def tri_disk_area_single(x0, y0, x1, y1, x2, y2, r):
    r2 = r * r
    s = (
        _sector_triangle_area(x0, y0, x1, y1, r2)
        + _sector_triangle_area(x1, y1, x2, y2, r2)
        + _sector_triangle_area(x2, y2, x0, y0, r2)
    )
    return abs(s)


def _classify(verts, tris, cx, cy, r):
    p = verts[tris] - np.array([cx, cy])
    d2 = np.einsum("mki,mki->mk", p, p)
    inside = np.all(d2 <= r * r, axis=1)
    # Distance from the centre to each triangle (0 when the centre is inside).
    dmin = np.full(len(tris), np.inf)
    for k in range(3):
        a = p[:, k]
        b = p[:, (k + 1) % 3]
        e = b - a
        ee = np.einsum("mi,mi->m", e, e)
        t = np.where(ee > 0, -np.einsum("mi,mi->m", a, e) / np.where(ee > 0, ee, 1.0), 0.0)
        t = np.clip(t, 0.0, 1.0)
        c = a + t[:, None] * e
        dmin = np.minimum(dmin, np.sqrt(np.einsum("mi,mi->m", c, c)))
    cr = [
        p[:, k, 0] * p[:, (k + 1) % 3, 1] - p[:, k, 1] * p[:, (k + 1) % 3, 0]
        for k in range(3)
    ]
    centre_in = (
        ((cr[0] >= 0) & (cr[1] >= 0) & (cr[2] >= 0))
        | ((cr[0] <= 0) & (cr[1] <= 0) & (cr[2] <= 0))
    )
    dmin = np.where(centre_in, 0.0, dmin)
    return p, inside, dmin


def tri_disk_areas(verts, tris, cx, cy, r):
    verts = np.asarray(verts, dtype=float)
    tris = np.asarray(tris, dtype=np.int64)
    p, inside, dmin = _classify(verts, tris, cx, cy, r)
    full = 0.5 * np.abs(
        (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
        - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    )
    out = np.where(inside, full, 0.0)
    cut = np.nonzero(~inside & (dmin < r))[0]
    for i in cut:
        q = p[i]
        out[i] = tri_disk_area_single(q[0, 0], q[0, 1], q[1, 0], q[1, 1], q[2, 0], q[2, 1], r)
    return out


def _inside_tri(q, x, y, tol):
    s = 0
    for k in range(3):
        ax, ay = q[k]
        bx, by = q[(k + 1) % 3]
        c = (bx - ax) * (y - ay) - (by - ay) * (x - ax)
        scale = abs(bx - ax) + abs(by - ay)
        if c > tol * scale:
            s |= 1
        elif c < -tol * scale:
            s |= 2
    return s != 3


def tri_circle_arcs(verts, tris, cx, cy, r):
    """Angular intervals of the circle |x - c| = r lying inside each triangle.

    Returns ``(owner, phi0, phi1)`` with ``phi0`` in (-pi, pi] and
    ``phi1 > phi0`` (possibly beyond pi).
    """
    verts = np.asarray(verts, dtype=float)
    tris = np.asarray(tris, dtype=np.int64)
    p, inside, dmin = _classify(verts, tris, cx, cy, r)
    dmax = np.sqrt(np.max(np.einsum("mki,mki->mk", p, p), axis=1))
    cand = np.nonzero((dmin <= r) & (dmax >= r))[0]
    owner, a0, a1 = [], [], []
    r2 = r * r
    tol = 1e-12 * r
    for i in cand:
        q = p[i]
        angs = []
        for k in range(3):
            px, py = q[k]
            qx, qy = q[(k + 1) % 3]
            if abs(px * px + py * py - r2) <= 1e-14 * r2:
                angs.append(math.atan2(py, px))
            for t in _edge_crossings(px, py, qx, qy, r2):
                angs.append(math.atan2(py + t * (qy - py), px + t * (qx - px)))
        if not angs:
            if _inside_tri(q, r, 0.0, tol):
                owner.append(i)
                a0.append(-math.pi)
                a1.append(math.pi)
            continue
        angs.sort()
        n = len(angs)
        for k in range(n):
            lo = angs[k]
            hi = angs[k + 1] if k + 1 < n else angs[0] + 2.0 * math.pi
            if hi - lo < 1e-14:
                continue
            mid = 0.5 * (lo + hi)
            if _inside_tri(q, r * math.cos(mid), r * math.sin(mid), tol):
                owner.append(i)
                a0.append(lo)
                a1.append(hi)
    return (
        np.asarray(owner, dtype=np.int64),
        np.asarray(a0, dtype=float),
        np.asarray(a1, dtype=float),
    )
