# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled clipping kernels (same contracts as ``_pykernels``)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, atan2, fabs, cos, sin, M_PI

cnp.import_array()


cdef inline int _crossings(double px, double py, double qx, double qy,
                           double r2, double* t) noexcept nogil:
    cdef double dx = qx - px, dy = qy - py
    cdef double a = dx * dx + dy * dy
    cdef double b, c, disc, s, t1, t2
    cdef int n = 0
    if a == 0.0:
        return 0
    b = 2.0 * (px * dx + py * dy)
    c = px * px + py * py - r2
    disc = b * b - 4.0 * a * c
    if disc <= 0.0:
        return 0
    s = sqrt(disc)
    t1 = (-b - s) / (2.0 * a)
    t2 = (-b + s) / (2.0 * a)
    if 0.0 < t1 < 1.0:
        t[n] = t1
        n += 1
    if 0.0 < t2 < 1.0 and t2 != t1:
        t[n] = t2
        n += 1
    return n


cdef inline double _sector_tri(double px, double py, double qx, double qy,
                               double r2) noexcept nogil:
    cdef double t[2]
    cdef double xs[4]
    cdef double ys[4]
    cdef int n = _crossings(px, py, qx, qy, r2, t)
    cdef int k, m
    cdef double area = 0.0, mx, my, cr
    xs[0] = px
    ys[0] = py
    for k in range(n):
        xs[k + 1] = px + t[k] * (qx - px)
        ys[k + 1] = py + t[k] * (qy - py)
    xs[n + 1] = qx
    ys[n + 1] = qy
    m = n + 2
    for k in range(m - 1):
        mx = 0.5 * (xs[k] + xs[k + 1])
        my = 0.5 * (ys[k] + ys[k + 1])
        cr = xs[k] * ys[k + 1] - ys[k] * xs[k + 1]
        if mx * mx + my * my <= r2:
            area += 0.5 * cr
        else:
            area += 0.5 * r2 * atan2(cr, xs[k] * xs[k + 1] + ys[k] * ys[k + 1])
    return area


cdef inline double _seg_dist2(double ax, double ay, double bx, double by) noexcept nogil:
    cdef double ex = bx - ax, ey = by - ay
    cdef double ee = ex * ex + ey * ey, t = 0.0, cx, cy
    if ee > 0.0:
        t = -(ax * ex + ay * ey) / ee
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
    cx = ax + t * ex
    cy = ay + t * ey
    return cx * cx + cy * cy


cdef inline bint _far(double x0, double y0, double x1, double y1,
                      double x2, double y2, double r2) noexcept nogil:
    """True when the triangle does not meet the open disk |x| < r."""
    cdef double c0 = x0 * y1 - y0 * x1
    cdef double c1 = x1 * y2 - y1 * x2
    cdef double c2 = x2 * y0 - y2 * x0
    if (c0 >= 0 and c1 >= 0 and c2 >= 0) or (c0 <= 0 and c1 <= 0 and c2 <= 0):
        return False
    return (_seg_dist2(x0, y0, x1, y1) >= r2 and _seg_dist2(x1, y1, x2, y2) >= r2
            and _seg_dist2(x2, y2, x0, y0) >= r2)


def tri_disk_areas(const double[:, ::1] verts, const cnp.int64_t[:, ::1] tris,
                   double cx, double cy, double r):
    cdef Py_ssize_t m = tris.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(m)
    cdef double[::1] o = out
    cdef double x0, y0, x1, y1, x2, y2, r2 = r * r
    with nogil:
        for i in range(m):
            x0 = verts[tris[i, 0], 0] - cx
            y0 = verts[tris[i, 0], 1] - cy
            x1 = verts[tris[i, 1], 0] - cx
            y1 = verts[tris[i, 1], 1] - cy
            x2 = verts[tris[i, 2], 0] - cx
            y2 = verts[tris[i, 2], 1] - cy
            if (x0 * x0 + y0 * y0 <= r2 and x1 * x1 + y1 * y1 <= r2
                    and x2 * x2 + y2 * y2 <= r2):
                o[i] = 0.5 * fabs((x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0))
            elif _far(x0, y0, x1, y1, x2, y2, r2):
                o[i] = 0.0
            else:
                o[i] = fabs(_sector_tri(x0, y0, x1, y1, r2)
                            + _sector_tri(x1, y1, x2, y2, r2)
                            + _sector_tri(x2, y2, x0, y0, r2))
    return out


cdef inline bint _inside(double* qx, double* qy, double x, double y,
                         double tol) noexcept nogil:
    cdef int s = 0, k, j
    cdef double c, scale
    for k in range(3):
        j = (k + 1) % 3
        c = (qx[j] - qx[k]) * (y - qy[k]) - (qy[j] - qy[k]) * (x - qx[k])
        scale = fabs(qx[j] - qx[k]) + fabs(qy[j] - qy[k])
        if c > tol * scale:
            s |= 1
        elif c < -tol * scale:
            s |= 2
    return s != 3


cdef inline void _sort(double* a, int n) noexcept nogil:
    cdef int i, j
    cdef double v
    for i in range(1, n):
        v = a[i]
        j = i - 1
        while j >= 0 and a[j] > v:
            a[j + 1] = a[j]
            j -= 1
        a[j + 1] = v


def tri_circle_arcs(const double[:, ::1] verts, const cnp.int64_t[:, ::1] tris,
                    double cx, double cy, double r):
    cdef Py_ssize_t m = tris.shape[0], i, cnt = 0
    cdef cnp.ndarray[cnp.int64_t, ndim=1] owner = np.empty(3 * m, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] a0 = np.empty(3 * m)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] a1 = np.empty(3 * m)
    cdef cnp.int64_t[::1] ow = owner
    cdef double[::1] lo_v = a0
    cdef double[::1] hi_v = a1
    cdef double qx[3]
    cdef double qy[3]
    cdef double angs[9]
    cdef double t[2]
    cdef double r2 = r * r, tol = 1e-12 * r, d2, dmax2, lo, hi, mid
    cdef int k, j, n, nc, c, near
    with nogil:
        for i in range(m):
            dmax2 = 0.0
            near = 0
            for k in range(3):
                qx[k] = verts[tris[i, k], 0] - cx
                qy[k] = verts[tris[i, k], 1] - cy
                d2 = qx[k] * qx[k] + qy[k] * qy[k]
                if d2 > dmax2:
                    dmax2 = d2
            if dmax2 < r2:
                continue
            n = 0
            for k in range(3):
                j = (k + 1) % 3
                if fabs(qx[k] * qx[k] + qy[k] * qy[k] - r2) <= 1e-14 * r2:
                    angs[n] = atan2(qy[k], qx[k])
                    n += 1
                nc = _crossings(qx[k], qy[k], qx[j], qy[j], r2, t)
                for c in range(nc):
                    angs[n] = atan2(qy[k] + t[c] * (qy[j] - qy[k]),
                                    qx[k] + t[c] * (qx[j] - qx[k]))
                    n += 1
            if n == 0:
                if _inside(qx, qy, r, 0.0, tol):
                    ow[cnt] = i
                    lo_v[cnt] = -M_PI
                    hi_v[cnt] = M_PI
                    cnt += 1
                continue
            _sort(angs, n)
            for k in range(n):
                lo = angs[k]
                if k + 1 < n:
                    hi = angs[k + 1]
                else:
                    hi = angs[0] + 2.0 * M_PI
                if hi - lo < 1e-14:
                    continue
                mid = 0.5 * (lo + hi)
                if _inside(qx, qy, r * cos(mid), r * sin(mid), tol):
                    ow[cnt] = i
                    lo_v[cnt] = lo
                    hi_v[cnt] = hi
                    cnt += 1
    return owner[:cnt].copy(), a0[:cnt].copy(), a1[:cnt].copy()
