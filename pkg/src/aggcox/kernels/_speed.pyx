# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled geometry kernels: ray-crossing point tests and rectangle clipping.

Semantics must stay identical to aggcox.kernels._pure; the dispatcher in
aggcox.kernels picks whichever is importable.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def ring_crossings(double[::1] px, double[::1] py, double[:, ::1] ring,
                   cnp.int64_t[::1] crossings):
    """Add each point's ray-crossing count against a closed ring into `crossings`."""
    cdef Py_ssize_t n = px.shape[0]
    cdef Py_ssize_t m = ring.shape[0]
    cdef Py_ssize_t i, k
    cdef double x1, y1, x2, y2, x, y
    if m < 2:
        return
    for k in range(m - 1):
        x1 = ring[k, 0]
        y1 = ring[k, 1]
        x2 = ring[k + 1, 0]
        y2 = ring[k + 1, 1]
        if y1 == y2:
            continue
        for i in range(n):
            y = py[i]
            if (y1 > y) != (y2 > y):
                x = px[i]
                if x < x1 + (x2 - x1) * (y - y1) / (y2 - y1):
                    crossings[i] += 1


def clip_ring_area(double[:, ::1] ring, double x0, double y0,
                   double x1, double y1, double snap=0.0):
    """Signed area of a ring clipped to the axis-aligned box [x0,x1]x[y0,y1].

    Sutherland-Hodgman against each box edge; the signed (shoelace) area of
    the clipped ring equals the signed area of the intersection because the
    clip window is convex. Vertices within `snap` of a clip line are snapped
    onto it before clipping.
    """
    cdef Py_ssize_t m = ring.shape[0]
    if m < 3:
        return 0.0
    # each of the four half-plane clips can at most double the vertex count
    cdef Py_ssize_t cap = 16 * m + 64
    cdef double[:, ::1] buf_a = np.empty((cap, 2), dtype=np.float64)
    cdef double[:, ::1] buf_b = np.empty((cap, 2), dtype=np.float64)
    cdef Py_ssize_t na = 0, nb, k
    cdef double vx, vy

    for k in range(m):
        vx = ring[k, 0]
        vy = ring[k, 1]
        if snap > 0.0:
            if vx - x0 < snap and vx - x0 > -snap:
                vx = x0
            elif vx - x1 < snap and vx - x1 > -snap:
                vx = x1
            if vy - y0 < snap and vy - y0 > -snap:
                vy = y0
            elif vy - y1 < snap and vy - y1 > -snap:
                vy = y1
        # drop the duplicated closing vertex; clipping treats the ring cyclically
        if k == m - 1 and na > 0 and vx == buf_a[0, 0] and vy == buf_a[0, 1]:
            continue
        buf_a[na, 0] = vx
        buf_a[na, 1] = vy
        na += 1

    # clip against x >= x0, x <= x1, y >= y0, y <= y1 in turn
    nb = _clip_half(buf_a, na, buf_b, 0, x0, 1.0)
    na = _clip_half(buf_b, nb, buf_a, 0, x1, -1.0)
    nb = _clip_half(buf_a, na, buf_b, 1, y0, 1.0)
    na = _clip_half(buf_b, nb, buf_a, 1, y1, -1.0)

    cdef double area2 = 0.0
    cdef Py_ssize_t j
    cdef double ax, ay, bx, by
    for k in range(na):
        j = k + 1
        if j == na:
            j = 0
        ax = buf_a[k, 0]
        ay = buf_a[k, 1]
        bx = buf_a[j, 0]
        by = buf_a[j, 1]
        area2 += ax * by - bx * ay
    return 0.5 * area2


cdef Py_ssize_t _clip_half(double[:, ::1] src, Py_ssize_t n,
                           double[:, ::1] dst, int axis, double bound,
                           double sign) noexcept:
    """Clip polygon `src[:n]` to the half-plane sign*(coord - bound) >= 0."""
    cdef Py_ssize_t out = 0
    cdef Py_ssize_t k, j
    cdef double cx, cy, nx, ny, dc, dn, t
    if n == 0:
        return 0
    for k in range(n):
        j = k + 1
        if j == n:
            j = 0
        cx = src[k, 0]
        cy = src[k, 1]
        nx = src[j, 0]
        ny = src[j, 1]
        dc = sign * ((cx if axis == 0 else cy) - bound)
        dn = sign * ((nx if axis == 0 else ny) - bound)
        if dc >= 0.0:
            dst[out, 0] = cx
            dst[out, 1] = cy
            out += 1
            if dn < 0.0:
                t = dc / (dc - dn)
                dst[out, 0] = cx + t * (nx - cx)
                dst[out, 1] = cy + t * (ny - cy)
                if axis == 0:
                    dst[out, 0] = bound
                else:
                    dst[out, 1] = bound
                out += 1
        elif dn >= 0.0:
            t = dc / (dc - dn)
            dst[out, 0] = cx + t * (nx - cx)
            dst[out, 1] = cy + t * (ny - cy)
            if axis == 0:
                dst[out, 0] = bound
            else:
                dst[out, 1] = bound
            out += 1
    return out


def ring_cell_areas(double[:, ::1] ring, double gx0, double gy0,
                    double dx, double dy, Py_ssize_t nx, Py_ssize_t ny,
                    double snap, double[::1] out):
    """Accumulate the ring's signed clipped area into every overlapped grid cell.

    `out` is the flat row-major (iy * nx + ix) cell array; only cells whose
    box intersects the ring's bounding box are visited.
    """
    cdef Py_ssize_t m = ring.shape[0]
    if m < 3:
        return
    cdef double bx0 = ring[0, 0], bx1 = ring[0, 0]
    cdef double by0 = ring[0, 1], by1 = ring[0, 1]
    cdef Py_ssize_t k
    for k in range(m):
        if ring[k, 0] < bx0: bx0 = ring[k, 0]
        if ring[k, 0] > bx1: bx1 = ring[k, 0]
        if ring[k, 1] < by0: by0 = ring[k, 1]
        if ring[k, 1] > by1: by1 = ring[k, 1]
    cdef Py_ssize_t ix0 = <Py_ssize_t>((bx0 - gx0) / dx)
    cdef Py_ssize_t ix1 = <Py_ssize_t>((bx1 - gx0) / dx)
    cdef Py_ssize_t iy0 = <Py_ssize_t>((by0 - gy0) / dy)
    cdef Py_ssize_t iy1 = <Py_ssize_t>((by1 - gy0) / dy)
    if ix0 < 0: ix0 = 0
    if iy0 < 0: iy0 = 0
    if ix1 > nx - 1: ix1 = nx - 1
    if iy1 > ny - 1: iy1 = ny - 1
    cdef Py_ssize_t ix, iy
    cdef double cx0, cy0, a
    for iy in range(iy0, iy1 + 1):
        cy0 = gy0 + iy * dy
        for ix in range(ix0, ix1 + 1):
            cx0 = gx0 + ix * dx
            a = clip_ring_area(ring, cx0, cy0, cx0 + dx, cy0 + dy, snap)
            if a != 0.0:
                out[iy * nx + ix] += a
