"""Pure-numpy fallback for the compiled geometry kernels.

Same functions and semantics as aggcox.kernels._speed; used when the
extension is unavailable or disabled via AGGCOX_DISABLE_EXT=1.
"""

import numpy as np


def ring_crossings(px, py, ring, crossings):
    """Add each point's ray-crossing count against a closed ring into `crossings`."""
    m = ring.shape[0]
    if m < 2:
        return
    x1 = ring[:-1, 0]
    y1 = ring[:-1, 1]
    x2 = ring[1:, 0]
    y2 = ring[1:, 1]
    keep = y1 != y2
    x1, y1, x2, y2 = x1[keep], y1[keep], x2[keep], y2[keep]
    if x1.size == 0:
        return
    # vectorise over points edge by edge to bound memory use
    for k in range(x1.size):
        straddles = (y1[k] > py) != (y2[k] > py)
        if not straddles.any():
            continue
        xs = x1[k] + (x2[k] - x1[k]) * (py[straddles] - y1[k]) / (y2[k] - y1[k])
        hit = np.zeros(px.shape[0], dtype=bool)
        hit[straddles] = px[straddles] < xs
        crossings[hit] += 1


def _clip_half(poly, axis, bound, sign):
    """Clip polygon vertex list to the half-plane sign*(coord - bound) >= 0."""
    out = []
    n = len(poly)
    for k in range(n):
        cx, cy = poly[k]
        nx, ny = poly[(k + 1) % n]
        dc = sign * ((cx if axis == 0 else cy) - bound)
        dn = sign * ((nx if axis == 0 else ny) - bound)
        if dc >= 0.0:
            out.append((cx, cy))
            if dn < 0.0:
                t = dc / (dc - dn)
                p = (cx + t * (nx - cx), cy + t * (ny - cy))
                out.append((bound, p[1]) if axis == 0 else (p[0], bound))
        elif dn >= 0.0:
            t = dc / (dc - dn)
            p = (cx + t * (nx - cx), cy + t * (ny - cy))
            out.append((bound, p[1]) if axis == 0 else (p[0], bound))
    return out


def clip_ring_area(ring, x0, y0, x1, y1, snap=0.0):
    """Signed area of a ring clipped to the axis-aligned box [x0,x1]x[y0,y1]."""
    m = ring.shape[0]
    if m < 3:
        return 0.0
    poly = []
    for k in range(m):
        vx, vy = ring[k, 0], ring[k, 1]
        if snap > 0.0:
            if abs(vx - x0) < snap:
                vx = x0
            elif abs(vx - x1) < snap:
                vx = x1
            if abs(vy - y0) < snap:
                vy = y0
            elif abs(vy - y1) < snap:
                vy = y1
        if k == m - 1 and poly and (vx, vy) == poly[0]:
            continue
        poly.append((vx, vy))

    poly = _clip_half(poly, 0, x0, 1.0)
    poly = _clip_half(poly, 0, x1, -1.0)
    poly = _clip_half(poly, 1, y0, 1.0)
    poly = _clip_half(poly, 1, y1, -1.0)
    if len(poly) < 3:
        return 0.0
    xs = np.array([p[0] for p in poly])
    ys = np.array([p[1] for p in poly])
    return 0.5 * float(np.sum(xs * np.roll(ys, -1) - np.roll(xs, -1) * ys))


def ring_cell_areas(ring, gx0, gy0, dx, dy, nx, ny, snap, out):
    """Accumulate the ring's signed clipped area into every overlapped grid cell."""
    m = ring.shape[0]
    if m < 3:
        return
    bx0, by0 = ring.min(axis=0)
    bx1, by1 = ring.max(axis=0)
    ix0 = max(int((bx0 - gx0) / dx), 0)
    ix1 = min(int((bx1 - gx0) / dx), nx - 1)
    iy0 = max(int((by0 - gy0) / dy), 0)
    iy1 = min(int((by1 - gy0) / dy), ny - 1)
    for iy in range(iy0, iy1 + 1):
        cy0 = gy0 + iy * dy
        for ix in range(ix0, ix1 + 1):
            cx0 = gx0 + ix * dx
            a = clip_ring_area(ring, cx0, cy0, cx0 + dx, cy0 + dy, snap)
            if a != 0.0:
                out[iy * nx + ix] += a
