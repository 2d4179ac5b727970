"""Geometry kernels: compiled core with a pure-numpy fallback.

The compiled extension (aggcox.kernels._speed) is preferred; set
AGGCOX_DISABLE_EXT=1 to force the fallback. `USING_EXTENSION` records which
implementation is live. Higher-level helpers (point classification against
region sets) are composed here on top of whichever backend was selected.
"""

import os

import numpy as np

if os.environ.get("AGGCOX_DISABLE_EXT", "0") == "1":
    from . import _pure as _impl

    USING_EXTENSION = False
else:
    try:
        from . import _speed as _impl

        USING_EXTENSION = True
    except ImportError:
        from . import _pure as _impl

        USING_EXTENSION = False

ring_crossings = _impl.ring_crossings
clip_ring_area = _impl.clip_ring_area
ring_cell_areas = _impl.ring_cell_areas


def points_in_rings(px, py, rings):
    """Even-odd membership of points in a polygon given as a list of rings.

    Holes and multipolygon parts are handled by crossing parity over all
    rings. Returns a boolean array.
    """
    px = np.ascontiguousarray(px, dtype=np.float64)
    py = np.ascontiguousarray(py, dtype=np.float64)
    crossings = np.zeros(px.shape[0], dtype=np.int64)
    for ring in rings:
        ring_crossings(px, py, np.ascontiguousarray(ring, dtype=np.float64), crossings)
    return (crossings % 2).astype(bool)


def membership_matrix(px, py, ring_sets):
    """Boolean (npoints, nsets) matrix of point membership in each ring set."""
    px = np.ascontiguousarray(px, dtype=np.float64)
    py = np.ascontiguousarray(py, dtype=np.float64)
    out = np.empty((px.shape[0], len(ring_sets)), dtype=bool)
    for i, rings in enumerate(ring_sets):
        out[:, i] = points_in_rings(px, py, rings)
    return out


def rings_box_area(rings, x0, y0, x1, y1, snap=0.0):
    """Net area of a (multi)polygon's intersection with an axis-aligned box.

    Rings must be orientation-normalised: exteriors counter-clockwise,
    holes clockwise; the signed clipped areas then sum to the net area.
    """
    total = 0.0
    for ring in rings:
        total += clip_ring_area(
            np.ascontiguousarray(ring, dtype=np.float64), x0, y0, x1, y1, snap
        )
    return max(total, 0.0)
