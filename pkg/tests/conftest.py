import numpy as np
import pytest
from shapely.geometry import Polygon, box

from aggcox.grid import build_grid
from aggcox.regions import Region, RegionSet


@pytest.fixture
def unit_grid():
    return build_grid((0, 0, 1, 1), 4, 4, times=[0.0], extension=2)


def random_rect(rng, bbox=(0, 0, 1, 1), min_side=0.15):
    x0, y0, x1, y1 = bbox
    w, h = x1 - x0, y1 - y0
    ax = rng.uniform(x0, x1 - min_side * w)
    ay = rng.uniform(y0, y1 - min_side * h)
    bx = rng.uniform(ax + min_side * w, x1)
    by = rng.uniform(ay + min_side * h, y1)
    return box(ax, ay, bx, by)


def random_quad(rng, bbox=(0, 0, 1, 1)):
    """Random convex quadrilateral: four points on a jittered ellipse."""
    x0, y0, x1, y1 = bbox
    cx = rng.uniform(x0 + 0.25 * (x1 - x0), x1 - 0.25 * (x1 - x0))
    cy = rng.uniform(y0 + 0.25 * (y1 - y0), y1 - 0.25 * (y1 - y0))
    rx = rng.uniform(0.15, 0.45) * (x1 - x0)
    ry = rng.uniform(0.15, 0.45) * (y1 - y0)
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=4))
    pts = [(cx + rx * np.cos(a), cy + ry * np.sin(a)) for a in angles]
    poly = Polygon(pts)
    if not poly.is_valid or poly.area <= 1e-6:
        return random_rect(rng, bbox)
    return poly


def random_region_set(rng, n_regions, bbox=(0, 0, 1, 1), quads=False):
    make = random_quad if quads else random_rect
    return RegionSet(
        [
            Region(f"r{k}", make(rng, bbox), effort=float(rng.uniform(0.5, 2.0)))
            for k in range(n_regions)
        ]
    )


def mc_area(geom, cell_bounds, n_points, rng):
    """Uniform-sampling estimate of |geom ∩ cell| with its standard error."""
    x0, y0, x1, y1 = cell_bounds
    px = rng.uniform(x0, x1, size=n_points)
    py = rng.uniform(y0, y1, size=n_points)
    from shapely import contains_xy

    hit = contains_xy(geom, px, py)
    cell_area = (x1 - x0) * (y1 - y0)
    p = hit.mean()
    se = np.sqrt(max(p * (1 - p), 1e-12) / n_points)
    return p * cell_area, se * cell_area
