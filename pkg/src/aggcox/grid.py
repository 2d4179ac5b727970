"""Computational grid: regular cells in space, discrete time points.

Cells are indexed row-major, j = iy * nx + ix, with ix increasing along x
and iy along y from the grid origin (lower-left corner).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class Grid:
    x0: float
    y0: float
    dx: float
    dy: float
    nx: int
    ny: int
    extension: int = 2
    times: tuple = (0.0,)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ConfigError("grid dimensions must be >= 1")
        if self.dx <= 0 or self.dy <= 0:
            raise ConfigError("cell sizes must be positive")
        if self.extension < 1:
            raise ConfigError("extension factor must be >= 1")
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 1:
            raise ConfigError("times must be a non-empty 1-d sequence")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ConfigError("times must be strictly increasing")
        object.__setattr__(self, "times", tuple(float(v) for v in t))

    @property
    def n_cells(self):
        return self.nx * self.ny

    @property
    def n_times(self):
        return len(self.times)

    @property
    def cell_area(self):
        return self.dx * self.dy

    @property
    def time_gaps(self):
        """delta_t between consecutive time points, length T-1."""
        return np.diff(np.asarray(self.times, dtype=float))

    @property
    def ext_nx(self):
        return self.nx * self.extension

    @property
    def ext_ny(self):
        return self.ny * self.extension

    @property
    def n_ext(self):
        return self.ext_nx * self.ext_ny

    @property
    def bbox(self):
        return (self.x0, self.y0, self.x0 + self.nx * self.dx, self.y0 + self.ny * self.dy)

    def centroids(self):
        """(n_cells, 2) centroid coordinates in cell-index order."""
        cx = self.x0 + (np.arange(self.nx) + 0.5) * self.dx
        cy = self.y0 + (np.arange(self.ny) + 0.5) * self.dy
        xx, yy = np.meshgrid(cx, cy)
        return np.column_stack([xx.ravel(), yy.ravel()])

    def cell_bounds(self, j):
        """(x0, y0, x1, y1) of cell j."""
        iy, ix = divmod(int(j), self.nx)
        cx0 = self.x0 + ix * self.dx
        cy0 = self.y0 + iy * self.dy
        return (cx0, cy0, cx0 + self.dx, cy0 + self.dy)

    def to_dict(self):
        return {
            "bbox": list(self.bbox),
            "nx": self.nx,
            "ny": self.ny,
            "extension": self.extension,
            "times": list(self.times),
        }


def build_grid(bbox, nx, ny, times=(0.0,), extension=2):
    """Build a Grid covering `bbox` = (x0, y0, x1, y1) with nx-by-ny cells."""
    x0, y0, x1, y1 = (float(v) for v in bbox)
    if not (x1 > x0 and y1 > y0):
        raise ConfigError(f"degenerate bbox {bbox!r}")
    if nx < 1 or ny < 1:
        raise ConfigError("nx and ny must be >= 1")
    return Grid(
        x0=x0,
        y0=y0,
        dx=(x1 - x0) / nx,
        dy=(y1 - y0) / ny,
        nx=int(nx),
        ny=int(ny),
        extension=int(extension),
        times=tuple(times),
    )
