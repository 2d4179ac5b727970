"""Plain-text grid rasters and area-weighted resampling onto the model grid.

The format is the classic six-line-header ASCII grid: ncols, nrows,
xllcorner, yllcorner, cellsize, nodata_value, followed by nrows data lines
written north to south. Non-square cells are supported by giving two
values on the cellsize line. Values use %.17g so float64 round-trips
exactly.
"""

import numpy as np

from .errors import ConfigError
from .io import atomic_write_text


class Raster:
    """Rectangular raster: values[iy, ix] with iy=0 the southernmost row."""

    def __init__(self, values, x0, y0, dx, dy, nodata=-9999.0):
        self.values = np.asarray(values, dtype=float)
        if self.values.ndim != 2:
            raise ConfigError("raster values must be 2-d")
        self.x0 = float(x0)
        self.y0 = float(y0)
        self.dx = float(dx)
        self.dy = float(dy)
        self.nodata = float(nodata)

    @property
    def ny(self):
        return self.values.shape[0]

    @property
    def nx(self):
        return self.values.shape[1]

    @property
    def bbox(self):
        return (self.x0, self.y0, self.x0 + self.nx * self.dx, self.y0 + self.ny * self.dy)

    def mask(self):
        return self.values != self.nodata

    @classmethod
    def from_grid(cls, grid, flat_values, nodata=-9999.0):
        vals = np.asarray(flat_values, dtype=float).reshape(grid.ny, grid.nx)
        return cls(vals, grid.x0, grid.y0, grid.dx, grid.dy, nodata)


def read_raster(path):
    with open(path) as fh:
        header = {}
        for _ in range(6):
            parts = fh.readline().split()
            if len(parts) < 2:
                raise ConfigError(f"{path}: truncated raster header")
            header[parts[0].lower()] = parts[1:]
        data = np.loadtxt(fh, ndmin=2)
    try:
        nx = int(header["ncols"][0])
        ny = int(header["nrows"][0])
        x0 = float(header["xllcorner"][0])
        y0 = float(header["yllcorner"][0])
        cs = [float(v) for v in header["cellsize"]]
        nodata = float(header["nodata_value"][0])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: bad raster header ({exc})") from exc
    dx = cs[0]
    dy = cs[1] if len(cs) > 1 else cs[0]
    if data.shape != (ny, nx):
        raise ConfigError(f"{path}: data shape {data.shape} != header ({ny}, {nx})")
    # file rows run north->south; store south->north
    return Raster(data[::-1], x0, y0, dx, dy, nodata)


def write_raster(raster, path):
    if raster.dx == raster.dy:
        cell_line = f"cellsize {raster.dx:.17g}"
    else:
        cell_line = f"cellsize {raster.dx:.17g} {raster.dy:.17g}"
    lines = [
        f"ncols {raster.nx}",
        f"nrows {raster.ny}",
        f"xllcorner {raster.x0:.17g}",
        f"yllcorner {raster.y0:.17g}",
        cell_line,
        f"nodata_value {raster.nodata:.17g}",
    ]
    for row in raster.values[::-1]:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _overlap_weights(src0, src_d, src_n, dst0, dst_d, dst_n):
    """(dst_n, src_n) matrix of overlap lengths between 1-d cell ranges."""
    w = np.zeros((dst_n, src_n))
    src_edges = src0 + src_d * np.arange(src_n + 1)
    for k in range(dst_n):
        lo = dst0 + dst_d * k
        hi = lo + dst_d
        j0 = max(int(np.floor((lo - src0) / src_d)), 0)
        j1 = min(int(np.ceil((hi - src0) / src_d)), src_n)
        for j in range(j0, j1):
            w[k, j] = max(0.0, min(hi, src_edges[j + 1]) - max(lo, src_edges[j]))
    return w


def resample_to_grid(raster, grid):
    """Area-weighted average of the raster over each grid cell (flat vector).

    Nodata source cells are excluded and the remaining weights renormalised;
    a grid cell wholly outside the raster (or covered only by nodata) is an
    error. A raster already aligned with the grid passes through unchanged.
    """
    aligned = (
        raster.nx == grid.nx
        and raster.ny == grid.ny
        and np.isclose(raster.x0, grid.x0)
        and np.isclose(raster.y0, grid.y0)
        and np.isclose(raster.dx, grid.dx)
        and np.isclose(raster.dy, grid.dy)
    )
    if aligned and raster.mask().all():
        return raster.values.ravel().copy()

    wx = _overlap_weights(raster.x0, raster.dx, raster.nx, grid.x0, grid.dx, grid.nx)
    wy = _overlap_weights(raster.y0, raster.dy, raster.ny, grid.y0, grid.dy, grid.ny)
    vals = np.where(raster.mask(), raster.values, 0.0)
    good = raster.mask().astype(float)
    num = wy @ vals @ wx.T
    den = wy @ good @ wx.T
    if np.any(den <= 0):
        bad = int(np.argwhere(den <= 0)[0][1])
        raise ConfigError(
            f"grid cell column {bad} not covered by raster extent {raster.bbox} "
            f"(grid extent {grid.bbox})"
        )
    return (num / den).ravel()
