"""Synthetic data generation: LGCP fields, points, regions, reported counts.

Everything is a pure function of (inputs, seed) so datasets regenerate
bit-exactly. Points are scattered uniformly within their cell, matching the
piecewise-constant intensity of the grid model.
"""

import json
import logging
import os
from dataclasses import dataclass

import numpy as np
from shapely.geometry import box

from . import kernels
from .covariance import CovarianceParams
from .errors import ConfigError, GeometryError
from .regions import Region, RegionSet
from .spectral import SpectralFactory

log = logging.getLogger(__name__)


def simulate_lgcp(grid, spec, params, rng, factory=None):
    """Draw (Y, N, points) from the grid-level model at `params`.

    params : CovarianceParams or (beta, CovarianceParams) via spec below.
        The regression coefficients are read from `params.beta` when
        present, else zeros.
    Returns Y (T, n_cells), N (T, n_cells) ints, and a list over time of
    (N_t, 2) point-coordinate arrays.
    """
    if factory is None:
        factory = SpectralFactory(grid)
    beta = np.asarray(getattr(params, "beta", np.zeros(spec.n_beta)), dtype=float)
    cov = params.cov if hasattr(params, "cov") else params
    T = grid.n_times

    gamma = np.empty((T, grid.n_ext))
    gamma[0] = rng.standard_normal(grid.n_ext)
    if T > 1:
        a = np.exp(-cov.theta * grid.time_gaps)
        for t in range(1, T):
            gamma[t] = a[t - 1] * gamma[t - 1] + np.sqrt(1 - a[t - 1] ** 2) * rng.standard_normal(grid.n_ext)

    op = factory.operator(cov)
    y = np.empty((T, grid.n_cells))
    for t in range(T):
        y[t] = -0.5 * cov.sigma**2 + op.restrict(op.apply(gamma[t], sigma=cov.sigma))

    rate = grid.cell_area * spec.offset * np.exp(spec.design @ beta + y)
    counts = rng.poisson(rate)

    points = []
    for t in range(T):
        pts = np.empty((int(counts[t].sum()), 2))
        pos = 0
        for j in np.nonzero(counts[t])[0]:
            k = int(counts[t, j])
            x0, y0_, x1, y1 = grid.cell_bounds(j)
            pts[pos : pos + k, 0] = rng.uniform(x0, x1, size=k)
            pts[pos : pos + k, 1] = rng.uniform(y0_, y1, size=k)
            pos += k
        points.append(pts)
    return y, counts, points


@dataclass
class TrueParams:
    """Generating parameter bundle for synthetic datasets."""

    beta: np.ndarray
    cov: CovarianceParams


def buffer_regions(base, buffer, window, quad_segs=16):
    """Offset every region outward by `buffer` and crop to `window`.

    window : (x0, y0, x1, y1) or a shapely geometry. Buffer 0 is the
    identity (geometries pass through untouched).
    """
    if buffer < 0:
        raise GeometryError("buffer must be nonnegative")
    if buffer == 0:
        return base
    win = box(*window) if not hasattr(window, "intersection") else window
    out = []
    for r in base:
        g = r.geometry.buffer(buffer, quad_segs=quad_segs).intersection(win)
        if g.is_empty or g.area <= 0:
            raise GeometryError("buffered region fell outside the window", r.id)
        out.append(Region(r.id, g, r.effort, r.boundary_model))
    return RegionSet(out)


def huff_probabilities(facilities, grid, delta):
    """(n_cells, n_facilities) attendance probabilities p = d^delta / sum d^delta.

    Distances are Euclidean between cell centroids and facilities, floored
    at half a cell diagonal so a facility sitting on a centroid stays
    finite. delta < 0 makes utility decay with distance.
    """
    fac = np.asarray(facilities, dtype=float).reshape(-1, 2)
    cent = grid.centroids()
    d = np.hypot(cent[:, None, 0] - fac[None, :, 0], cent[:, None, 1] - fac[None, :, 1])
    floor = 0.5 * np.hypot(grid.dx, grid.dy)
    d = np.maximum(d, floor)
    u = d**delta
    return u / u.sum(axis=1, keepdims=True)


def huff_catchments(facilities, grid, delta, cutoff, efforts=None, ids=None):
    """Facility catchments: cells whose attendance probability >= cutoff.

    Returns naturally overlapping regions, each the union of its cells.
    """
    if not (0.0 < cutoff < 1.0):
        raise ConfigError(f"cutoff must be in (0, 1), got {cutoff}")
    p = huff_probabilities(facilities, grid, delta)
    n_fac = p.shape[1]
    efforts = np.ones(n_fac) if efforts is None else np.asarray(efforts, float)
    ids = ids or [f"facility_{k}" for k in range(n_fac)]
    from shapely.ops import unary_union

    out = []
    for f in range(n_fac):
        cells = np.nonzero(p[:, f] >= cutoff)[0]
        if cells.size == 0:
            raise GeometryError(f"cutoff {cutoff} leaves facility {ids[f]} with no cells")
        geom = unary_union([box(*grid.cell_bounds(int(j))) for j in cells])
        out.append(Region(ids[f], geom, effort=float(efforts[f])))
    return RegionSet(out)


def report_counts(points, regions, weights, rng):
    """Aggregate points to per-region totals under effort-weighted reporting.

    Each point inside at least one region is reported by exactly one of the
    regions containing it, picked with probability e_i / sum of efforts over
    its membership signature. Points outside every region are dropped (the
    count is logged). `points` is one (n, 2) array per time slice.

    Returns (T_obs, n_dropped).
    """
    if isinstance(points, np.ndarray):
        points = [points]
    m = len(regions)
    ring_sets = [r.rings for r in regions]
    T_obs = np.zeros((m, len(points)), dtype=np.int64)
    dropped = 0
    for t, pts in enumerate(points):
        if len(pts) == 0:
            continue
        member = kernels.membership_matrix(pts[:, 0], pts[:, 1], ring_sets)
        for row in member:
            sig = tuple(np.nonzero(row)[0])
            if not sig:
                dropped += 1
                continue
            if len(sig) == 1:
                T_obs[sig[0], t] += 1
                continue
            probs = np.array([weights.weight(i, sig) for i in sig])
            T_obs[sig[int(rng.choice(len(sig), p=probs))], t] += 1
    if dropped:
        log.info("report_counts dropped %d point(s) outside all regions", dropped)
    return T_obs, dropped


@dataclass
class SyntheticDataset:
    """A complete generated problem: truth, regions, reported totals, seed."""

    grid: object
    params: TrueParams
    y: np.ndarray
    n: np.ndarray
    points: list
    regions: RegionSet
    T_obs: np.ndarray
    dropped: int
    seed: int
    covariates: np.ndarray = None  # (T, n_cells, K) raw covariates
    offset: np.ndarray = None

    def save(self, outdir):
        """Write regions, counts, truth/covariate rasters and a manifest."""
        from .io import write_counts, write_manifest, write_regions
        from .rasters import Raster, write_raster

        os.makedirs(outdir, exist_ok=True)
        write_regions(self.regions, os.path.join(outdir, "regions.geojson"))
        write_counts(self.T_obs, self.regions.ids, os.path.join(outdir, "counts.csv"))
        for t in range(self.grid.n_times):
            write_raster(Raster.from_grid(self.grid, self.y[t]),
                         os.path.join(outdir, f"truth_y_t{t}.asc"))
            write_raster(Raster.from_grid(self.grid, self.n[t].astype(float)),
                         os.path.join(outdir, f"truth_n_t{t}.asc"))
        if self.covariates is not None:
            for k in range(self.covariates.shape[2]):
                for t in range(self.grid.n_times):
                    write_raster(Raster.from_grid(self.grid, self.covariates[t, :, k]),
                                 os.path.join(outdir, f"cov{k}_t{t}.asc"))
        if self.offset is not None:
            for t in range(self.grid.n_times):
                write_raster(Raster.from_grid(self.grid, self.offset[t]),
                             os.path.join(outdir, f"offset_t{t}.asc"))
        truth = {
            "seed": self.seed,
            "beta": list(map(float, self.params.beta)),
            "sigma": self.params.cov.sigma,
            "phi": self.params.cov.phi,
            "theta": self.params.cov.theta,
            "dropped_points": self.dropped,
            "grid": self.grid.to_dict(),
        }
        from .io import atomic_write_text

        atomic_write_text(os.path.join(outdir, "truth.json"), json.dumps(truth, indent=1))
        write_manifest(
            os.path.join(outdir, "manifest.json"),
            command="simulate",
            config_digest="",
            seed=self.seed,
        )


def make_tile_regions(grid, tiles_x, tiles_y, buffer=0.0, efforts=None):
    """Rectangular tiling of the grid window, optionally buffered to overlap."""
    x0, y0, x1, y1 = grid.bbox
    wx = (x1 - x0) / tiles_x
    wy = (y1 - y0) / tiles_y
    out = []
    k = 0
    for iy in range(tiles_y):
        for ix in range(tiles_x):
            geom = box(x0 + ix * wx, y0 + iy * wy, x0 + (ix + 1) * wx, y0 + (iy + 1) * wy)
            e = 1.0 if efforts is None else float(efforts[k])
            out.append(Region(f"tile_{ix}_{iy}", geom, effort=e))
            k += 1
    base = RegionSet(out)
    if buffer > 0:
        base = buffer_regions(base, buffer, grid.bbox)
    return base


def smooth_covariates(grid, n_covariates, rng, phi_frac=0.25, factory=None):
    """Standardised smooth random fields for use as synthetic covariates."""
    if factory is None:
        factory = SpectralFactory(grid)
    x0, y0, x1, y1 = grid.bbox
    cov = CovarianceParams(1.0, phi_frac * min(x1 - x0, y1 - y0))
    op = factory.operator(cov)
    T = grid.n_times
    out = np.empty((T, grid.n_cells, n_covariates))
    for k in range(n_covariates):
        z = op.restrict(op.apply(rng.standard_normal(grid.n_ext), sigma=1.0))
        z = (z - z.mean()) / z.std()
        out[:, :, k] = z[None, :]
    return out


def simulate_dataset(grid, regions, params, rng_or_seed, covariates=None, offset=None,
                     weights=None):
    """simulate_lgcp + report_counts bundled into a saved-ready dataset."""
    from .allocation import EffortWeights
    from .model import ModelSpec

    seed = rng_or_seed if isinstance(rng_or_seed, (int, np.integer)) else None
    rng = np.random.default_rng(rng_or_seed) if seed is not None else rng_or_seed
    spec = ModelSpec(grid, covariates=covariates, offset=offset)
    y, n, points = simulate_lgcp(grid, spec, params, rng)
    w = weights or EffortWeights.from_regions(regions)
    T_obs, dropped = report_counts(points, regions, w, rng)
    return SyntheticDataset(
        grid=grid, params=params, y=y, n=n, points=points, regions=regions,
        T_obs=T_obs, dropped=dropped, seed=seed if seed is not None else -1,
        covariates=covariates, offset=spec.offset,
    )
