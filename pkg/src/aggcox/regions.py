"""Aggregation regions: polygons with sampling effort and boundary models.

A region's geometry is a shapely Polygon or MultiPolygon. Invalid
(self-intersecting) input raises GeometryError; geometry is never silently
repaired. Stochastic boundary models produce fresh concrete polygons from a
numpy Generator; FIXED models pass through and consume no random draws.
"""

from dataclasses import dataclass

import numpy as np
from shapely.geometry import MultiPolygon, Polygon
from shapely.geometry.polygon import orient

from .errors import GeometryError


def _normalise(geom, region_id):
    if isinstance(geom, Polygon):
        parts = [geom]
    elif isinstance(geom, MultiPolygon):
        parts = list(geom.geoms)
    else:
        raise GeometryError(f"unsupported geometry type {geom.geom_type}", region_id)
    if not geom.is_valid:
        raise GeometryError("invalid (self-intersecting or degenerate) polygon", region_id)
    if geom.area <= 0.0:
        raise GeometryError("zero-area geometry", region_id)
    # exterior CCW, holes CW, so signed clip areas sum to net area
    oriented = [orient(p, sign=1.0) for p in parts]
    return MultiPolygon(oriented) if len(oriented) > 1 else oriented[0]


def _geometry_rings(geom):
    parts = geom.geoms if isinstance(geom, MultiPolygon) else [geom]
    rings = []
    for part in parts:
        rings.append(np.asarray(part.exterior.coords, dtype=np.float64))
        for hole in part.interiors:
            rings.append(np.asarray(hole.coords, dtype=np.float64))
    return rings


class Region:
    """One aggregation unit: id, polygonal geometry, sampling effort."""

    def __init__(self, region_id, geometry, effort=1.0, boundary_model=None):
        if effort <= 0:
            raise GeometryError("sampling effort must be positive", region_id)
        self.id = region_id
        self.geometry = _normalise(geometry, region_id)
        self.effort = float(effort)
        self.boundary_model = boundary_model
        self._rings = None

    @property
    def rings(self):
        """Orientation-normalised rings as float64 arrays (cached)."""
        if self._rings is None:
            self._rings = _geometry_rings(self.geometry)
        return self._rings

    @property
    def area(self):
        return self.geometry.area

    def with_geometry(self, geometry):
        return Region(self.id, geometry, self.effort, self.boundary_model)

    def __repr__(self):
        return f"Region({self.id!r}, area={self.area:.4g}, effort={self.effort:g})"


class RegionSet:
    """Ordered collection of regions with unique ids."""

    def __init__(self, regions):
        self.regions = list(regions)
        ids = [r.id for r in self.regions]
        if len(set(ids)) != len(ids):
            raise GeometryError("region ids must be unique")
        self._index = {r.id: k for k, r in enumerate(self.regions)}

    def __len__(self):
        return len(self.regions)

    def __iter__(self):
        return iter(self.regions)

    def __getitem__(self, k):
        return self.regions[k]

    def index_of(self, region_id):
        return self._index[region_id]

    @property
    def ids(self):
        return [r.id for r in self.regions]

    @property
    def efforts(self):
        return np.array([r.effort for r in self.regions])

    def boundary_models(self):
        """Per-region model list for realise_regions; FIXED where unset."""
        return [r.boundary_model if r.boundary_model is not None else FixedBoundary() for r in self.regions]

    def is_stochastic(self):
        return any(not isinstance(m, FixedBoundary) for m in self.boundary_models())


@dataclass(frozen=True)
class FixedBoundary:
    """Deterministic boundary: the region's own geometry, no draws consumed."""


@dataclass(frozen=True)
class ScaledBoundary:
    """Contract/expand the base polygon by a random positive factor about an anchor.

    `factor` draws the scale: either a callable rng -> float, or a
    (kind, params) spec with kind in {"fixed", "lognormal", "uniform"}.
    `anchor` defaults to the polygon centroid.
    """

    factor: object
    anchor: tuple = None

    def draw_factor(self, rng):
        if callable(self.factor):
            g = float(self.factor(rng))
        else:
            kind, params = self.factor
            if kind == "fixed":
                g = float(params["value"])
            elif kind == "lognormal":
                g = float(np.exp(rng.normal(params.get("mu", 0.0), params["sigma"])))
            elif kind == "uniform":
                g = float(rng.uniform(params["low"], params["high"]))
            else:
                raise GeometryError(f"unknown scale factor distribution {kind!r}")
        if not np.isfinite(g) or g <= 0:
            raise GeometryError(f"scale factor draw {g!r} is not a positive real")
        return g


@dataclass(frozen=True)
class MixtureBoundary:
    """Pick one of several candidate polygons with probability weight/sum(weights)."""

    polygons: tuple
    weights: tuple

    def __post_init__(self):
        if len(self.polygons) != len(self.weights) or not self.polygons:
            raise GeometryError("mixture needs matching, non-empty polygon and weight lists")
        w = np.asarray(self.weights, dtype=float)
        if np.any(w <= 0):
            raise GeometryError("mixture weights must be positive")

    @property
    def probabilities(self):
        w = np.asarray(self.weights, dtype=float)
        return w / w.sum()


def _scale_geometry(geom, factor, anchor):
    if anchor is None:
        c = geom.centroid
        ax, ay = c.x, c.y
    else:
        ax, ay = anchor
        minx, miny, maxx, maxy = geom.bounds
        if not (minx <= ax <= maxx and miny <= ay <= maxy):
            raise GeometryError(f"scale anchor ({ax}, {ay}) outside the polygon bounding box")

    def scale_ring(coords):
        arr = np.asarray(coords, dtype=float)
        return (ax, ay) + factor * (arr - (ax, ay))

    parts = geom.geoms if isinstance(geom, MultiPolygon) else [geom]
    out = []
    for p in parts:
        shell = scale_ring(p.exterior.coords)
        holes = [scale_ring(h.coords) for h in p.interiors]
        out.append(Polygon(shell, holes))
    return MultiPolygon(out) if len(out) > 1 else out[0]


def realise_regions(regions, rng, joint_draw=None):
    """Draw a concrete RegionSet from each region's boundary model.

    FIXED regions are passed through untouched (and consume no randomness,
    so an all-fixed set leaves `rng` in its incoming state). `joint_draw`,
    if given, is called as joint_draw(models, rng) and must return a list of
    per-region draw values (scale factors / mixture indices / None), allowing
    correlated boundary draws; entries left None fall back to independent
    draws.
    """
    models = regions.boundary_models()
    presets = [None] * len(models)
    if joint_draw is not None:
        presets = list(joint_draw(models, rng))
        if len(presets) != len(models):
            raise GeometryError("joint_draw must return one value per region")

    out = []
    for region, model, preset in zip(regions, models, presets):
        if isinstance(model, FixedBoundary):
            out.append(region)
        elif isinstance(model, ScaledBoundary):
            g = float(preset) if preset is not None else model.draw_factor(rng)
            if g <= 0:
                raise GeometryError("scale factor must be positive", region.id)
            out.append(region.with_geometry(_scale_geometry(region.geometry, g, model.anchor)))
        elif isinstance(model, MixtureBoundary):
            if preset is not None:
                idx = int(preset)
            else:
                idx = int(rng.choice(len(model.polygons), p=model.probabilities))
            out.append(region.with_geometry(model.polygons[idx]))
        else:
            raise GeometryError(f"unknown boundary model {type(model).__name__}", region.id)
    return RegionSet(out)
