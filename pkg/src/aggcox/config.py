"""Run configuration: one declarative JSON file drives all subcommands.

Unknown keys are rejected everywhere so typos fail loudly. Paths are
resolved relative to the config file's directory.
"""

import json
import os

import numpy as np

from .errors import ConfigError
from .grid import build_grid
from .io import read_counts, read_regions, sha256_bytes
from .model import ModelSpec
from .rasters import read_raster, resample_to_grid
from .sampler import SamplerConfig

SCHEMA_VERSION = 1

_TOP_KEYS = {"schema_version", "seed", "paths", "grid", "model", "sampler",
             "predict", "aggregate", "simulate"}
_PATH_KEYS = {"regions", "counts", "covariates", "offset", "output"}
_GRID_KEYS = {"bbox", "nx", "ny", "extension", "times"}
_MODEL_KEYS = {"standardize_covariates", "priors"}
_PRIOR_KEYS = {"beta_mean", "beta_sd", "log_sigma", "log_phi", "log_theta"}
_SAMPLER_KEYS = {"iterations", "burnin", "thin", "resample_every", "step_size",
                 "target_accept", "allocation_method", "mc_points", "n_gamma",
                 "fixed", "checkpoint_every"}
_PREDICT_KEYS = {"thresholds", "quantiles"}
_AGGREGATE_KEYS = {"new_regions", "quantiles"}
_SIMULATE_KEYS = {"seed", "truth", "covariates", "offset", "regions", "efforts"}


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(allowed)}")


def _require(obj, key, where):
    if key not in obj:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return obj[key]


class RunConfig:
    """Validated view over a config file plus path resolution."""

    def __init__(self, doc, base_dir="."):
        _check_keys(doc, _TOP_KEYS, "config")
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(
                f"config: schema_version must be {SCHEMA_VERSION}, got {doc.get('schema_version')!r}"
            )
        self.doc = doc
        self.base_dir = base_dir
        self.seed = int(doc.get("seed", 0))

        g = _require(doc, "grid", "config")
        _check_keys(g, _GRID_KEYS, "grid")
        self.grid = build_grid(
            _require(g, "bbox", "grid"),
            _require(g, "nx", "grid"),
            _require(g, "ny", "grid"),
            times=g.get("times", [0.0]),
            extension=g.get("extension", 2),
        )

        p = _require(doc, "paths", "config")
        _check_keys(p, _PATH_KEYS, "paths")
        self.paths = p

        _check_keys(doc.get("model", {}), _MODEL_KEYS, "model")
        _check_keys(doc.get("model", {}).get("priors", {}), _PRIOR_KEYS, "model.priors")
        _check_keys(doc.get("sampler", {}), _SAMPLER_KEYS, "sampler")
        _check_keys(doc.get("predict", {}), _PREDICT_KEYS, "predict")
        _check_keys(doc.get("aggregate", {}), _AGGREGATE_KEYS, "aggregate")
        if "simulate" in doc:
            _check_keys(doc["simulate"], _SIMULATE_KEYS, "simulate")

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls(doc, base_dir=os.path.dirname(os.path.abspath(path)))

    def resolve(self, rel):
        return rel if os.path.isabs(rel) else os.path.join(self.base_dir, rel)

    @property
    def output_dir(self):
        return self.resolve(_require(self.paths, "output", "paths"))

    def digest(self):
        return sha256_bytes(json.dumps(self.doc, sort_keys=True).encode())

    def sampler_config(self, seed=None, **overrides):
        s = dict(self.doc.get("sampler", {}))
        fixed = tuple(s.pop("fixed", ()))
        cfg = SamplerConfig(seed=self.seed if seed is None else seed, fixed=fixed,
                            **s, **overrides)
        return cfg

    def priors(self):
        pr = self.doc.get("model", {}).get("priors", {})
        out = {}
        if "beta_mean" in pr:
            out["beta_mean"] = np.asarray(pr["beta_mean"], dtype=float)
        if "beta_sd" in pr:
            out["beta_sd"] = np.asarray(pr["beta_sd"], dtype=float)
        for key, name in (("log_sigma", "log_sigma_prior"), ("log_phi", "log_phi_prior"),
                          ("log_theta", "log_theta_prior")):
            if key in pr:
                pair = pr[key]
                if not (isinstance(pair, (list, tuple)) and len(pair) == 2):
                    raise ConfigError(f"model.priors.{key}: expected [mean, sd]")
                out[name] = (float(pair[0]), float(pair[1]))
        return out

    def thresholds(self):
        return list(self.doc.get("predict", {}).get("thresholds", [2.0]))

    def quantiles(self, section="predict"):
        return tuple(self.doc.get(section, {}).get("quantiles", (0.025, 0.5, 0.975)))


def _raster_stack(config, entry, grid):
    """One covariate entry -> (T, n_cells) array; str = static, list = per time."""
    T = grid.n_times
    if isinstance(entry, str):
        vals = resample_to_grid(read_raster(config.resolve(entry)), grid)
        return np.broadcast_to(vals, (T, grid.n_cells)).copy()
    if isinstance(entry, list):
        if len(entry) != T:
            raise ConfigError(f"per-time raster list has {len(entry)} entries for T={T}")
        return np.stack([resample_to_grid(read_raster(config.resolve(e)), grid) for e in entry])
    raise ConfigError(f"raster entry must be a path or list of paths, got {type(entry).__name__}")


def load_dataset(config):
    """(grid, regions, T_obs, ModelSpec) from a validated RunConfig.

    Covariate and offset rasters are projected onto the inferential grid by
    area-weighted averaging; covariates are standardised to mean 0, sd 1
    unless model.standardize_covariates is false.
    """
    grid = config.grid
    regions = read_regions(config.resolve(_require(config.paths, "regions", "paths")))
    T_obs = read_counts(
        config.resolve(_require(config.paths, "counts", "paths")), regions.ids, grid.n_times
    )

    cov_entries = config.paths.get("covariates", [])
    names = []
    Z = None
    if cov_entries:
        stacks = []
        for entry in cov_entries:
            stacks.append(_raster_stack(config, entry, grid))
            name = entry if isinstance(entry, str) else entry[0]
            names.append(os.path.splitext(os.path.basename(name))[0])
        Z = np.stack(stacks, axis=2)
        if config.doc.get("model", {}).get("standardize_covariates", True):
            mu = Z.mean(axis=(0, 1), keepdims=True)
            sd = Z.std(axis=(0, 1), keepdims=True)
            if np.any(sd <= 0):
                raise ConfigError("cannot standardise a constant covariate")
            Z = (Z - mu) / sd

    offset_entry = config.paths.get("offset")
    offset = _raster_stack(config, offset_entry, grid) if offset_entry else None
    if offset is not None and np.any(offset < 0):
        raise ConfigError("offset raster has negative values")

    spec = ModelSpec(grid, covariates=Z, offset=offset, covariate_names=names or None,
                     **config.priors())
    return grid, regions, T_obs, spec
