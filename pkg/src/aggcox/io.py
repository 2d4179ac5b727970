"""File formats: GeoJSON regions, counts tables, chains, manifests.

All writes are atomic (temp file + rename). Numeric text output uses %.17g
so parsed values round-trip float64 exactly; manifests contain no
timestamps, making identical runs byte-identical.
"""

import csv
import hashlib
import io as _io
import json
import os
import tempfile

import numpy as np
from shapely.geometry import mapping, shape

from .allocation import AugmentedCounts
from .errors import ConfigError, GeometryError
from .regions import FixedBoundary, MixtureBoundary, Region, RegionSet, ScaledBoundary


def atomic_write_bytes(path, data):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode())


def atomic_npz(path, arrays):
    buf = _io.BytesIO()
    np.savez(buf, **arrays)
    atomic_write_bytes(path, buf.getvalue())


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def sha256_file(path):
    with open(path, "rb") as fh:
        return sha256_bytes(fh.read())


# -- regions (GeoJSON feature collection) -----------------------------------


def _boundary_model_from_json(obj):
    if obj is None:
        return None
    kind = obj.get("type")
    if kind == "fixed":
        return FixedBoundary()
    if kind == "scale":
        dist = obj.get("distribution")
        if not dist or "kind" not in dist:
            raise ConfigError("scale boundary model needs a 'distribution' object")
        params = {k: v for k, v in dist.items() if k != "kind"}
        anchor = obj.get("anchor")
        return ScaledBoundary(factor=(dist["kind"], params),
                              anchor=tuple(anchor) if anchor else None)
    if kind == "mixture":
        polys = [shape(g) for g in obj.get("polygons", [])]
        weights = obj.get("weights", [])
        return MixtureBoundary(tuple(polys), tuple(weights))
    raise ConfigError(f"unknown boundary model type {kind!r}")


def _boundary_model_to_json(model):
    if model is None or isinstance(model, FixedBoundary):
        return None
    if isinstance(model, ScaledBoundary):
        if callable(model.factor):
            raise ConfigError("callable scale distributions cannot be serialised")
        kind, params = model.factor
        out = {"type": "scale", "distribution": {"kind": kind, **params}}
        if model.anchor is not None:
            out["anchor"] = list(model.anchor)
        return out
    if isinstance(model, MixtureBoundary):
        return {
            "type": "mixture",
            "polygons": [mapping(p) for p in model.polygons],
            "weights": list(model.weights),
        }
    raise ConfigError(f"cannot serialise boundary model {type(model).__name__}")


def read_regions(path):
    """Load a RegionSet from a GeoJSON feature collection.

    Per-feature properties: `id` (required unless a top-level feature `id`
    exists), `effort` (default 1.0), optional `boundary_model`.
    """
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise ConfigError(f"{path}: expected a GeoJSON FeatureCollection")
    regions = []
    for k, feat in enumerate(doc.get("features", [])):
        props = feat.get("properties") or {}
        rid = props.get("id", feat.get("id"))
        if rid is None:
            raise ConfigError(f"{path}: feature {k} has no id")
        try:
            geom = shape(feat["geometry"])
        except Exception as exc:
            raise GeometryError(f"unparseable geometry ({exc})", rid) from exc
        regions.append(
            Region(
                rid,
                geom,
                effort=float(props.get("effort", 1.0)),
                boundary_model=_boundary_model_from_json(props.get("boundary_model")),
            )
        )
    if not regions:
        raise ConfigError(f"{path}: no features")
    return RegionSet(regions)


def write_regions(regions, path):
    feats = []
    for r in regions:
        props = {"id": r.id, "effort": r.effort}
        bm = _boundary_model_to_json(r.boundary_model)
        if bm is not None:
            props["boundary_model"] = bm
        feats.append({"type": "Feature", "properties": props, "geometry": mapping(r.geometry)})
    atomic_write_text(path, json.dumps({"type": "FeatureCollection", "features": feats}, indent=1))


# -- counts table ------------------------------------------------------------


def read_counts(path, region_ids, n_times):
    """Counts CSV (region_id, time_index, count) -> (n_regions, n_times) matrix.

    Missing combinations default to zero; unknown ids, bad indices and
    negative or fractional counts are structured errors.
    """
    index = {str(rid): k for k, rid in enumerate(region_ids)}
    T = np.zeros((len(region_ids), n_times), dtype=np.int64)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"region_id", "time_index", "count"}
        if reader.fieldnames is None or not need.issubset(set(reader.fieldnames)):
            raise ConfigError(f"{path}: counts file needs columns {sorted(need)}")
        for row_no, row in enumerate(reader, start=2):
            rid = row["region_id"].strip()
            if rid not in index:
                raise ConfigError(f"{path}:{row_no}: unknown region id {rid!r}")
            try:
                t = int(row["time_index"])
                c_raw = float(row["count"])
            except ValueError as exc:
                raise ConfigError(f"{path}:{row_no}: {exc}") from exc
            if not (0 <= t < n_times):
                raise ConfigError(f"{path}:{row_no}: time index {t} outside 0..{n_times - 1}")
            c = int(c_raw)
            if c != c_raw or c < 0:
                raise ConfigError(f"{path}:{row_no}: count must be a nonnegative integer")
            T[index[rid], t] += c
    return T


def write_counts(T_obs, region_ids, path):
    T_obs = np.atleast_2d(T_obs)
    lines = ["region_id,time_index,count"]
    for k, rid in enumerate(region_ids):
        for t in range(T_obs.shape[1]):
            lines.append(f"{rid},{t},{int(T_obs[k, t])}")
    atomic_write_text(path, "\n".join(lines) + "\n")


# -- chain output -------------------------------------------------------------


def alloc_to_coo(alloc_samples):
    """Allocation matrices -> sparse COO arrays (nonzero entries only)."""
    s_l, r_l, t_l, c_l, v_l = [], [], [], [], []
    for s, aug in enumerate(alloc_samples):
        for i, (cells, cnt) in enumerate(zip(aug.cells, aug.counts)):
            tt, kk = np.nonzero(cnt)
            s_l.append(np.full(tt.size, s, dtype=np.int64))
            r_l.append(np.full(tt.size, i, dtype=np.int64))
            t_l.append(tt.astype(np.int64))
            c_l.append(np.asarray(cells)[kk].astype(np.int64))
            v_l.append(cnt[tt, kk].astype(np.int64))
    cat = lambda parts: np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
    return {
        "alloc_sample": cat(s_l),
        "alloc_region": cat(r_l),
        "alloc_time": cat(t_l),
        "alloc_cell": cat(c_l),
        "alloc_count": cat(v_l),
    }


def coo_to_alloc(arrays, totals, n_cells, n_samples):
    """Rebuild per-sample AugmentedCounts from COO arrays (nonzero support)."""
    out = []
    sample = arrays["alloc_sample"]
    for s in range(n_samples):
        sel = sample == s
        cells_by_region, counts_by_region = [], []
        for i in range(totals.shape[0]):
            pick = sel & (arrays["alloc_region"] == i)
            cells = np.unique(arrays["alloc_cell"][pick])
            cnt = np.zeros((totals.shape[1], cells.size), dtype=np.int64)
            pos = {int(c): k for k, c in enumerate(cells)}
            for t, c, v in zip(
                arrays["alloc_time"][pick], arrays["alloc_cell"][pick], arrays["alloc_count"][pick]
            ):
                cnt[int(t), pos[int(c)]] += int(v)
            cells_by_region.append(cells)
            counts_by_region.append(cnt)
        out.append(AugmentedCounts(cells_by_region, counts_by_region, n_cells, totals))
    return out


def save_chain(chain, path):
    arrays = {
        "beta": chain.beta,
        "log_sigma": chain.log_sigma,
        "log_phi": chain.log_phi,
        "y": chain.y,
        "n_latent": chain.n_latent,
        "accept_trace": chain.accept_trace,
        "logpost_trace": chain.logpost_trace,
        "step_trace": chain.step_trace,
        "seed": np.array([chain.seed], dtype=np.int64),
        "covariate_names": np.array(chain.covariate_names, dtype="U64"),
    }
    if chain.log_theta is not None:
        arrays["log_theta"] = chain.log_theta
    if chain.alloc:
        arrays.update(alloc_to_coo(chain.alloc))
        arrays["alloc_totals"] = chain.alloc[0].totals
        arrays["alloc_n_cells"] = np.array([chain.alloc[0].n_cells], dtype=np.int64)
    atomic_npz(path, arrays)


def load_chain(path):
    from .sampler import ChainOutput

    with np.load(path, allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files}
    alloc = []
    if "alloc_sample" in arrays:
        alloc = coo_to_alloc(
            arrays,
            arrays["alloc_totals"],
            int(arrays["alloc_n_cells"][0]),
            arrays["beta"].shape[0],
        )
    return ChainOutput(
        beta=arrays["beta"],
        log_sigma=arrays["log_sigma"],
        log_phi=arrays["log_phi"],
        log_theta=arrays.get("log_theta"),
        y=arrays["y"],
        n_latent=arrays["n_latent"],
        alloc=alloc,
        accept_trace=arrays["accept_trace"],
        logpost_trace=arrays["logpost_trace"],
        step_trace=arrays["step_trace"],
        seed=int(arrays["seed"][0]),
        covariate_names=[str(s) for s in arrays.get("covariate_names", [])],
    )


# -- manifests ----------------------------------------------------------------


def write_manifest(path, command, config_digest, seed, inputs=None, outputs=None, extra=None):
    """Deterministic run manifest: config digest, seed, versions, file digests."""
    import shapely

    from . import __version__

    doc = {
        "schema": 1,
        "command": command,
        "config_digest": config_digest,
        "seed": seed,
        "versions": {
            "aggcox": __version__,
            "numpy": np.__version__,
            "shapely": shapely.__version__,
        },
        "inputs": inputs or {},
        "outputs": outputs or {},
    }
    if extra:
        doc["extra"] = extra
    doc["digest"] = sha256_bytes(json.dumps(doc, sort_keys=True).encode())
    atomic_write_text(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return doc
