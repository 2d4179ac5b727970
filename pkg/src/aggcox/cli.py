"""Command-line surface: simulate, prepare, fit, predict, aggregate.

Every run writes a deterministic manifest (config digest, seed, library
versions, input/output digests) into the output directory, so identical
configurations produce identical manifests byte for byte.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from .allocation import EffortWeights, exact_q
from .config import RunConfig, load_dataset
from .errors import AggcoxError, ConfigError
from .io import (
    atomic_npz,
    atomic_write_text,
    read_regions,
    sha256_bytes,
    sha256_file,
    save_chain,
    load_chain,
    write_manifest,
)
from .partition import build_partition, load_partition, save_partition
from .postprocess import exceedance, predictive_counts, reaggregate
from .rasters import Raster, write_raster
from .sampler import run_fixed, run_stochastic
from .simulate import (
    TrueParams,
    huff_catchments,
    make_tile_regions,
    simulate_dataset,
    smooth_covariates,
)
from .covariance import CovarianceParams
from .spectral import SpectralFactory

log = logging.getLogger("aggcox")


def _partition_digest(config, regions_path):
    blob = json.dumps(config.grid.to_dict(), sort_keys=True).encode()
    with open(regions_path, "rb") as fh:
        blob += fh.read()
    return sha256_bytes(blob)


def _cache_path(config, digest):
    return os.path.join(config.output_dir, "cache", f"partition_{digest[:16]}.npz")


def _get_partition(config, grid, regions, regions_path):
    """Load the cached partition when the (grid, regions) digest matches."""
    digest = _partition_digest(config, regions_path)
    path = _cache_path(config, digest)
    if os.path.exists(path):
        log.info("reusing cached partition %s", path)
        return load_partition(path, grid, regions), path, digest, True
    part = build_partition(grid, regions)
    save_partition(part, path)
    return part, path, digest, False


def cmd_prepare(config, args):
    regions_path = config.resolve(config.paths["regions"])
    regions = read_regions(regions_path)
    part, path, digest, reused = _get_partition(config, config.grid, regions, regions_path)
    if args.dump_tables:
        from .allocation import dump_allocation_diagnostics, make_allocation_table
        from .model import make_state

        factory = SpectralFactory(config.grid)
        state = make_state(
            np.zeros((config.grid.n_times, config.grid.n_ext)),
            np.zeros(1), np.log(0.5), np.log(0.1 * config.grid.dx * config.grid.nx),
            0.0 if config.grid.n_times > 1 else None, factory,
        )
        table = make_allocation_table(part, state, weights=EffortWeights.from_regions(regions))
        dump_allocation_diagnostics(part, table, os.path.join(config.output_dir, "allocation_tables.tsv"))
    write_manifest(
        os.path.join(config.output_dir, "manifest_prepare.json"),
        command="prepare",
        config_digest=config.digest(),
        seed=config.seed,
        inputs={config.paths["regions"]: sha256_file(regions_path)},
        outputs={os.path.relpath(path, config.output_dir): sha256_file(path)},
        extra={"cache_digest": digest, "reused": reused},
    )
    print(f"partition cache: {path} ({'reused' if reused else 'built'})")
    return 0


def cmd_fit(config, args):
    grid, regions, T_obs, spec = load_dataset(config)
    regions_path = config.resolve(config.paths["regions"])
    cfg_kwargs = {}
    if args.seed is not None:
        cfg_kwargs["seed"] = args.seed
    sampler_cfg = config.sampler_config(**cfg_kwargs)
    if sampler_cfg.checkpoint_every:
        sampler_cfg.checkpoint_path = os.path.join(config.output_dir, "checkpoint.npz")

    if regions.is_stochastic():
        chain = run_stochastic(spec, regions, T_obs, sampler_cfg, resume_from=args.resume)
    else:
        part, _, _, _ = _get_partition(config, grid, regions, regions_path)
        chain = run_fixed(spec, regions, T_obs, sampler_cfg, partition=part,
                          resume_from=args.resume)

    os.makedirs(config.output_dir, exist_ok=True)
    chain_path = os.path.join(config.output_dir, "chain.npz")
    save_chain(chain, chain_path)
    params_path = os.path.join(config.output_dir, "chain_params.csv")
    _write_params_table(chain, params_path)

    if args.dump_spectrum:
        factory = SpectralFactory(grid)
        op = factory.operator(CovarianceParams(1.0, float(np.exp(np.median(chain.log_phi)))))
        atomic_npz(os.path.join(config.output_dir, "spectrum.npz"),
                   {"eigenvalues": op.eigenvalues, "neg_count": np.array([op.neg_count]),
                    "trunc_mass": np.array([op.trunc_mass])})

    write_manifest(
        os.path.join(config.output_dir, "manifest_fit.json"),
        command="fit",
        config_digest=config.digest(),
        seed=sampler_cfg.seed,
        inputs={
            config.paths["regions"]: sha256_file(regions_path),
            config.paths["counts"]: sha256_file(config.resolve(config.paths["counts"])),
        },
        outputs={
            "chain.npz": sha256_file(chain_path),
            "chain_params.csv": sha256_file(params_path),
        },
    )
    print(f"chain: {chain_path} ({chain.n_retained} samples, "
          f"acceptance {chain.acceptance_rate:.3f})")
    return 0


def _write_params_table(chain, path):
    names = chain.covariate_names or [f"beta{k}" for k in range(chain.beta.shape[1])]
    cols = [f"beta_{n}" for n in names] + ["log_sigma", "log_phi"]
    mats = [chain.beta, chain.log_sigma[:, None], chain.log_phi[:, None]]
    if chain.log_theta is not None:
        cols.append("log_theta")
        mats.append(chain.log_theta[:, None])
    data = np.hstack(mats)
    lines = ["sample," + ",".join(cols)]
    for s in range(data.shape[0]):
        lines.append(str(s) + "," + ",".join(f"{v:.17g}" for v in data[s]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def cmd_predict(config, args):
    grid, regions, T_obs, spec = load_dataset(config)
    chain = load_chain(os.path.join(config.output_dir, "chain.npz"))
    seed = (config.seed if args.seed is None else args.seed) + 1
    rng = np.random.default_rng(seed)

    thresholds = config.thresholds()
    exc = exceedance(chain, thresholds)
    outputs = {}
    for t in range(grid.n_times):
        p_mean = os.path.join(config.output_dir, f"mean_y_t{t}.asc")
        write_raster(Raster.from_grid(grid, exc.mean_y[t]), p_mean)
        outputs[os.path.basename(p_mean)] = sha256_file(p_mean)
        p_risk = os.path.join(config.output_dir, f"mean_risk_t{t}.asc")
        write_raster(Raster.from_grid(grid, exc.mean_risk[t]), p_risk)
        outputs[os.path.basename(p_risk)] = sha256_file(p_risk)
        for c_i, c in enumerate(exc.thresholds):
            p_exc = os.path.join(config.output_dir, f"exceedance_t{t}_c{c:g}.asc")
            write_raster(Raster.from_grid(grid, exc.probabilities[c_i, t]), p_exc)
            outputs[os.path.basename(p_exc)] = sha256_file(p_exc)
            if args.png:
                _render_png(exc.probabilities[c_i, t], grid,
                            p_exc.replace(".asc", ".png"),
                            f"P(risk > {c:g}), t={t}")

    draws = predictive_counts(chain, spec, rng)
    draws_path = os.path.join(config.output_dir, "predictive_draws.npz")
    atomic_npz(draws_path, {"draws": draws, "seed": np.array([seed])})
    outputs["predictive_draws.npz"] = sha256_file(draws_path)

    qs = config.quantiles("predict")
    summary_path = os.path.join(config.output_dir, "predictive_summary.csv")
    _write_predictive_summary(draws, qs, summary_path)
    outputs["predictive_summary.csv"] = sha256_file(summary_path)

    write_manifest(
        os.path.join(config.output_dir, "manifest_predict.json"),
        command="predict",
        config_digest=config.digest(),
        seed=seed,
        outputs=outputs,
    )
    print(f"predictive draws: {draws_path} ({draws.shape[0]} samples)")
    return 0


def _write_predictive_summary(draws, qs, path):
    S, T, n = draws.shape
    quants = np.quantile(draws, qs, axis=0)
    lines = ["cell,time,mean," + ",".join(f"q{100 * q:g}" for q in qs)]
    mean = draws.mean(axis=0)
    for t in range(T):
        for j in range(n):
            row = [str(j), str(t), f"{mean[t, j]:.17g}"]
            row += [f"{quants[k, t, j]:.17g}" for k in range(len(qs))]
            lines.append(",".join(row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _render_png(values, grid, path, title):
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib unavailable; skipping %s", path)
        return
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(values.reshape(grid.ny, grid.nx), origin="lower",
                   extent=grid.bbox, vmin=0, vmax=1, cmap="viridis")
    fig.colorbar(im, ax=ax)
    ax.set_title(title)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_aggregate(config, args):
    grid = config.grid
    agg = config.doc.get("aggregate", {})
    if "new_regions" not in agg:
        raise ConfigError("aggregate: missing 'new_regions' path")
    new_regions = read_regions(config.resolve(agg["new_regions"]))

    draws_path = os.path.join(config.output_dir, "predictive_draws.npz")
    if os.path.exists(draws_path):
        with np.load(draws_path) as z:
            draws = z["draws"]
    else:
        _, _, _, spec = load_dataset(config)
        chain = load_chain(os.path.join(config.output_dir, "chain.npz"))
        seed = (config.seed if args.seed is None else args.seed) + 1
        draws = predictive_counts(chain, spec, np.random.default_rng(seed))

    result = reaggregate(draws, new_regions, grid)
    qs = config.quantiles("aggregate")
    quants = result.quantiles(qs)
    table_path = os.path.join(config.output_dir, "reaggregation.csv")
    lines = ["region_id,time,mean," + ",".join(f"q{100 * q:g}" for q in qs)]
    means = result.values.mean(axis=0)
    for r, rid in enumerate(result.region_ids):
        for t in range(result.values.shape[2]):
            row = [str(rid), str(t), f"{means[r, t]:.17g}"]
            row += [f"{quants[k, r, t]:.17g}" for k in range(len(qs))]
            lines.append(",".join(row))
    atomic_write_text(table_path, "\n".join(lines) + "\n")

    write_manifest(
        os.path.join(config.output_dir, "manifest_aggregate.json"),
        command="aggregate",
        config_digest=config.digest(),
        seed=config.seed,
        inputs={agg["new_regions"]: sha256_file(config.resolve(agg["new_regions"]))},
        outputs={"reaggregation.csv": sha256_file(table_path)},
    )
    print(f"reaggregation table: {table_path}")
    return 0


def cmd_simulate(config, args):
    sim = config.doc.get("simulate")
    if not sim:
        raise ConfigError("config has no 'simulate' section")
    seed = args.seed if args.seed is not None else sim.get("seed", config.seed)
    rng = np.random.default_rng(seed)
    grid = config.grid

    truth = sim.get("truth", {})
    beta = np.asarray(truth.get("beta", [0.0]), dtype=float)
    cov = CovarianceParams(
        float(truth.get("sigma", 0.5)),
        float(truth.get("phi", 0.1 * (grid.bbox[2] - grid.bbox[0]))),
        float(truth.get("theta", 1.0)),
    )

    cov_spec = sim.get("covariates", {"kind": "none"})
    Z = None
    if cov_spec.get("kind") == "smooth":
        n_cov = int(cov_spec.get("count", beta.size - 1))
        if n_cov != beta.size - 1:
            raise ConfigError(
                f"simulate: {n_cov} covariates but beta has {beta.size} components "
                f"(intercept + one per covariate)"
            )
        if n_cov > 0:
            Z = smooth_covariates(grid, n_cov, rng)
    elif cov_spec.get("kind") not in (None, "none"):
        raise ConfigError(f"simulate.covariates.kind {cov_spec.get('kind')!r} not supported")

    off_spec = sim.get("offset", {"kind": "uniform", "value": 1.0})
    offset = None
    if off_spec.get("kind") == "uniform" and float(off_spec.get("value", 1.0)) != 1.0:
        offset = np.full((grid.n_times, grid.n_cells), float(off_spec["value"]))

    reg_spec = sim.get("regions", {"kind": "tiles", "nx": 3, "ny": 3, "buffer": 0.0})
    efforts = sim.get("efforts")
    kind = reg_spec.get("kind", "tiles")
    if kind == "tiles":
        regions = make_tile_regions(
            grid, int(reg_spec.get("nx", 3)), int(reg_spec.get("ny", 3)),
            buffer=float(reg_spec.get("buffer", 0.0)), efforts=efforts,
        )
    elif kind == "huff":
        regions = huff_catchments(
            np.asarray(reg_spec["facilities"], dtype=float), grid,
            float(reg_spec.get("delta", -2.0)), float(reg_spec.get("cutoff", 0.2)),
            efforts=efforts,
        )
    elif kind == "file":
        regions = read_regions(config.resolve(reg_spec["path"]))
    else:
        raise ConfigError(f"simulate.regions.kind {kind!r} not supported")

    dataset = simulate_dataset(grid, regions, TrueParams(beta, cov), rng,
                               covariates=Z, offset=offset)
    dataset.seed = seed
    outdir = os.path.join(config.output_dir, "dataset")
    dataset.save(outdir)
    # a coarse 2x2 partition for the re-aggregation workflow demo
    from .io import write_regions

    write_regions(make_tile_regions(grid, 2, 2),
                  os.path.join(outdir, "new_regions.geojson"))
    write_manifest(
        os.path.join(config.output_dir, "manifest_simulate.json"),
        command="simulate",
        config_digest=config.digest(),
        seed=seed,
        outputs={"dataset/counts.csv": sha256_file(os.path.join(outdir, "counts.csv"))},
    )
    print(f"dataset: {outdir} ({int(dataset.T_obs.sum())} reported events, "
          f"{dataset.dropped} dropped)")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "prepare": cmd_prepare,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "aggregate": cmd_aggregate,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="aggcox",
        description="Continuous LGCP inference for aggregated count data",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", required=True, help="run configuration JSON")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if name == "fit":
            p.add_argument("--resume", default=None, help="resume from a checkpoint file")
            p.add_argument("--dump-spectrum", action="store_true",
                           help="write the covariance eigenvalue field")
        if name == "prepare":
            p.add_argument("--dump-tables", action="store_true",
                           help="write per-cell allocation diagnostics")
        if name == "predict":
            p.add_argument("--png", action="store_true", help="also render exceedance PNGs")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    if os.environ.get("AGGCOX_THREADS"):
        os.environ.setdefault("OMP_NUM_THREADS", os.environ["AGGCOX_THREADS"])

    try:
        config = RunConfig.load(args.config)
        os.makedirs(config.output_dir, exist_ok=True)
        return COMMANDS[args.command](config, args)
    except AggcoxError as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 2
    except FileNotFoundError as exc:
        sys.stderr.write(json.dumps({"error": "FileNotFoundError", "message": str(exc)}) + "\n")
        return 2
    except Exception as exc:  # unexpected
        logging.exception("unexpected failure")
        return 1


if __name__ == "__main__":
    sys.exit(main())
