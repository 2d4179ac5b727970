"""Adaptive MALA within the data-augmentation Gibbs scheme.

One driver implements both fixed and stochastic regions: the chain
alternates `resample_every` Langevin updates of (beta, eta, Y) | N with a
multinomial redraw of N | (beta, eta, Y, T). When any region carries a
stochastic boundary model, each redraw first realises fresh boundaries and
rebuilds the cell partition; fixed regions keep the initial partition, so
an all-fixed run through the stochastic entry point reproduces the fixed
run bit for bit under the same seed.

The Langevin proposal acts jointly on the whitened fields, the regression
coefficients, and the log hyperparameters; the step size follows a
Robbins-Monro recursion toward the target acceptance rate during burn-in
and is frozen afterwards.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .allocation import EffortWeights, draw_augmented_counts, initialise_counts, make_allocation_table
from .errors import ConfigError, ModelError, SpectralError
from .model import LatentState, log_target, make_state
from .partition import build_partition
from .regions import realise_regions
from .spectral import SpectralFactory

TARGET_ACCEPT = 0.574  # optimal-scaling target for MALA


@dataclass
class SamplerConfig:
    iterations: int = 10000
    burnin: int = None  # default: 2% of iterations
    thin: int = None  # default: retain ~1000 samples
    resample_every: int = 10
    step_size: float = 0.1
    target_accept: float = TARGET_ACCEPT
    seed: int = 0
    allocation_method: str = "exact"  # or "mc"
    mc_points: int = 1000
    n_gamma: int = 1
    fixed: tuple = ()  # subset of {"beta", "sigma", "phi", "theta"}
    adapt_exponent: float = 0.6
    tail_every: int = 2  # interleave a (beta, eta)-block step every k iterations
    tail_step_size: float = 0.1
    checkpoint_every: int = 0
    checkpoint_path: str = None
    init_state: LatentState = None
    keep_alloc: bool = True

    def __post_init__(self):
        if self.burnin is None:
            self.burnin = max(int(0.02 * self.iterations), 1)
        if self.thin is None:
            self.thin = max((self.iterations - self.burnin) // 1000, 1)
        if not (0 <= self.burnin < self.iterations):
            raise ConfigError("need 0 <= burnin < iterations")
        if self.thin < 1 or self.resample_every < 1:
            raise ConfigError("thin and resample_every must be >= 1")
        if self.allocation_method not in ("exact", "mc"):
            raise ConfigError(f"unknown allocation method {self.allocation_method!r}")
        unknown = set(self.fixed) - {"beta", "sigma", "phi", "theta"}
        if unknown:
            raise ConfigError(f"cannot fix unknown blocks {sorted(unknown)}")

    @property
    def n_retained(self):
        return (self.iterations - self.burnin) // self.thin


class _Layout:
    """Flat packing of (Gamma, beta, log sigma, log phi[, log theta])."""

    def __init__(self, n_times, n_ext, n_beta, has_theta, fixed, gamma_free=True):
        self.n_times = n_times
        self.n_ext = n_ext
        self.n_beta = n_beta
        self.has_theta = has_theta
        self.phi_free = "phi" not in fixed
        g = n_times * n_ext
        self.size = g + n_beta + 2 + (1 if has_theta else 0)
        free = np.ones(self.size, dtype=bool)
        if not gamma_free:
            free[:g] = False
        if "beta" in fixed:
            free[g : g + n_beta] = False
        if "sigma" in fixed:
            free[g + n_beta] = False
        if "phi" in fixed:
            free[g + n_beta + 1] = False
        if has_theta and "theta" in fixed:
            free[g + n_beta + 2] = False
        self.free = free

    def tail_view(self):
        """Same packing with the whitened-field block frozen."""
        fixed = []
        g = self.n_times * self.n_ext
        if not self.free[g : g + self.n_beta].any():
            fixed.append("beta")
        if not self.free[g + self.n_beta]:
            fixed.append("sigma")
        if not self.free[g + self.n_beta + 1]:
            fixed.append("phi")
        if self.has_theta and not self.free[g + self.n_beta + 2]:
            fixed.append("theta")
        return _Layout(self.n_times, self.n_ext, self.n_beta, self.has_theta,
                       tuple(fixed), gamma_free=False)

    def pack(self, state):
        parts = [state.gamma.ravel(), state.beta, [state.log_sigma, state.log_phi]]
        if self.has_theta:
            parts.append([state.log_theta])
        return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])

    def pack_grad(self, g):
        parts = [g.gamma.ravel(), g.beta, [g.log_sigma, g.log_phi]]
        if self.has_theta:
            parts.append([g.log_theta])
        return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])

    def unpack(self, vec, factory):
        g = self.n_times * self.n_ext
        gamma = vec[:g].reshape(self.n_times, self.n_ext)
        beta = vec[g : g + self.n_beta]
        log_sigma = float(vec[g + self.n_beta])
        log_phi = float(vec[g + self.n_beta + 1])
        log_theta = float(vec[g + self.n_beta + 2]) if self.has_theta else None
        return make_state(gamma, beta, log_sigma, log_phi, log_theta, factory)


@dataclass
class MalaResult:
    state: LatentState
    accepted: bool
    alpha: float
    value: float
    grad_vec: np.ndarray


def _safe_target(state, counts, spec, factory, layout):
    """Target evaluation for proposals: any failure means certain rejection.

    SpectralError (range too large for the grid) and ModelError (degenerate
    AR variance from an extreme theta) both mark zero-density states here;
    structural problems are caught by the loud check=True evaluation the
    driver performs at the initial state.
    """
    try:
        value, grad = log_target(state, counts, spec, factory, grad=True,
                                 phi_grad=layout.phi_free)
    except (SpectralError, ModelError):
        return -np.inf, None
    if not np.isfinite(value):
        return -np.inf, None
    return value, layout.pack_grad(grad)


def mala_step(state, counts, spec, factory, step_size, rng, layout=None, current=None,
              fixed=(), precond=None):
    """One Metropolis-adjusted Langevin step on the free coordinates.

    `current` may carry (value, grad_vec) at `state` to avoid a recompute.
    `precond` is an optional per-coordinate variance vector D: the proposal
    is x + (h^2/2) D g + h sqrt(D) z (plain MALA when omitted); the
    acceptance ratio uses the same D both ways, so any fixed D is exact.
    Proposals with non-finite target (including spectral failures from an
    extreme range proposal) are rejected automatically.
    """
    if layout is None:
        layout = _Layout(
            state.gamma.shape[0], state.gamma.shape[1], state.beta.size,
            state.log_theta is not None, fixed,
        )
    if current is None:
        value, grad_vec = _safe_target(state, counts, spec, factory, layout)
        if grad_vec is None:
            raise ModelError("log target is not finite at the current state")
    else:
        value, grad_vec = current

    x = layout.pack(state)
    free = layout.free
    h = step_size
    d = np.ones(free.sum()) if precond is None else precond[free]
    sqrt_d = np.sqrt(d)
    # exactly two rng events per step regardless of the accept/reject path
    noise = rng.standard_normal(int(free.sum()))
    log_u = np.log(rng.uniform())
    drift_x = 0.5 * h * h * d * grad_vec[free]
    x_new = x.copy()
    x_new[free] = x[free] + drift_x + h * sqrt_d * noise

    try:
        prop = layout.unpack(x_new, factory)
    except SpectralError:
        return MalaResult(state, False, 0.0, value, grad_vec)
    value_new, grad_new = _safe_target(prop, counts, spec, factory, layout)
    if grad_new is None:
        return MalaResult(state, False, 0.0, value, grad_vec)

    drift_new = 0.5 * h * h * d * grad_new[free]
    fwd = x_new[free] - x[free] - drift_x
    bwd = x[free] - x_new[free] - drift_new
    log_q_fwd = -float((fwd / sqrt_d) @ (fwd / sqrt_d)) / (2 * h * h)
    log_q_bwd = -float((bwd / sqrt_d) @ (bwd / sqrt_d)) / (2 * h * h)
    log_alpha = (value_new - value) + (log_q_bwd - log_q_fwd)
    alpha = float(min(1.0, np.exp(min(log_alpha, 0.0))))
    if log_u < log_alpha:
        return MalaResult(prop, True, alpha, value_new, grad_new)
    return MalaResult(state, False, alpha, value, grad_vec)


@dataclass
class ChainOutput:
    """Retained posterior samples plus traces and run metadata."""

    beta: np.ndarray  # (S, P)
    log_sigma: np.ndarray  # (S,)
    log_phi: np.ndarray  # (S,)
    log_theta: np.ndarray  # (S,) or None
    y: np.ndarray  # (S, T, n_cells)
    n_latent: np.ndarray  # (S, T, n_cells)
    alloc: list  # AugmentedCounts per retained sample (may be empty)
    accept_trace: np.ndarray
    logpost_trace: np.ndarray
    step_trace: np.ndarray
    seed: int
    covariate_names: list = field(default_factory=list)

    @property
    def n_retained(self):
        return self.beta.shape[0]

    @property
    def acceptance_rate(self):
        return float(self.accept_trace.mean())

    def save(self, path):
        from .io import save_chain

        save_chain(self, path)


def run_fixed(spec, regions, T_obs, config, partition=None, weights=None, resume_from=None):
    """Gibbs sampler for fixed (possibly overlapping) regions.

    `partition` may carry a prebuilt CellPartition for the (grid, regions)
    pair; otherwise it is built once up front and reused for every redraw.
    `resume_from` restarts from a checkpoint file and continues exactly the
    trajectory the uninterrupted run would have taken.
    """
    return _run_gibbs(spec, regions, T_obs, config, partition=partition,
                      weights=weights, stochastic=False, resume_from=resume_from)


def run_stochastic(spec, regions, T_obs, config, weights=None, resume_from=None):
    """Gibbs sampler for stochastic regions: boundaries are redrawn and the
    partition rebuilt at every N-resample. Regions whose boundary model is
    FIXED (or absent) never change, so an all-fixed region set reproduces
    run_fixed exactly under the same seed."""
    return _run_gibbs(spec, regions, T_obs, config, partition=None,
                      weights=weights, stochastic=regions.is_stochastic(),
                      resume_from=resume_from)


def _effective_weights(weights, realised):
    if weights is not None:
        return weights
    return EffortWeights.from_regions(realised)


def _run_gibbs(spec, regions, T_obs, config, partition=None, weights=None,
               stochastic=False, resume_from=None):
    rng = np.random.default_rng(config.seed)
    grid = spec.grid
    T_obs = np.atleast_2d(np.asarray(T_obs, dtype=np.int64))
    if T_obs.shape != (len(regions), grid.n_times):
        raise ConfigError(
            f"totals shape {T_obs.shape} != (n_regions={len(regions)}, T={grid.n_times})"
        )

    factory = SpectralFactory(grid)
    realised = realise_regions(regions, rng) if stochastic else regions
    if partition is None:
        partition = build_partition(grid, realised)
    w = _effective_weights(weights, realised)
    spec_cov = spec.with_coverage(partition.coverage())
    q_cache = None

    counts = initialise_counts(T_obs, partition, spec.offset, rng)

    if config.init_state is not None:
        state = config.init_state
        if state.y is None or state.gamma.shape != (grid.n_times, grid.n_ext):
            state = make_state(state.gamma, state.beta, state.log_sigma,
                               state.log_phi, state.log_theta, factory)
    else:
        state = _default_state(spec, T_obs, factory)

    layout = _Layout(grid.n_times, grid.n_ext, state.beta.size,
                     state.log_theta is not None, config.fixed)

    n = config.iterations
    S = config.n_retained
    retained = {
        "beta": np.empty((S, state.beta.size)),
        "log_sigma": np.empty(S),
        "log_phi": np.empty(S),
        "log_theta": np.empty(S) if state.log_theta is not None else None,
        "y": np.empty((S, grid.n_times, grid.n_cells)),
        "n_latent": np.empty((S, grid.n_times, grid.n_cells), dtype=np.int64),
    }
    alloc_samples = []
    accept_trace = np.zeros(n)
    logpost_trace = np.zeros(n)
    step_trace = np.zeros(n)

    log_step = np.log(config.step_size)
    s_idx = 0
    start = 1
    if resume_from is not None:
        snap = _load_checkpoint(resume_from, layout, factory, T_obs, grid.n_cells)
        start = snap["iteration"] + 1
        state = snap["state"]
        counts = snap["counts"]
        spec_cov = spec.with_coverage(snap["coverage"])
        log_step = snap["log_step"]
        rng.bit_generator.state = snap["rng_state"]
        s_idx = snap["s_idx"]
        for key, arr in snap["retained"].items():
            if retained[key] is not None and arr is not None:
                retained[key][:s_idx] = arr
        alloc_samples = snap["alloc"]
        q_cache = None

    # loud evaluation first: structural errors (shapes, support violations,
    # degenerate AR at the starting point) surface with real messages
    log_target(state, counts, spec_cov, factory, grad=False, check=True)
    value, grad_vec = _safe_target(state, counts, spec_cov, factory, layout)
    if grad_vec is None:
        raise ModelError("log target not finite at the initial state")

    # second kernel: a (beta, log eta)-block MALA with its own step size.
    # The global step is pinned down by the high-dimensional whitened block,
    # which would leave the handful of hyperparameter coordinates crawling;
    # interleaving a dedicated block move fixes their mixing and each kernel
    # is a valid MH update of the same target.
    tail_layout = layout.tail_view()
    use_tail = bool(tail_layout.free.any()) and config.tail_every > 0
    log_step_tail = np.log(config.tail_step_size)
    if resume_from is not None:
        log_step_tail = snap["log_step_tail"]

    for i in range(start, n + 1):
        res = mala_step(state, counts, spec_cov, factory, np.exp(log_step), rng,
                        layout=layout, current=(value, grad_vec))
        state, value, grad_vec = res.state, res.value, res.grad_vec
        accept_trace[i - 1] = 1.0 if res.accepted else 0.0
        if i <= config.burnin:
            log_step += i ** (-config.adapt_exponent) * (res.alpha - config.target_accept)
        if use_tail and i % config.tail_every == 0:
            res = mala_step(state, counts, spec_cov, factory, np.exp(log_step_tail), rng,
                            layout=tail_layout, current=(value, grad_vec))
            state, value, grad_vec = res.state, res.value, res.grad_vec
            if i <= config.burnin:
                log_step_tail += i ** (-config.adapt_exponent) * (res.alpha - config.target_accept)
        step_trace[i - 1] = np.exp(log_step)

        if i % config.resample_every == 0:
            if stochastic:
                realised = realise_regions(regions, rng)
                partition = build_partition(grid, realised)
                w = _effective_weights(weights, realised)
                spec_cov = spec.with_coverage(partition.coverage())
                q_cache = None
            table, q_cache = _allocation_table(partition, state, spec_cov, w, config, rng, q_cache)
            counts = draw_augmented_counts(T_obs, table, rng)
            value, grad_vec = _safe_target(state, counts, spec_cov, factory, layout)
            if grad_vec is None:
                raise ModelError(f"log target not finite after N-resample at iteration {i}")
        logpost_trace[i - 1] = value

        if i > config.burnin and (i - config.burnin) % config.thin == 0 and s_idx < S:
            retained["beta"][s_idx] = state.beta
            retained["log_sigma"][s_idx] = state.log_sigma
            retained["log_phi"][s_idx] = state.log_phi
            if retained["log_theta"] is not None:
                retained["log_theta"][s_idx] = state.log_theta
            retained["y"][s_idx] = state.y
            retained["n_latent"][s_idx] = counts.n
            if config.keep_alloc:
                alloc_samples.append(counts)
            s_idx += 1

        if config.checkpoint_every and config.checkpoint_path and i % config.checkpoint_every == 0:
            _write_checkpoint(config.checkpoint_path, i, state, counts, spec_cov.coverage,
                              log_step, log_step_tail, rng, retained, alloc_samples,
                              s_idx, layout, grid.n_cells)

    return ChainOutput(
        beta=retained["beta"][:s_idx],
        log_sigma=retained["log_sigma"][:s_idx],
        log_phi=retained["log_phi"][:s_idx],
        log_theta=None if retained["log_theta"] is None else retained["log_theta"][:s_idx],
        y=retained["y"][:s_idx],
        n_latent=retained["n_latent"][:s_idx],
        alloc=alloc_samples,
        accept_trace=accept_trace,
        logpost_trace=logpost_trace,
        step_trace=step_trace,
        seed=config.seed,
        covariate_names=list(getattr(spec, "covariate_names", [])),
    )


def _allocation_table(partition, state, spec_cov, weights, config, rng, q_cache):
    from .allocation import exact_q

    if config.allocation_method == "exact":
        if q_cache is None:
            q_cache = exact_q(partition, weights)
        table = make_allocation_table(
            partition, state, spec_cov.design, spec_cov.offset, weights,
            method="exact", rng=rng, q=q_cache,
        )
    else:
        table = make_allocation_table(
            partition, state, spec_cov.design, spec_cov.offset, weights,
            method="mc", M=config.mc_points, rng=rng,
        )
        q_cache = None
    return table, q_cache


def _default_state(spec, T_obs, factory):
    """Zero field, prior-mean hyperparameters; intercept matched to the totals."""
    grid = spec.grid
    beta = spec.beta_mean.copy()
    base = spec.rate_base()
    total_mass = float(base.sum())
    if total_mass > 0:
        beta[0] = np.log((float(T_obs.sum()) + 1.0) / total_mass)
    log_theta = spec.log_theta_prior[0] if grid.n_times > 1 else None
    return make_state(
        np.zeros((grid.n_times, grid.n_ext)), beta,
        spec.log_sigma_prior[0], spec.log_phi_prior[0], log_theta, factory,
    )


# -- checkpointing ----------------------------------------------------------

CHECKPOINT_VERSION = 1


def _write_checkpoint(path, iteration, state, counts, coverage, log_step, log_step_tail,
                      rng, retained, alloc_samples, s_idx, layout, n_cells):
    """Versioned little-endian snapshot of the full sampler state."""
    from .io import alloc_to_coo, atomic_npz

    payload = {
        "version": np.array([CHECKPOINT_VERSION], dtype="<i8"),
        "iteration": np.array([iteration], dtype="<i8"),
        "s_idx": np.array([s_idx], dtype="<i8"),
        "n_regions": np.array([len(counts.cells)], dtype="<i8"),
        "log_step": np.array([log_step], dtype="<f8"),
        "log_step_tail": np.array([log_step_tail], dtype="<f8"),
        "state_vec": layout.pack(state).astype("<f8"),
        "coverage": np.asarray(coverage, dtype="<f8"),
        "rng_state": np.frombuffer(json.dumps(rng.bit_generator.state).encode(), dtype=np.uint8),
        "counts_totals": counts.totals.astype("<i8"),
        "n_alloc_samples": np.array([len(alloc_samples)], dtype="<i8"),
    }
    for k, cells in enumerate(counts.cells):
        payload[f"counts_cells_{k}"] = np.asarray(cells, dtype="<i8")
        payload[f"counts_vals_{k}"] = counts.counts[k].astype("<i8")
    for key, arr in retained.items():
        if arr is not None:
            payload[f"retained_{key}"] = arr[:s_idx]
    payload.update({k: v.astype("<i8") for k, v in alloc_to_coo(alloc_samples).items()})
    atomic_npz(path, payload)


def _load_checkpoint(path, layout, factory, T_obs, n_cells):
    from .allocation import AugmentedCounts
    from .io import coo_to_alloc

    with np.load(path, allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files}
    if int(arrays["version"][0]) != CHECKPOINT_VERSION:
        raise ConfigError(f"checkpoint version {arrays['version'][0]} unsupported")
    n_regions = int(arrays["n_regions"][0])
    cells = [arrays[f"counts_cells_{k}"] for k in range(n_regions)]
    vals = [arrays[f"counts_vals_{k}"] for k in range(n_regions)]
    counts = AugmentedCounts(cells, vals, n_cells, arrays["counts_totals"])
    retained = {
        key.removeprefix("retained_"): arrays[key]
        for key in arrays
        if key.startswith("retained_")
    }
    alloc = coo_to_alloc(arrays, arrays["counts_totals"], n_cells,
                         int(arrays["n_alloc_samples"][0]))
    return {
        "iteration": int(arrays["iteration"][0]),
        "s_idx": int(arrays["s_idx"][0]),
        "log_step": float(arrays["log_step"][0]),
        "state": layout.unpack(arrays["state_vec"].astype(float), factory),
        "coverage": arrays["coverage"],
        "precond": arrays["precond"].astype(float),
        "tail_stats": (int(arrays["tail_n"][0]), arrays["tail_sum"].astype(float),
                       arrays["tail_sq"].astype(float)),
        "rng_state": json.loads(arrays["rng_state"].tobytes().decode()),
        "counts": counts,
        "retained": retained,
        "alloc": alloc,
    }
