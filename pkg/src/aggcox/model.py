"""Grid-level model: Poisson likelihood of latent counts plus priors.

The latent counts N_jt are Poisson with rate
    R_jt = coverage_j * C_A * offset_jt * exp(Z_jt beta + Y_jt),
where Y_t = -sigma^2/2 + Sigma^{1/2} Gamma_t restricted to the observation
grid. The coverage factor is the fraction of the cell under at least one
region: reported events only arise there. With full coverage it is 1
everywhere and the plain grid model is recovered.

Hyperparameters are sampled on the log scale; all gradients returned here
are with respect to (Gamma_1..T, beta, log sigma, log phi, log theta).
"""

from dataclasses import dataclass, field

import numpy as np

from .covariance import ar_prior_logdensity
from .errors import ModelError


class ModelSpec:
    """Covariate/offset rasters, coverage, and prior hyperparameters.

    covariates : (T, n_cells, K) raster stack or None; an intercept column
        is prepended so beta has K+1 components.
    offset : (T, n_cells) known multiplier, default all ones.
    coverage : (n_cells,) fraction of each cell inside the union of
        regions, default all ones (the paper's fully covered setting).
    Priors are Gaussian: per-component on beta, and on log sigma, log phi,
    log theta.
    """

    def __init__(
        self,
        grid,
        covariates=None,
        offset=None,
        coverage=None,
        beta_mean=0.0,
        beta_sd=100.0,
        log_sigma_prior=(np.log(0.5), 0.3),
        log_phi_prior=None,
        log_theta_prior=(0.0, 1.0),
        covariate_names=None,
    ):
        self.grid = grid
        T, n = grid.n_times, grid.n_cells

        if covariates is None:
            Z = np.ones((T, n, 1))
            names = ["intercept"]
        else:
            Z = np.asarray(covariates, dtype=float)
            if Z.ndim == 2:  # static covariates broadcast over time
                Z = np.broadcast_to(Z[None], (T,) + Z.shape).copy()
            if Z.shape[:2] != (T, n):
                raise ModelError(f"covariate stack shape {Z.shape} != (T={T}, n={n}, K)")
            if not np.all(np.isfinite(Z)):
                raise ModelError("covariates must be finite")
            Z = np.concatenate([np.ones((T, n, 1)), Z], axis=2)
            names = ["intercept"] + list(
                covariate_names or [f"x{k}" for k in range(1, Z.shape[2])]
            )
        self.design = Z
        self.covariate_names = names

        self.offset = np.ones((T, n)) if offset is None else np.atleast_2d(np.asarray(offset, float))
        if self.offset.shape != (T, n):
            raise ModelError(f"offset shape {self.offset.shape} != {(T, n)}")
        if np.any(self.offset < 0) or not np.all(np.isfinite(self.offset)):
            raise ModelError("offset must be finite and nonnegative")

        self.coverage = np.ones(n) if coverage is None else np.asarray(coverage, float)
        if self.coverage.shape != (n,):
            raise ModelError(f"coverage shape {self.coverage.shape} != ({n},)")

        P = self.design.shape[2]
        self.beta_mean = np.broadcast_to(np.asarray(beta_mean, float), (P,)).copy()
        self.beta_sd = np.broadcast_to(np.asarray(beta_sd, float), (P,)).copy()
        if log_phi_prior is None:
            x0, y0, x1, y1 = grid.bbox
            log_phi_prior = (np.log(0.1 * min(x1 - x0, y1 - y0)), 0.3)
        self.log_sigma_prior = tuple(map(float, log_sigma_prior))
        self.log_phi_prior = tuple(map(float, log_phi_prior))
        self.log_theta_prior = tuple(map(float, log_theta_prior))
        for sd in (*self.beta_sd, self.log_sigma_prior[1], self.log_phi_prior[1], self.log_theta_prior[1]):
            if sd <= 0:
                raise ModelError("prior standard deviations must be positive")

    @property
    def n_beta(self):
        return self.design.shape[2]

    @property
    def cell_area(self):
        return self.grid.cell_area

    def with_coverage(self, coverage):
        spec = object.__new__(ModelSpec)
        spec.__dict__.update(self.__dict__)
        spec.coverage = np.asarray(coverage, float)
        return spec

    def rate_base(self):
        """coverage * C_A * offset, shape (T, n); zero where nothing can be observed."""
        return self.coverage[None, :] * self.cell_area * self.offset


@dataclass
class LatentState:
    """Whitened fields, regression coefficients and log hyperparameters.

    `y` caches the transformed observation-grid field; it must stay
    consistent with (gamma, log_sigma, log_phi), which `make_state`
    guarantees and `check_consistent` verifies.
    """

    gamma: np.ndarray  # (T, n_ext)
    beta: np.ndarray  # (P,)
    log_sigma: float
    log_phi: float
    log_theta: float = None
    y: np.ndarray = field(default=None, repr=False)  # (T, n_cells)

    @property
    def sigma(self):
        return float(np.exp(self.log_sigma))

    @property
    def phi(self):
        return float(np.exp(self.log_phi))

    @property
    def theta(self):
        return None if self.log_theta is None else float(np.exp(self.log_theta))

    def params(self):
        from .covariance import CovarianceParams

        return CovarianceParams(self.sigma, self.phi, self.theta if self.theta is not None else 0.0)

    def check_consistent(self, factory, tol=1e-10):
        y = _compute_y(self.gamma, self.sigma, self.phi, factory)
        return np.max(np.abs(y - self.y)) <= tol


def _compute_y(gamma, sigma, phi, factory):
    from .covariance import CovarianceParams

    op = factory.operator(CovarianceParams(sigma, phi))
    out = np.empty((gamma.shape[0], factory.grid.n_cells))
    for t in range(gamma.shape[0]):
        out[t] = -0.5 * sigma**2 + op.restrict(op.apply(gamma[t], sigma=sigma))
    return out


def make_state(gamma, beta, log_sigma, log_phi, log_theta, factory):
    """Build a LatentState with its transformed field computed and cached."""
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    state = LatentState(
        gamma=gamma,
        beta=np.asarray(beta, dtype=float),
        log_sigma=float(log_sigma),
        log_phi=float(log_phi),
        log_theta=None if log_theta is None else float(log_theta),
    )
    state.y = _compute_y(gamma, state.sigma, state.phi, factory)
    return state


@dataclass
class TargetGradient:
    gamma: np.ndarray
    beta: np.ndarray
    log_sigma: float
    log_phi: float
    log_theta: float  # None for single-slice models


def _normal_logpdf(x, mean, sd):
    return -0.5 * ((x - mean) / sd) ** 2 - np.log(sd) - 0.5 * np.log(2 * np.pi)


def log_target(state, counts, spec, factory, grad=True, check=False, phi_grad=True):
    """Log posterior density (up to a constant) and its gradient.

    counts : dense (T, n_cells) latent counts, or an object exposing `.n`.
    Returns (value, TargetGradient or None). Non-finite values raise
    ModelError naming the offending cell when check=True, otherwise they
    yield -inf so MH steps can reject the proposal. `phi_grad=False` skips
    the range-derivative transforms (valid when the phi block is frozen).
    """
    N = counts.n if hasattr(counts, "n") else np.atleast_2d(np.asarray(counts))
    T, n = spec.grid.n_times, spec.grid.n_cells
    if N.shape != (T, n):
        raise ModelError(f"counts shape {N.shape} != {(T, n)}")
    if state.y is None:
        state.y = _compute_y(state.gamma, state.sigma, state.phi, factory)

    base = spec.rate_base()
    mask = base > 0
    if np.any(N[~mask] > 0):
        j = int(np.argwhere(N[~mask] > 0)[0][0])
        raise ModelError(f"latent counts outside the observable support (cell {j})")

    lin = state.y + spec.design @ state.beta
    with np.errstate(over="ignore"):
        rate = np.where(mask, base * np.exp(lin), 0.0)
    loglik_terms = np.where(mask & (N > 0), N * np.log(np.where(mask, base, 1.0)) + N * lin, 0.0)
    value = float(loglik_terms.sum() - rate.sum())

    theta = state.theta
    if T > 1:
        if theta is None:
            raise ModelError("spatiotemporal models (T > 1) need log_theta in the state")
        ar_value, ar_ggamma, ar_gtheta = ar_prior_logdensity(
            state.gamma, theta, np.asarray(spec.grid.time_gaps), grad=grad
        )
    else:
        ar_value, ar_ggamma, ar_gtheta = ar_prior_logdensity(
            state.gamma, 0.0, np.zeros(0), grad=grad
        )
    value += ar_value

    value += float(np.sum(_normal_logpdf(state.beta, spec.beta_mean, spec.beta_sd)))
    value += _normal_logpdf(state.log_sigma, *spec.log_sigma_prior)
    value += _normal_logpdf(state.log_phi, *spec.log_phi_prior)
    if state.log_theta is not None:
        value += _normal_logpdf(state.log_theta, *spec.log_theta_prior)

    if not np.isfinite(value):
        if check:
            bad = np.argwhere(~np.isfinite(rate) | ~np.isfinite(loglik_terms))
            where = f" (cell {int(bad[0][1])}, time {int(bad[0][0])})" if bad.size else ""
            raise ModelError(f"non-finite log target{where}")
        return -np.inf, None
    if not grad:
        return value, None

    sigma, phi = state.sigma, state.phi
    op = factory.operator(state.params())
    resid = np.where(mask, N - rate, 0.0)

    # chain rule through the square-root operator, slice by slice
    g_gamma = ar_ggamma
    g_logphi = -(state.log_phi - spec.log_phi_prior[0]) / spec.log_phi_prior[1] ** 2
    for t in range(T):
        g_gamma[t] += sigma * op.apply(op.embed(resid[t]), sigma=1.0)
        if phi_grad:
            dy_dphi = sigma * op.restrict(op.apply_dphi(state.gamma[t], sigma=1.0))
            g_logphi += phi * float(resid[t] @ dy_dphi)

    g_beta = np.einsum("tn,tnp->p", resid, spec.design)
    g_beta += -(state.beta - spec.beta_mean) / spec.beta_sd**2

    # dY/dlog(sigma) = Y - sigma^2/2 since Y = -sigma^2/2 + sigma * W
    g_logsigma = float((resid * (state.y - 0.5 * sigma**2)).sum())
    g_logsigma += -(state.log_sigma - spec.log_sigma_prior[0]) / spec.log_sigma_prior[1] ** 2

    if state.log_theta is not None and T > 1:
        g_logtheta = theta * ar_gtheta
        g_logtheta += -(state.log_theta - spec.log_theta_prior[0]) / spec.log_theta_prior[1] ** 2
    else:
        g_logtheta = None

    return value, TargetGradient(g_gamma, g_beta, g_logsigma, g_logphi, g_logtheta)
