"""Log-target value, gradients, and equivariance checks."""

import numpy as np
import pytest
from scipy.optimize import minimize

from aggcox.errors import ModelError
from aggcox.grid import build_grid
from aggcox.model import ModelSpec, log_target, make_state
from aggcox.spectral import SpectralFactory


def _setup(T=2, nx=4, ny=4, n_cov=2, seed=42):
    rng = np.random.default_rng(seed)
    times = [float(t) for t in range(T)]
    grid = build_grid((0, 0, 1, 1), nx, ny, times=times, extension=2)
    Z = rng.standard_normal((T, grid.n_cells, n_cov)) if n_cov else None
    lam = rng.uniform(0.5, 2.0, size=(T, grid.n_cells))
    spec = ModelSpec(grid, covariates=Z, offset=lam,
                     log_sigma_prior=(np.log(0.5), 0.3),
                     log_phi_prior=(np.log(0.15), 0.3))
    return grid, spec, SpectralFactory(grid), rng


def test_zero_state_closed_form_loglik():
    grid, spec, factory, _ = _setup(T=1, n_cov=0)
    sigma = 0.5
    state = make_state(np.zeros((1, grid.n_ext)), np.zeros(1), np.log(sigma),
                       np.log(0.15), None, factory)
    N = np.zeros((1, grid.n_cells), dtype=int)
    value, _ = log_target(state, N, spec, factory, grad=False)
    want_lik = -np.sum(grid.cell_area * spec.offset * np.exp(-0.5 * sigma**2))
    # subtract the prior block to isolate the likelihood part
    prior = (-0.5 * (0 / 100) ** 2 - np.log(100) - 0.5 * np.log(2 * np.pi))
    prior += -np.log(0.3) - 0.5 * np.log(2 * np.pi)  # log sigma at its prior mean
    prior += -np.log(0.3) - 0.5 * np.log(2 * np.pi)  # log phi at its prior mean
    prior += -0.5 * grid.n_ext * np.log(2 * np.pi)  # Gamma = 0
    assert value == pytest.approx(want_lik + prior, rel=1e-12)


def test_gradient_matches_central_differences():
    grid, spec, factory, rng = _setup()
    N = rng.poisson(1.0, size=(grid.n_times, grid.n_cells))
    T = grid.n_times
    n_fail = 0
    for trial in range(10):
        gamma = 0.7 * rng.standard_normal((T, grid.n_ext))
        beta = 0.3 * rng.standard_normal(3)
        state = make_state(gamma, beta, np.log(0.6) + 0.1 * rng.standard_normal(),
                           np.log(0.15) + 0.1 * rng.standard_normal(),
                           0.2 * rng.standard_normal(), factory)
        value, g = log_target(state, N, spec, factory)
        gvec = np.concatenate([g.gamma.ravel(), g.beta,
                               [g.log_sigma, g.log_phi, g.log_theta]])
        x0 = np.concatenate([gamma.ravel(), beta,
                             [state.log_sigma, state.log_phi, state.log_theta]])
        h = 1e-5
        idxs = list(rng.choice(T * grid.n_ext, size=12, replace=False))
        idxs += list(range(T * grid.n_ext, x0.size))
        for k in idxs:
            for sgn, store in ((1, "p"), (-1, "m")):
                x = x0.copy()
                x[k] += sgn * h
                st = make_state(x[: T * grid.n_ext].reshape(T, grid.n_ext),
                                x[T * grid.n_ext : T * grid.n_ext + 3],
                                x[-3], x[-2], x[-1], factory)
                v, _ = log_target(st, N, spec, factory, grad=False)
                if sgn == 1:
                    fp = v
                else:
                    fm = v
            fd = (fp - fm) / (2 * h)
            rel = abs(gvec[k] - fd) / max(abs(gvec[k]), abs(fd), 1e-8)
            if rel >= 1e-5:
                n_fail += 1
    assert n_fail == 0


def test_offset_equivariance_of_intercept_mle():
    """Doubling the offset shifts the fitted intercept by exactly -ln 2."""
    grid, spec, factory, rng = _setup(T=1, n_cov=1, seed=7)
    N = rng.poisson(2.0, size=(1, grid.n_cells))
    gamma = np.zeros((1, grid.n_ext))

    def fit_beta(spec_):
        def negloglik(b):
            st = make_state(gamma, b, np.log(0.5), np.log(0.15), None, factory)
            v, _ = log_target(st, N, spec_, factory, grad=False)
            return -v

        res = minimize(negloglik, np.zeros(2), method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 2000})
        return res.x

    b1 = fit_beta(spec)
    spec2 = ModelSpec(grid, covariates=spec.design[:, :, 1:], offset=2.0 * spec.offset,
                      log_sigma_prior=(np.log(0.5), 0.3), log_phi_prior=(np.log(0.15), 0.3))
    b2 = fit_beta(spec2)
    assert b2[0] - b1[0] == pytest.approx(-np.log(2), abs=1e-5)
    assert b2[1] == pytest.approx(b1[1], abs=1e-5)


def test_counts_shape_mismatch_rejected():
    grid, spec, factory, rng = _setup(T=1, n_cov=0)
    state = make_state(np.zeros((1, grid.n_ext)), np.zeros(1), np.log(0.5),
                       np.log(0.15), None, factory)
    with pytest.raises(ModelError):
        log_target(state, np.zeros((2, grid.n_cells)), spec, factory)


def test_counts_outside_coverage_rejected():
    grid, spec, factory, rng = _setup(T=1, n_cov=0)
    spec0 = spec.with_coverage(np.zeros(grid.n_cells))
    state = make_state(np.zeros((1, grid.n_ext)), np.zeros(1), np.log(0.5),
                       np.log(0.15), None, factory)
    N = np.zeros((1, grid.n_cells), dtype=int)
    N[0, 3] = 2
    with pytest.raises(ModelError, match="support"):
        log_target(state, N, spec0, factory)


def test_nonfinite_check_vs_reject():
    grid, spec, factory, rng = _setup(T=1, n_cov=0)
    state = make_state(np.full((1, grid.n_ext), 40.0), np.array([900.0]),
                       np.log(0.5), np.log(0.15), None, factory)
    N = np.zeros((1, grid.n_cells), dtype=int)
    value, _ = log_target(state, N, spec, factory, grad=False)
    assert value == -np.inf
    with pytest.raises(ModelError, match="non-finite"):
        log_target(state, N, spec, factory, grad=False, check=True)


def test_state_consistency_checker():
    grid, spec, factory, _ = _setup(T=1, n_cov=0)
    state = make_state(np.random.default_rng(0).standard_normal((1, grid.n_ext)),
                       np.zeros(1), np.log(0.5), np.log(0.15), None, factory)
    assert state.check_consistent(factory)
    state.y = state.y + 1e-6
    assert not state.check_consistent(factory)
