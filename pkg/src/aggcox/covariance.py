"""Covariance family, temporal AR(1) coefficient, and the whitened-field prior."""

from dataclasses import dataclass

import numpy as np

from .errors import ModelError


@dataclass(frozen=True)
class CovarianceParams:
    """Marginal sd sigma, spatial range phi (map units), temporal decay theta (1/time)."""

    sigma: float
    phi: float
    theta: float = 0.0

    def __post_init__(self):
        if not (self.sigma > 0):
            raise ModelError(f"sigma must be positive, got {self.sigma}")
        if not (self.phi > 0):
            raise ModelError(f"phi must be positive, got {self.phi}")
        if self.theta < 0:
            raise ModelError(f"theta must be nonnegative, got {self.theta}")


def exp_cov(d, params):
    """Exponential covariance sigma^2 * exp(-d / phi) at distance(s) d >= 0."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ModelError("distances must be nonnegative")
    return params.sigma**2 * np.exp(-d / params.phi)


def ar_coefficient(theta, delta_t):
    """Temporal autocorrelation a = exp(-theta * delta_t) for a gap delta_t > 0."""
    if delta_t <= 0:
        raise ModelError(f"time gap must be positive, got {delta_t}")
    if theta < 0:
        raise ModelError(f"theta must be nonnegative, got {theta}")
    return float(np.exp(-theta * delta_t))


def ar_prior_logdensity(gamma, theta, deltas, grad=True):
    """Log density of the stationary AR(1) chain prior on the whitened fields.

    gamma : (T, M) array, one whitened field per time slice.
    theta : decay rate; must be > 0 when T > 1 (a=1 degenerates the
        innovation variance).
    deltas : (T-1,) gaps between consecutive time points.

    The marginal of every slice is standard normal. Returns
    (value, grad_gamma, grad_theta); the gradients are None when
    grad=False.
    """
    gamma = np.asarray(gamma, dtype=float)
    if gamma.ndim != 2:
        raise ModelError("gamma must be (T, M)")
    T, M = gamma.shape
    deltas = np.asarray(deltas, dtype=float)
    if deltas.shape != (max(T - 1, 0),):
        raise ModelError(f"need {T - 1} time gaps, got {deltas.shape}")

    value = -0.5 * float(gamma[0] @ gamma[0]) - 0.5 * M * np.log(2 * np.pi)
    if T == 1:
        if grad:
            return value, -gamma.copy(), 0.0
        return value, None, None

    if theta <= 0:
        raise ModelError("theta must be strictly positive when T > 1")

    a = np.exp(-theta * deltas)
    v = 1.0 - a**2
    if np.any(v <= 0):
        raise ModelError("degenerate AR innovation variance (a = 1)")

    g_gamma = np.zeros_like(gamma) if grad else None
    if grad:
        g_gamma[0] = -gamma[0]
    g_theta = 0.0
    for t in range(1, T):
        at, vt = a[t - 1], v[t - 1]
        r = gamma[t] - at * gamma[t - 1]
        rr = float(r @ r)
        value += -0.5 * rr / vt - 0.5 * M * np.log(vt) - 0.5 * M * np.log(2 * np.pi)
        if grad:
            g_gamma[t] += -r / vt
            g_gamma[t - 1] += at * r / vt
            dterm_da = (float(r @ gamma[t - 1]) * vt - at * rr) / vt**2 + M * at / vt
            g_theta += dterm_da * (-deltas[t - 1] * at)
    return value, g_gamma, g_theta
