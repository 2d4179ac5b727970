"""Circulant-embedding FFT operator for square-root covariance products.

The stationary covariance base is wrapped onto the extended-grid torus;
its 2-d DFT gives the eigenvalue field of the block-circulant covariance
matrix. Matrix square-root products then cost O(M log M) time and O(M)
storage. Negative embedding eigenvalues are truncated to zero with the
count and mass fraction recorded; construction fails if more than
`MAX_TRUNCATED_MASS` of the spectral mass is lost, which signals that the
requested spatial range is too large for the grid (tighten the range prior
or enlarge the extension factor).
"""

import numpy as np

from .errors import ModelError, SpectralError

MAX_TRUNCATED_MASS = 0.01


def _torus_distance(grid):
    """Wrap-around centroid distances from cell (0,0) on the extended grid."""
    nx, ny = grid.ext_nx, grid.ext_ny
    ix = np.arange(nx)
    iy = np.arange(ny)
    wx = np.minimum(ix, nx - ix) * grid.dx
    wy = np.minimum(iy, ny - iy) * grid.dy
    return np.hypot(wx[None, :], wy[:, None])


class SpectralOperator:
    """Square-root products with the embedded covariance on the extended grid.

    Holds the unit-variance eigenvalue field; the marginal sd enters as a
    scalar factor at application time, so sigma moves never trigger a
    rebuild. `apply` is the symmetric square root Sigma^{1/2} (equal to its
    transpose); `apply_dphi` is its elementwise derivative with respect to
    the range parameter (zero on truncated modes).
    """

    def __init__(self, grid, params, sqrt_lam, dsqrt_dphi, neg_count, trunc_mass):
        self.grid = grid
        self.params = params
        self.sqrt_lam = sqrt_lam
        self.dsqrt_dphi = dsqrt_dphi
        self.neg_count = int(neg_count)
        self.trunc_mass = float(trunc_mass)
        # the eigenvalue fields are real and even-symmetric, so square-root
        # products reduce to real-input FFT filtering on the half spectrum
        half = grid.ext_nx // 2 + 1
        self._sqrt_half = np.ascontiguousarray(sqrt_lam[:, :half])
        self._dsqrt_half = np.ascontiguousarray(dsqrt_dphi[:, :half])

    @property
    def eigenvalues(self):
        """Eigenvalue field of the embedded covariance (includes sigma^2)."""
        return self.params.sigma**2 * self.sqrt_lam**2

    def with_params(self, params):
        """Same spectral arrays under different marginal-sd defaults."""
        if params.phi != self.params.phi:
            raise ModelError("with_params cannot change phi; rebuild the operator")
        return SpectralOperator(
            self.grid, params, self.sqrt_lam, self.dsqrt_dphi, self.neg_count, self.trunc_mass
        )

    def _mul(self, v, mult_half):
        grid = self.grid
        shape = np.shape(v)
        v2d = np.asarray(v, dtype=float).reshape(grid.ext_ny, grid.ext_nx)
        out = np.fft.irfft2(mult_half * np.fft.rfft2(v2d), s=v2d.shape)
        return out.reshape(shape)

    def apply(self, v, sigma=None):
        """Sigma^{1/2} v on the extended grid (flat or 2-d input)."""
        s = self.params.sigma if sigma is None else sigma
        return s * self._mul(v, self._sqrt_half)

    def apply_dphi(self, v, sigma=None):
        """d(Sigma^{1/2} v)/d phi at fixed sigma."""
        s = self.params.sigma if sigma is None else sigma
        return s * self._mul(v, self._dsqrt_half)

    def restrict(self, v):
        """Extended-grid vector -> observation-grid vector (flat)."""
        grid = self.grid
        v2d = np.asarray(v).reshape(grid.ext_ny, grid.ext_nx)
        return v2d[: grid.ny, : grid.nx].ravel()

    def embed(self, v):
        """Observation-grid vector -> zero-padded extended-grid vector (flat)."""
        grid = self.grid
        out = np.zeros((grid.ext_ny, grid.ext_nx))
        out[: grid.ny, : grid.nx] = np.asarray(v).reshape(grid.ny, grid.nx)
        return out.ravel()


def build_spectral_operator(grid, params, max_trunc_mass=MAX_TRUNCATED_MASS):
    """Eigen-decompose the circulant embedding of the exponential covariance."""
    d = _torus_distance(grid)
    base = np.exp(-d / params.phi)
    lam = np.fft.fft2(base).real
    neg = lam < 0.0
    neg_count = int(neg.sum())
    total = float(np.abs(lam).sum())
    trunc_mass = max(float(-lam[neg].sum()) / total, 0.0) if total > 0 else 0.0
    if trunc_mass > max_trunc_mass:
        raise SpectralError(
            f"circulant embedding truncated {100 * trunc_mass:.2f}% of spectral mass "
            f"(phi={params.phi:g} too large for this grid); shrink the range prior, "
            f"refine the grid, or raise the extension factor"
        )
    lam = np.where(neg, 0.0, lam)
    sqrt_lam = np.sqrt(lam)

    dbase = base * d / params.phi**2
    dlam = np.fft.fft2(dbase).real
    with np.errstate(divide="ignore", invalid="ignore"):
        dsqrt = np.where(sqrt_lam > 0.0, dlam / (2.0 * sqrt_lam), 0.0)
    return SpectralOperator(grid, params, sqrt_lam, dsqrt, neg_count, trunc_mass)


def transform(gamma_t, op, sigma=None):
    """Map a whitened extended-grid field to the observation-grid log-risk field.

    Y_t = -sigma^2/2 + (Sigma^{1/2} Gamma_t) restricted to observation cells.
    """
    s = op.params.sigma if sigma is None else sigma
    gamma_t = np.asarray(gamma_t, dtype=float)
    if gamma_t.size != op.grid.n_ext:
        raise ModelError(
            f"whitened field has {gamma_t.size} entries, extended grid needs {op.grid.n_ext}"
        )
    return -0.5 * s**2 + op.restrict(op.apply(gamma_t, sigma=s))


class SpectralFactory:
    """Per-grid cache of operators keyed by phi (distance field built once)."""

    def __init__(self, grid, max_trunc_mass=MAX_TRUNCATED_MASS, cache_size=4):
        self.grid = grid
        self.max_trunc_mass = max_trunc_mass
        self.cache_size = cache_size
        self._cache = {}

    def operator(self, params):
        key = float(params.phi)
        op = self._cache.get(key)
        if op is None:
            op = build_spectral_operator(self.grid, params, self.max_trunc_mass)
            if len(self._cache) >= self.cache_size:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = op
        return op if op.params == params else op.with_params(params)
