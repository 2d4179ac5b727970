"""Allocation probabilities and the multinomial draw of latent cell counts.

The probability that an event reported by region i lands in cell j factors
as p_ij * q_ij: the base mass p_ij = |A_i ∩ C_j| * offset * exp(linear
predictor + field), and the overlap correction q_ij = P(the event
contributes to region i's total | it fell inside A_i ∩ C_j). With no
overlap q_ij = 1 everywhere and the plain aggregation scheme is recovered.

q tables are dense (n_regions, n_cells) arrays, zero off a region's
support. The exact route sums over partition signature elements; the Monte
Carlo route classifies uniform points in each cell and is unbiased for the
exact value.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import AllocationError
from .partition import build_partition
from .regions import realise_regions


class EffortWeights:
    """Conditional reporting probabilities from per-region sampling efforts.

    For an event in a partition element with membership signature S, region
    i in S reports it with probability W[i][S] = e_i / sum_{l in S} e_l.
    Efforts may be overridden per cell (keys (i, j)) or per intersection
    (keys (i, j, S) with S a sorted tuple), the latter taking precedence.
    """

    def __init__(self, efforts, cell_overrides=None, intersection_overrides=None):
        self.efforts = np.asarray(efforts, dtype=float)
        if np.any(self.efforts <= 0):
            raise AllocationError("sampling efforts must be positive")
        self.cell_overrides = dict(cell_overrides or {})
        self.intersection_overrides = dict(intersection_overrides or {})
        for v in list(self.cell_overrides.values()) + list(self.intersection_overrides.values()):
            if v <= 0:
                raise AllocationError("effort overrides must be positive")

    @classmethod
    def from_regions(cls, regions):
        return cls([r.effort for r in regions])

    def __len__(self):
        return len(self.efforts)

    def effort(self, i, j=None, sig=None):
        if sig is not None and j is not None:
            e = self.intersection_overrides.get((i, j, tuple(sig)))
            if e is not None:
                return e
        if j is not None:
            e = self.cell_overrides.get((i, j))
            if e is not None:
                return e
        return self.efforts[i]

    def weight(self, i, sig, j=None):
        """W[i][S]: probability region i reports an event with signature S."""
        if i not in sig:
            return 0.0
        total = sum(self.effort(l, j, sig) for l in sig)
        if total <= 0:
            raise AllocationError(f"signature {sig!r} has zero total effort")
        return self.effort(i, j, sig) / total


@dataclass(frozen=True)
class Provenance:
    """How a q table was produced."""

    method: str  # EXACT | MONTE_CARLO | MARGINAL_MC
    M: int = 0
    n_gamma: int = 0

    def __str__(self):
        if self.method == "EXACT":
            return "EXACT"
        if self.method == "MONTE_CARLO":
            return f"MONTE_CARLO(M={self.M})"
        return f"MARGINAL_MC(M={self.M}, n_gamma={self.n_gamma})"


def base_mass(partition, state, covariates=None, offset=None):
    """Base allocation masses p_ij over each region's support cells.

    state : object with attributes `beta` (P,) and `y` (T, n_cells); the
        current latent state of the chain.
    covariates : (T, n_cells, P) design array matching beta, or None.
    offset : (T, n_cells) nonnegative multiplier, or None for all-ones.

    Returns a list over regions of (cells, p) with p of shape (T, n_i).
    """
    y = np.atleast_2d(np.asarray(state.y, dtype=float))
    T, n = y.shape
    lin = y
    beta = np.asarray(getattr(state, "beta", np.zeros(0)), dtype=float)
    if covariates is not None and beta.size:
        Z = np.asarray(covariates, dtype=float)
        if Z.shape[:2] != (T, n) or Z.shape[2] != beta.size:
            raise AllocationError(
                f"covariate raster shape {Z.shape} does not match field {(T, n)} "
                f"and {beta.size} coefficients"
            )
        lin = lin + Z @ beta
    field = np.exp(lin)
    if offset is not None:
        lam = np.atleast_2d(np.asarray(offset, dtype=float))
        if lam.shape != (T, n):
            raise AllocationError(f"offset raster shape {lam.shape} != {(T, n)}")
        field = field * lam

    out = []
    for cells, areas in partition.region_cells:
        out.append((cells, areas[None, :] * field[:, cells]))
    return out


def exact_q(partition, weights):
    """Exact overlap corrections from the partition's signature elements.

    q_ij = sum over elements containing i of W[i][S] |Omega| / |A_i ∩ C_j|;
    equals 1 wherever region i overlaps nothing else.
    """
    m = partition.n_regions
    n = partition.grid.n_cells
    num = np.zeros((m, n))
    for j, elems in enumerate(partition.elements):
        for sig, area in elems:
            if len(sig) == 1:
                num[sig[0], j] += area
                continue
            for i in sig:
                num[i, j] += weights.weight(i, sig, j) * area
    q = np.zeros((m, n))
    for i, (cells, areas) in enumerate(partition.region_cells):
        q[i, cells] = num[i, cells] / areas
    return np.clip(q, 0.0, 1.0)


def _local_regions(partition):
    """For each cell, the indices of regions with positive intersection."""
    local = [[] for _ in range(partition.grid.n_cells)]
    for i, (cells, _) in enumerate(partition.region_cells):
        for j in cells:
            local[int(j)].append(i)
    return local


def mc_q(partition, weights, M, rng, return_se=False):
    """Monte Carlo overlap corrections from M uniform points per cell.

    Each point is classified by membership signature against the locally
    intersecting regions; the estimator averages W[i][S(u)] 1{u in A_i} and
    is rescaled by |C_j| / |A_i ∩ C_j| so it is unbiased for exact_q.
    """
    if M < 1:
        raise AllocationError("M must be >= 1")
    grid = partition.grid
    regions = partition.regions
    m = partition.n_regions
    q = np.zeros((m, grid.n_cells))
    se = np.zeros((m, grid.n_cells))
    local = _local_regions(partition)
    area_mat = {}
    for i, (cells, areas) in enumerate(partition.region_cells):
        for j, a in zip(cells, areas):
            area_mat[(i, int(j))] = a

    for j, loc in enumerate(local):
        if not loc:
            continue
        x0, y0, x1, y1 = grid.cell_bounds(j)
        px = rng.uniform(x0, x1, size=M)
        py = rng.uniform(y0, y1, size=M)
        member = kernels.membership_matrix(px, py, [regions[i].rings for i in loc])
        # collapse identical membership rows; intensity is constant in-cell
        codes = member @ (1 << np.arange(len(loc), dtype=np.int64))
        uniq, counts = np.unique(codes, return_counts=True)
        for i_pos, i in enumerate(loc):
            vals = np.zeros(uniq.size)
            for u_pos, code in enumerate(uniq):
                if not (code >> i_pos) & 1:
                    continue
                sig = tuple(loc[b] for b in range(len(loc)) if (code >> b) & 1)
                vals[u_pos] = weights.weight(i, sig, j)
            scale = grid.cell_area / area_mat[(i, j)]
            mean = float(vals @ counts) / M
            q[i, j] = scale * mean
            if return_se:
                var = float((vals**2) @ counts) / M - mean**2
                se[i, j] = scale * np.sqrt(max(var, 0.0) / M)
    if return_se:
        return q, se
    return q


def marginal_q_uncertain(grid, regions, weights, M, n_gamma, rng):
    """Overlap corrections averaged over boundary-model realisations.

    Rebuilds the partition for each of the n_gamma boundary draws and
    averages the per-draw Monte Carlo corrections; draws where a region
    misses a cell contribute zero there. Intended for precomputation and
    diagnostics; the stochastic-region sampler redraws boundaries inside
    the Gibbs loop instead.
    """
    if n_gamma < 1:
        raise AllocationError("n_gamma must be >= 1")
    acc = np.zeros((len(regions), grid.n_cells))
    for _ in range(n_gamma):
        realised = realise_regions(regions, rng)
        part = build_partition(grid, realised)
        acc += mc_q(part, weights, M, rng)
    return acc / n_gamma


class AllocationTable:
    """Per-region allocation probabilities over support cells.

    Rows pair each region's support cell indices with base masses (T, n_i),
    corrections (n_i,), and the normalised probability vectors actually fed
    to the multinomial draw.
    """

    def __init__(self, cells, p, q, provenance, n_cells=0):
        self.cells = cells
        self.p = p
        self.q = q
        self.provenance = provenance
        self.n_cells = n_cells
        self.probs = []
        self.mass_total = []
        for pi, qi in zip(p, q):
            mass = pi * qi[None, :]
            total = mass.sum(axis=1)
            probs = np.zeros_like(mass)
            ok = total > 0
            probs[ok] = mass[ok] / total[ok, None]
            self.probs.append(probs)
            self.mass_total.append(total)

    @property
    def n_regions(self):
        return len(self.cells)


def make_allocation_table(
    partition, state, covariates=None, offset=None, weights=None,
    method="exact", M=1000, rng=None, q=None,
):
    """Combine base masses and overlap corrections into an AllocationTable.

    `q` may carry a precomputed dense correction table (the exact q only
    depends on the partition and the efforts, so drivers cache it across
    redraws while the regions stay fixed).
    """
    if weights is None:
        weights = EffortWeights.from_regions(partition.regions)
    masses = base_mass(partition, state, covariates, offset)
    if method == "exact":
        if q is None:
            q = exact_q(partition, weights)
        prov = Provenance("EXACT")
    elif method == "mc":
        if rng is None:
            raise AllocationError("Monte Carlo q needs an rng")
        q = mc_q(partition, weights, M, rng)
        prov = Provenance("MONTE_CARLO", M=M)
    else:
        raise AllocationError(f"unknown q method {method!r}")
    cells = [c for c, _ in masses]
    p = [pi for _, pi in masses]
    qs = [q[i, c] for i, c in enumerate(cells)]
    return AllocationTable(cells, p, qs, prov, n_cells=partition.grid.n_cells)


class AugmentedCounts:
    """Latent per-cell counts consistent with the reported regional totals."""

    def __init__(self, cells, counts, n_cells, totals):
        self.cells = cells  # list over regions of support cell indices
        self.counts = counts  # list over regions of (T, n_i) int arrays
        self.n_cells = n_cells
        self.totals = np.asarray(totals)

    @property
    def n(self):
        """Dense (T, n_cells) latent counts summed over regions."""
        T = self.totals.shape[1]
        out = np.zeros((T, self.n_cells), dtype=np.int64)
        for cells, cnt in zip(self.cells, self.counts):
            out[:, cells] += cnt  # cells are unique within a region
        return out

    def conserves(self):
        """True when every region/time allocation reproduces its total exactly."""
        for i, cnt in enumerate(self.counts):
            if not np.array_equal(cnt.sum(axis=1), self.totals[i]):
                return False
        return True


def _check_totals(T_obs, n_regions):
    T_obs = np.atleast_2d(np.asarray(T_obs))
    if T_obs.shape[0] != n_regions:
        raise AllocationError(f"totals have {T_obs.shape[0]} rows for {n_regions} regions")
    if np.any(T_obs < 0) or not np.issubdtype(T_obs.dtype, np.integer):
        T_int = T_obs.astype(np.int64)
        if np.any(T_int != T_obs) or np.any(T_int < 0):
            raise AllocationError("totals must be nonnegative integers")
        T_obs = T_int
    return T_obs


def draw_augmented_counts(T_obs, table, rng):
    """Multinomial redraw of the latent counts given regional totals.

    For each region and time slice, T_i events are placed on the support
    cells with probability proportional to p_ij * q_ij. Conservation is an
    integer identity. A region with events but zero allocation mass is a
    hard error: the model cannot explain its data.
    """
    T_obs = _check_totals(T_obs, table.n_regions)
    counts = []
    for i in range(table.n_regions):
        probs = table.probs[i]
        out = np.zeros(probs.shape, dtype=np.int64)
        for t in range(T_obs.shape[1]):
            tt = int(T_obs[i, t])
            if tt == 0:
                continue
            if table.mass_total[i][t] <= 0:
                raise AllocationError(
                    f"region index {i} reports {tt} events at time {t} but has "
                    f"zero allocation mass (empty support or zero offset)"
                )
            out[t] = rng.multinomial(tt, probs[t])
        counts.append(out)
    n_cells = table.n_cells
    if not n_cells:
        n_cells = max((int(c.max()) + 1 for c in table.cells if len(c)), default=0)
    return AugmentedCounts(table.cells, counts, n_cells, T_obs)


def initialise_counts(T_obs, partition, offset=None, rng=None):
    """Initial latent counts proportional to offset mass within each region.

    Probability of cell j within region i is proportional to
    |A_i ∩ C_j| * offset_jt (uniform over the intersection when no offset).
    """
    if rng is None:
        rng = np.random.default_rng()
    T_obs = _check_totals(T_obs, partition.n_regions)
    n_times = T_obs.shape[1]
    n = partition.grid.n_cells
    if offset is not None:
        lam = np.atleast_2d(np.asarray(offset, dtype=float))
        if lam.shape != (n_times, n):
            raise AllocationError(f"offset raster shape {lam.shape} != {(n_times, n)}")
    cells_list, counts = [], []
    for i, (cells, areas) in enumerate(partition.region_cells):
        cells_list.append(cells)
        out = np.zeros((n_times, len(cells)), dtype=np.int64)
        for t in range(n_times):
            tt = int(T_obs[i, t])
            if tt == 0:
                continue
            mass = areas * lam[t, cells] if offset is not None else areas.astype(float)
            total = mass.sum()
            if total <= 0 or len(cells) == 0:
                raise AllocationError(
                    f"region index {i} reports {tt} events at time {t} but has "
                    f"zero initialisation mass"
                )
            out[t] = rng.multinomial(tt, mass / total)
        counts.append(out)
    return AugmentedCounts(cells_list, counts, n, T_obs)


def dump_allocation_diagnostics(partition, table, path):
    """Write per-cell (region, p, q, signature) diagnostics as delimited text."""
    lines = ["cell_index\tregion_index\tarea\tq\tsignatures"]
    sig_by_cell = {}
    for j, elems in enumerate(partition.elements):
        if elems:
            sig_by_cell[j] = ";".join(
                "{}:{:.17g}".format(",".join(map(str, sig)), a) for sig, a in elems
            )
    for i in range(table.n_regions):
        cells, areas = partition.region_cells[i]
        for k, j in enumerate(cells):
            lines.append(
                f"{int(j)}\t{i}\t{areas[k]:.17g}\t{table.q[i][k]:.17g}\t{sig_by_cell.get(int(j), '')}"
            )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
