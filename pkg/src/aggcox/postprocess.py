"""Posterior post-processing: exceedance maps, predictive counts, re-aggregation.

Re-aggregation projects per-sample predicted cell counts onto an arbitrary
new set of regions by area weighting, enabling inference on partitions that
did not exist when the data were collected.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ModelError
from .partition import region_cell_areas


@dataclass
class ExceedanceMap:
    """P(exp(Y) > c | data) per threshold, plus posterior means."""

    thresholds: np.ndarray  # (n_thr,)
    probabilities: np.ndarray  # (n_thr, T, n_cells)
    mean_y: np.ndarray  # (T, n_cells)
    mean_risk: np.ndarray  # (T, n_cells), posterior mean of exp(Y)


def exceedance(chain, thresholds):
    """Empirical exceedance frequencies of the relative risk across samples."""
    if chain.n_retained < 1:
        raise ModelError("empty chain: no retained samples")
    thr = np.sort(np.asarray(thresholds, dtype=float))
    if thr.size == 0:
        raise ConfigError("need at least one threshold")
    risk = np.exp(chain.y)  # (S, T, n)
    probs = np.stack([(risk > c).mean(axis=0) for c in thr])
    return ExceedanceMap(
        thresholds=thr,
        probabilities=probs,
        mean_y=chain.y.mean(axis=0),
        mean_risk=risk.mean(axis=0),
    )


def predictive_counts(chain, spec, rng):
    """One Poisson draw per cell, time and retained sample.

    The rate uses each sample's own (beta, Y): C_A * offset * exp(Z beta + Y)
    on the prediction frame in `spec` (the full process, no reporting
    thinning).
    """
    S = chain.n_retained
    T, n = spec.grid.n_times, spec.grid.n_cells
    if chain.y.shape[1:] != (T, n):
        raise ModelError(
            f"chain fields {chain.y.shape[1:]} do not match the prediction frame {(T, n)}"
        )
    if chain.beta.shape[1] != spec.n_beta:
        raise ModelError(
            f"chain has {chain.beta.shape[1]} coefficients, frame needs {spec.n_beta}"
        )
    base = spec.grid.cell_area * spec.offset
    out = np.empty((S, T, n), dtype=np.int64)
    for s in range(S):
        rate = base * np.exp(spec.design @ chain.beta[s] + chain.y[s])
        out[s] = rng.poisson(rate)
    return out


@dataclass
class ReaggregationResult:
    """Predicted totals for each new region across posterior samples."""

    region_ids: list
    weights: np.ndarray  # (R, n_cells), fraction of each cell inside the region
    values: np.ndarray  # (S, R, T) weighted count sums

    def quantiles(self, qs=(0.025, 0.5, 0.975)):
        """(len(qs), R, T) empirical quantiles over samples."""
        return np.quantile(self.values, qs, axis=0)

    def medians(self):
        return np.median(self.values, axis=0)


def reaggregate(draws, new_regions, grid):
    """Project per-sample cell counts onto a new partition by area weighting.

    draws : (S, T, n_cells) predictive counts (or (S, n_cells) for a single
        slice). Each new region's value is sum_j w_rj * count_j with
        w_rj = |A_r ∩ C_j| / C_A; a region made of whole cells gets weight
        1 on each. Weighted sums are kept as reals. A new region entirely
        outside the grid is an error.
    """
    draws = np.asarray(draws)
    if draws.ndim == 2:
        draws = draws[:, None, :]
    S, T, n = draws.shape
    if n != grid.n_cells:
        raise ModelError(f"draws have {n} cells, grid has {grid.n_cells}")
    areas = region_cell_areas(grid, new_regions)
    weights = areas / grid.cell_area
    empty = np.nonzero(weights.sum(axis=1) <= 0)[0]
    if empty.size:
        raise ConfigError(
            f"new region {new_regions[int(empty[0])].id!r} does not intersect the grid"
        )
    values = np.einsum("stn,rn->srt", draws.astype(float), weights)
    return ReaggregationResult(
        region_ids=list(new_regions.ids), weights=weights, values=values
    )


def majority_winners(values_by_process, tie_tol=0.0):
    """Winner analysis across competing count processes on shared regions.

    values_by_process : dict name -> (S, R) per-sample region totals (one
        time slice). Returns medians, the per-region winner by largest
        predicted median (None where the top medians tie within tie_tol),
        and per-process win probabilities: the empirical proportion of
        samples in which the process takes the largest share. Assumes
        independent predictive draws across processes.
    """
    names = list(values_by_process)
    if not names:
        raise ConfigError("no processes given")
    vals = np.stack([np.asarray(values_by_process[k], dtype=float) for k in names])
    if vals.ndim != 3:
        raise ConfigError("each process needs an (S, R) value array")
    P, S, R = vals.shape

    medians = np.median(vals, axis=1)  # (P, R)
    winners = []
    for r in range(R):
        order = np.argsort(medians[:, r])[::-1]
        if P > 1 and medians[order[0], r] - medians[order[1], r] <= tie_tol:
            winners.append(None)  # explicit tie, no guess
        else:
            winners.append(names[order[0]])

    top = vals.max(axis=0, keepdims=True)
    is_top = vals >= top
    shares = is_top / is_top.sum(axis=0, keepdims=True)  # ties split the win
    win_prob = shares.mean(axis=1)  # (P, R)
    return {
        "names": names,
        "medians": medians,
        "winners": winners,
        "win_probability": win_prob,
    }
