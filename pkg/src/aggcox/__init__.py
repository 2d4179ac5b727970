"""Continuous LGCP inference for aggregated count data.

Fits spatially and spatiotemporally continuous log-Gaussian Cox process
models to event counts reported over overlapping, uncertain or changing
regions, and re-projects the posterior onto arbitrary new partitions.
"""

__version__ = "0.1.0"

from .allocation import (
    AllocationTable,
    AugmentedCounts,
    EffortWeights,
    base_mass,
    draw_augmented_counts,
    exact_q,
    initialise_counts,
    make_allocation_table,
    marginal_q_uncertain,
    mc_q,
)
from .covariance import CovarianceParams, ar_coefficient, ar_prior_logdensity, exp_cov
from .grid import Grid, build_grid
from .model import LatentState, ModelSpec, log_target, make_state
from .partition import CellPartition, build_partition, intersect_region_cell, region_cell_areas
from .postprocess import (
    ExceedanceMap,
    ReaggregationResult,
    exceedance,
    majority_winners,
    predictive_counts,
    reaggregate,
)
from .regions import (
    FixedBoundary,
    MixtureBoundary,
    Region,
    RegionSet,
    ScaledBoundary,
    realise_regions,
)
from .sampler import ChainOutput, SamplerConfig, mala_step, run_fixed, run_stochastic
from .simulate import (
    SyntheticDataset,
    TrueParams,
    buffer_regions,
    huff_catchments,
    report_counts,
    simulate_dataset,
    simulate_lgcp,
)
from .spectral import SpectralFactory, SpectralOperator, build_spectral_operator, transform
