"""Simulator moments, reporting rules, Huff catchments, cross-module consistency."""

import numpy as np
import pytest
from shapely.geometry import box

from aggcox.allocation import EffortWeights, base_mass, exact_q
from aggcox.covariance import CovarianceParams
from aggcox.errors import ConfigError
from aggcox.grid import build_grid
from aggcox.model import ModelSpec, make_state
from aggcox.partition import build_partition
from aggcox.regions import Region, RegionSet
from aggcox.simulate import (
    TrueParams,
    buffer_regions,
    huff_catchments,
    huff_probabilities,
    make_tile_regions,
    report_counts,
    simulate_dataset,
    simulate_lgcp,
)
from aggcox.spectral import SpectralFactory


def test_zero_offset_gives_zero_counts():
    grid = build_grid((0, 0, 1, 1), 3, 3, times=[0.0, 1.0])
    spec = ModelSpec(grid, offset=np.zeros((2, 9)))
    y, n, pts = simulate_lgcp(grid, spec, CovarianceParams(0.5, 0.2, 1.0),
                              np.random.default_rng(0))
    assert n.sum() == 0
    assert all(len(p) == 0 for p in pts)


def test_simulated_counts_match_moment_oracle():
    # E[N_j] = C_A * lambda * exp(Z beta) since E[exp(Y)] = 1
    grid = build_grid((0, 0, 1, 1), 3, 3)
    rng = np.random.default_rng(1)
    Z = rng.standard_normal((1, 9, 1))
    lam = rng.uniform(20.0, 60.0, size=(1, 9))
    spec = ModelSpec(grid, covariates=Z, offset=lam)
    params = TrueParams(np.array([1.0, 0.4]), CovarianceParams(0.4, 0.2))
    reps = 10_000
    acc = np.zeros((1, 9))
    for _ in range(reps):
        _, n, _ = simulate_lgcp(grid, spec, _merge(params), rng)
        acc += n
    mean = acc / reps
    want = grid.cell_area * lam * np.exp(Z[..., 0] * 1.0 * 0.4 + 1.0)
    # var(N) = E[R] + var(R) with lognormal R; bound se loosely from samples
    se = np.sqrt(want * (1 + want * (np.exp(0.4**2) - 1)) / reps) + np.sqrt(want / reps)
    assert np.all(np.abs(mean - want) < 4 * se)


def _merge(tp):
    class P:
        beta = tp.beta
        cov = tp.cov

    return P


def test_fixed_seed_reproduces_dataset():
    grid = build_grid((0, 0, 1, 1), 4, 4)
    regions = make_tile_regions(grid, 2, 2, buffer=0.1)
    params = TrueParams(np.array([3.0]), CovarianceParams(0.5, 0.2))
    d1 = simulate_dataset(grid, regions, params, 77)
    d2 = simulate_dataset(grid, regions, params, 77)
    assert np.array_equal(d1.T_obs, d2.T_obs)
    assert np.array_equal(d1.y, d2.y)
    assert all(np.array_equal(a, b) for a, b in zip(d1.points, d2.points))


def test_buffer_zero_is_identity():
    grid = build_grid((0, 0, 1, 1), 4, 4)
    regions = make_tile_regions(grid, 2, 2)
    out = buffer_regions(regions, 0.0, grid.bbox)
    assert out is regions


def test_buffer_unit_square_minkowski_area():
    sq = RegionSet([Region("s", box(0, 0, 1, 1))])
    out = buffer_regions(sq, 0.5, (-5, -5, 6, 6), quad_segs=256)
    want = 1 + 4 * 0.5 + np.pi * 0.25  # square + side strips + corner quarter-discs
    assert out[0].geometry.area == pytest.approx(want, rel=1e-4)


def test_buffer_overlap_monotone_on_random_layouts():
    rng = np.random.default_rng(2)
    from conftest import random_region_set

    for _ in range(5):
        regions = random_region_set(rng, 3)
        prev = 0.0
        for buf in (0.0, 0.05, 0.12):
            bset = buffer_regions(regions, buf, (0, 0, 1, 1))
            overlap = 0.0
            for i in range(3):
                for j in range(i + 1, 3):
                    overlap += bset[i].geometry.intersection(bset[j].geometry).area
            assert overlap >= prev - 1e-12
            prev = overlap


def test_huff_two_symmetric_facilities():
    grid = build_grid((0, 0, 1, 1), 5, 1)
    fac = [(0.1, 0.5), (0.9, 0.5)]
    p = huff_probabilities(fac, grid, delta=-2.0)
    # middle cell (centroid 0.5) is equidistant
    assert p[2, 0] == pytest.approx(0.5)
    assert p[2, 1] == pytest.approx(0.5)
    assert np.allclose(p.sum(axis=1), 1.0)


def test_huff_single_facility_covers_everything():
    grid = build_grid((0, 0, 1, 1), 4, 4)
    regions = huff_catchments([(0.5, 0.5)], grid, delta=-2.0, cutoff=0.2)
    assert len(regions) == 1
    assert regions[0].geometry.area == pytest.approx(1.0)


def test_huff_catchment_matches_recomputation():
    grid = build_grid((0, 0, 1, 1), 16, 16)
    fac = [(0.2, 0.3), (0.8, 0.5), (0.5, 0.9)]
    cutoff, delta = 0.2, -2.0
    regions = huff_catchments(fac, grid, delta, cutoff)
    p = huff_probabilities(fac, grid, delta)
    from shapely import contains_xy

    cent = grid.centroids()
    for f, region in enumerate(regions):
        member = contains_xy(region.geometry, cent[:, 0], cent[:, 1])
        assert np.array_equal(member, p[:, f] >= cutoff)


def test_huff_cutoff_validation():
    grid = build_grid((0, 0, 1, 1), 4, 4)
    with pytest.raises(ConfigError):
        huff_catchments([(0.5, 0.5)], grid, -2.0, cutoff=1.5)


def test_report_counts_disjoint_regions_deterministic():
    regions = RegionSet([Region("a", box(0, 0, 0.5, 1)), Region("b", box(0.5, 0, 1, 1))])
    pts = np.array([[0.25, 0.5], [0.3, 0.2], [0.7, 0.7], [1.5, 0.5]])
    T_obs, dropped = report_counts(pts, regions, EffortWeights([1, 1]),
                                   np.random.default_rng(0))
    assert T_obs[:, 0].tolist() == [2, 1]
    assert dropped == 1


def test_report_counts_coincident_regions_split_evenly():
    g = box(0, 0, 1, 1)
    regions = RegionSet([Region("a", g), Region("b", g)])
    rng = np.random.default_rng(3)
    pts = rng.uniform(0, 1, size=(10_000, 2))
    T_obs, dropped = report_counts(pts, regions, EffortWeights([1.0, 1.0]), rng)
    assert dropped == 0
    assert T_obs.sum() == 10_000
    assert abs(T_obs[0, 0] - 5000) < 3 * np.sqrt(10_000 * 0.25)


def test_report_counts_conservation_over_union():
    rng = np.random.default_rng(4)
    from conftest import random_region_set
    from shapely.ops import unary_union
    from shapely import contains_xy

    regions = random_region_set(rng, 3)
    pts = rng.uniform(0, 1, size=(5000, 2))
    T_obs, dropped = report_counts(pts, regions, EffortWeights.from_regions(regions), rng)
    union = unary_union([r.geometry for r in regions])
    covered = int(contains_xy(union, pts[:, 0], pts[:, 1]).sum())
    assert int(T_obs.sum()) == covered
    assert dropped == 5000 - covered


def test_end_to_end_expected_totals_match_allocation_math():
    """E[T_i | Y] = sum_j q_ij p_ij at the true state: the strongest
    cross-module tie between the simulator and the allocation machinery."""
    grid = build_grid((0, 0, 1, 1), 4, 4)
    factory = SpectralFactory(grid)
    regions = make_tile_regions(grid, 2, 2, buffer=0.15)
    rng = np.random.default_rng(5)
    spec = ModelSpec(grid)
    params = CovarianceParams(0.5, 0.2)

    class TP:
        beta = np.array([4.5])
        cov = params

    y, _, _ = simulate_lgcp(grid, spec, TP, rng)  # fix one field draw
    state = make_state(np.zeros((1, grid.n_ext)), TP.beta, np.log(0.5), np.log(0.2),
                       None, factory)
    state.y = y
    part = build_partition(grid, regions)
    w = EffortWeights.from_regions(regions)
    masses = base_mass(part, state, covariates=spec.design)
    q = exact_q(part, w)
    want = np.array([(q[i, c] * p[0]).sum() for i, (c, p) in enumerate(masses)])

    reps = 3000
    acc = np.zeros(len(regions))
    rate = grid.cell_area * np.exp(spec.design[..., 0] * TP.beta[0] + y)
    for _ in range(reps):
        counts = rng.poisson(rate)
        pts = []
        for t in range(1):
            cells = np.repeat(np.arange(grid.n_cells), counts[t])
            if cells.size:
                bounds = np.array([grid.cell_bounds(j) for j in cells])
                xs = rng.uniform(bounds[:, 0], bounds[:, 2])
                ys = rng.uniform(bounds[:, 1], bounds[:, 3])
                pts.append(np.column_stack([xs, ys]))
            else:
                pts.append(np.empty((0, 2)))
        T_obs, _ = report_counts(pts, regions, w, rng)
        acc += T_obs[:, 0]
    mean = acc / reps
    se = np.sqrt(np.maximum(want, 1.0) / reps) * 1.5  # reporting adds dispersion
    assert np.all(np.abs(mean - want) < 3 * se)
