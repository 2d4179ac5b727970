"""Allocation probabilities: closed forms, MC agreement, conservation."""

import numpy as np
import pytest
from shapely.geometry import box

from aggcox.allocation import (
    EffortWeights,
    base_mass,
    draw_augmented_counts,
    exact_q,
    initialise_counts,
    make_allocation_table,
    marginal_q_uncertain,
    mc_q,
)
from aggcox.errors import AllocationError
from aggcox.grid import build_grid
from aggcox.model import ModelSpec, make_state
from aggcox.partition import build_partition
from aggcox.regions import MixtureBoundary, Region, RegionSet
from aggcox.spectral import SpectralFactory
from conftest import random_region_set


def _single_cell_grid():
    return build_grid((0, 0, 1, 1), 1, 1)


def test_weights_normalise_over_signature():
    w = EffortWeights([1.0, 2.0, 3.0])
    for sig in [(0,), (0, 1), (0, 1, 2), (1, 2)]:
        assert sum(w.weight(i, sig) for i in sig) == pytest.approx(1.0)
    assert w.weight(0, (1, 2)) == 0.0


def test_weights_overrides():
    w = EffortWeights([1.0, 1.0], cell_overrides={(0, 5): 3.0},
                      intersection_overrides={(0, 7, (0, 1)): 9.0})
    assert w.weight(0, (0, 1), j=5) == pytest.approx(0.75)
    assert w.weight(0, (0, 1), j=7) == pytest.approx(0.9)
    assert w.weight(0, (0, 1), j=1) == pytest.approx(0.5)


def test_exact_q_two_full_cover_equal_effort():
    grid = _single_cell_grid()
    regions = RegionSet([Region("a", box(0, 0, 1, 1)), Region("b", box(0, 0, 1, 1))])
    part = build_partition(grid, regions)
    q = exact_q(part, EffortWeights([1.0, 1.0]))
    assert q[0, 0] == pytest.approx(0.5, abs=1e-12)
    assert q[1, 0] == pytest.approx(0.5, abs=1e-12)


def test_exact_q_effort_two_to_one():
    grid = _single_cell_grid()
    regions = RegionSet([Region("a", box(0, 0, 1, 1)), Region("b", box(0, 0, 1, 1))])
    part = build_partition(grid, regions)
    q = exact_q(part, EffortWeights([2.0, 1.0]))
    assert q[0, 0] == pytest.approx(2 / 3, abs=1e-12)


def test_exact_q_half_cover_expansion():
    # A1 covers the cell, A2 covers half, equal effort -> q1 = 0.5 + 0.5*0.5
    grid = _single_cell_grid()
    regions = RegionSet([Region("a", box(0, 0, 1, 1)), Region("b", box(0, 0, 0.5, 1))])
    part = build_partition(grid, regions)
    q = exact_q(part, EffortWeights([1.0, 1.0]))
    assert q[0, 0] == pytest.approx(0.75, abs=1e-12)
    assert q[1, 0] == pytest.approx(0.5, abs=1e-12)


def test_exact_q_one_without_overlap():
    grid = build_grid((0, 0, 1, 1), 2, 2)
    regions = RegionSet([Region("a", box(0, 0, 0.6, 1.0))])
    part = build_partition(grid, regions)
    q = exact_q(part, EffortWeights([1.0]))
    for cells, _ in [part.region_cells[0]]:
        assert np.allclose(q[0, cells], 1.0)


def two_region_closed_form(part, weights, i, other, j):
    """p^mod/p expansion for a two-region cell: (1 - rho) + W * rho."""
    areas = part.area_matrix()
    elems = dict(part.elements[j])
    both = elems.get(tuple(sorted((i, other))), 0.0)
    rho = both / areas[i, j]
    W = weights.weight(i, tuple(sorted((i, other))), j)
    return (1 - rho) + W * rho


def test_exact_q_matches_two_region_closed_form_random():
    rng = np.random.default_rng(11)
    for _ in range(20):
        grid = build_grid((0, 0, 1, 1), 3, 3)
        regions = random_region_set(rng, 2)
        part = build_partition(grid, regions)
        w = EffortWeights.from_regions(regions)
        q = exact_q(part, w)
        areas = part.area_matrix()
        for j in range(grid.n_cells):
            hits = np.nonzero(areas[:, j] > 0)[0]
            if len(hits) == 2:
                for i in hits:
                    other = [h for h in hits if h != i][0]
                    want = two_region_closed_form(part, w, int(i), int(other), j)
                    assert q[i, j] == pytest.approx(want, abs=1e-12)


def test_mc_q_single_cover_is_one_for_any_m():
    grid = _single_cell_grid()
    regions = RegionSet([Region("a", box(-1, -1, 2, 2))])
    part = build_partition(grid, regions)
    for M in (1, 7, 100):
        q = mc_q(part, EffortWeights([1.0]), M, np.random.default_rng(0))
        assert q[0, 0] == pytest.approx(1.0)


def test_mc_q_within_mc_error_of_exact():
    rng = np.random.default_rng(12)
    grid = build_grid((0, 0, 1, 1), 2, 2)
    regions = random_region_set(rng, 3)
    part = build_partition(grid, regions)
    w = EffortWeights.from_regions(regions)
    qe = exact_q(part, w)
    qm, se = mc_q(part, w, 100_000, rng, return_se=True)
    for i, (cells, _) in enumerate(part.region_cells):
        for j in cells:
            tol = max(3 * se[i, j], 1e-5)
            assert abs(qm[i, j] - qe[i, j]) < tol


def test_mc_q_deterministic_given_seed():
    rng_a = np.random.default_rng(3)
    regions = random_region_set(np.random.default_rng(5), 2)
    part = build_partition(build_grid((0, 0, 1, 1), 2, 2), regions)
    w = EffortWeights.from_regions(regions)
    qa = mc_q(part, w, 500, np.random.default_rng(42))
    qb = mc_q(part, w, 500, np.random.default_rng(42))
    assert np.array_equal(qa, qb)


def test_marginal_q_mixture_cover_or_miss():
    # mixture: half the draws cover the cell, half miss it entirely
    grid = _single_cell_grid()
    cover = box(-0.5, -0.5, 1.5, 1.5)
    miss = box(5, 5, 6, 6)
    model = MixtureBoundary((cover, miss), (1.0, 1.0))
    regions = RegionSet([Region("m", cover, boundary_model=model)])
    q = marginal_q_uncertain(grid, regions, EffortWeights([1.0]), M=200, n_gamma=400,
                             rng=np.random.default_rng(13))
    se = np.sqrt(0.25 / 400)
    assert abs(q[0, 0] - 0.5) < 3 * se


def test_marginal_q_all_fixed_equals_mc_q():
    rng = np.random.default_rng(14)
    grid = build_grid((0, 0, 1, 1), 2, 2)
    regions = random_region_set(rng, 2)
    part = build_partition(grid, regions)
    w = EffortWeights.from_regions(regions)
    q_marg = marginal_q_uncertain(grid, regions, w, M=40_000, n_gamma=2, rng=rng)
    q_mc, se = mc_q(part, w, 80_000, rng, return_se=True)
    mask = se > 0
    assert np.all(np.abs(q_marg - q_mc)[mask] < 5 * se[mask] + 1e-3)


def _flat_state(grid, factory, beta=()):
    return make_state(np.zeros((grid.n_times, grid.n_ext)), np.asarray(beta, float),
                      np.log(0.5), np.log(0.2), None if grid.n_times == 1 else 0.0, factory)


def test_base_mass_symmetry_and_scaling():
    grid = build_grid((0, 0, 1, 1), 2, 1)
    factory = SpectralFactory(grid)
    regions = RegionSet([Region("a", box(0, 0, 1, 1))])
    part = build_partition(grid, regions)
    state = _flat_state(grid, factory)
    masses = base_mass(part, state)
    cells, p = masses[0]
    assert p[0, 0] == pytest.approx(p[0, 1])  # equal halves, constant field
    # doubling exp(Y) in one cell doubles its mass
    state2 = _flat_state(grid, factory)
    state2.y = state.y.copy()
    state2.y[0, 0] += np.log(2)
    p2 = base_mass(part, state2)[0][1]
    assert p2[0, 0] == pytest.approx(2 * p[0, 0])
    assert p2[0, 1] == pytest.approx(p[0, 1])


def test_base_mass_matches_direct_reevaluation():
    rng = np.random.default_rng(15)
    grid = build_grid((0, 0, 1, 1), 4, 4)
    factory = SpectralFactory(grid)
    regions = random_region_set(rng, 3)
    part = build_partition(grid, regions)
    Z = rng.standard_normal((1, grid.n_cells, 2))
    lam = rng.uniform(0.5, 2.0, size=(1, grid.n_cells))
    state = make_state(rng.standard_normal((1, grid.n_ext)), rng.standard_normal(2),
                       np.log(0.7), np.log(0.2), None, factory)
    masses = base_mass(part, state, covariates=Z, offset=lam)
    areas = part.area_matrix()
    for i, (cells, p) in enumerate(masses):
        for k, j in enumerate(cells):
            want = areas[i, j] * lam[0, j] * np.exp(Z[0, j] @ state.beta + state.y[0, j])
            assert p[0, k] == pytest.approx(want, rel=1e-12)


def test_draw_conservation_and_zero_totals():
    rng = np.random.default_rng(16)
    grid = build_grid((0, 0, 1, 1), 3, 3)
    factory = SpectralFactory(grid)
    regions = random_region_set(rng, 3)
    part = build_partition(grid, regions)
    state = _flat_state(grid, factory)
    table = make_allocation_table(part, state)
    T_obs = np.array([[13], [0], [211]])
    aug = draw_augmented_counts(T_obs, table, rng)
    assert aug.conserves()
    assert aug.counts[1].sum() == 0
    assert aug.n.sum() == 224


def test_draw_binomial_moments():
    grid = build_grid((0, 0, 1, 1), 2, 1)
    factory = SpectralFactory(grid)
    regions = RegionSet([Region("a", box(0, 0, 1, 1))])
    part = build_partition(grid, regions)
    state = _flat_state(grid, factory)
    table = make_allocation_table(part, state)
    T_obs = np.array([[100_000]])
    aug = draw_augmented_counts(T_obs, table, np.random.default_rng(17))
    sd = np.sqrt(100_000 * 0.25)
    assert abs(aug.counts[0][0, 0] - 50_000) < 3 * sd


def test_draw_empirical_frequencies_match_pq():
    # 2 overlapping regions, 3-cell strip, hand-set field
    grid = build_grid((0, 0, 3, 1), 3, 1)
    factory = SpectralFactory(grid)
    regions = RegionSet([Region("a", box(0, 0, 2, 1)), Region("b", box(1, 0, 3, 1))])
    part = build_partition(grid, regions)
    state = _flat_state(grid, factory)
    state.y = np.array([[0.3, -0.2, 0.8]])
    w = EffortWeights([1.0, 2.0])
    table = make_allocation_table(part, state, weights=w)
    rng = np.random.default_rng(18)
    draws = 100_000
    T_obs = np.array([[1], [0]])
    hits = np.zeros(3)
    for _ in range(draws):
        aug = draw_augmented_counts(T_obs, table, rng)
        hits += aug.n[0]
    p = table.probs[0][0]
    for k, j in enumerate(table.cells[0]):
        se = np.sqrt(p[k] * (1 - p[k]) / draws)
        assert abs(hits[j] / draws - p[k]) < 3 * se
    # and the probabilities themselves match hand arithmetic:
    # q_a = [1, 1/3], masses a: [e^{0.3}, e^{-0.2}/3]
    want = np.array([np.exp(0.3), np.exp(-0.2) / 3])
    want /= want.sum()
    assert np.allclose(p, want, rtol=1e-12)


def test_zero_mass_with_positive_total_is_hard_error():
    grid = build_grid((0, 0, 1, 1), 2, 1)
    factory = SpectralFactory(grid)
    regions = RegionSet([Region("a", box(0, 0, 1, 1))])
    part = build_partition(grid, regions)
    state = _flat_state(grid, factory)
    lam = np.zeros((1, grid.n_cells))
    table = make_allocation_table(part, state, offset=lam)
    with pytest.raises(AllocationError, match="zero allocation mass"):
        draw_augmented_counts(np.array([[5]]), table, np.random.default_rng(0))


def test_initialise_counts_offset_proportional():
    grid = build_grid((0, 0, 1, 1), 2, 1)
    regions = RegionSet([Region("a", box(0, 0, 1, 1))])
    part = build_partition(grid, regions)
    rng = np.random.default_rng(19)
    # zero offset in cell 0 forces all events into cell 1
    lam = np.array([[0.0, 3.0]])
    aug = initialise_counts(np.array([[25]]), part, lam, rng)
    assert aug.n[0, 0] == 0 and aug.n[0, 1] == 25


def test_initialise_counts_conservation_on_random_instances():
    rng = np.random.default_rng(20)
    for _ in range(100):
        grid = build_grid((0, 0, 1, 1), 3, 3)
        regions = random_region_set(rng, int(rng.integers(1, 4)))
        part = build_partition(grid, regions)
        T_obs = rng.integers(0, 30, size=(len(regions), 1))
        aug = initialise_counts(T_obs, part, None, rng)
        assert aug.conserves()


def test_homogeneity_across_overlap_zone():
    """Constant intensity + symmetric efforts: reconstructed density is flat.

    Two regions overlap in the middle cell of a 3-cell strip; totals are the
    expected reported counts under a homogeneous process, so the average
    reconstructed N per cell must be constant across overlap and
    non-overlap cells.
    """
    grid = build_grid((0, 0, 3, 1), 3, 1)
    factory = SpectralFactory(grid)
    regions = RegionSet([Region("a", box(0, 0, 2, 1)), Region("b", box(1, 0, 3, 1))])
    part = build_partition(grid, regions)
    state = _flat_state(grid, factory)
    state.y = np.zeros((1, 3))  # constant intensity
    table = make_allocation_table(part, state)
    # homogeneous rate 90 per unit area; overlap events split evenly
    T_obs = np.array([[135], [135]])  # each region reports 90*1.5 on average
    rng = np.random.default_rng(21)
    acc = np.zeros(3)
    draws = 10_000
    for _ in range(draws):
        acc += draw_augmented_counts(T_obs, table, rng).n[0]
    dens = acc / draws
    se = 3 * np.sqrt(90 / draws) * 2
    assert abs(dens[0] - dens[1]) < se
    assert abs(dens[1] - dens[2]) < se
    assert abs(dens.sum() - 270) < 1e-9
