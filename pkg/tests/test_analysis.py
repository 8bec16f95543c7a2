# File: tests/test_analysis.py
from dataclasses import replace

import numpy as np
import pytest
from pydantic import ValidationError
from scipy.integrate import quad

from core.analysis import (FesGrid, assign_basins, block_bootstrap, count_transitions, fes_difference,
                           fes_histogram, fes_rmse, flattened_fes, merge_transition_counts,
                           reference_fes_quadrature, reweight_weights, weighted_mean)
from core.potentials import build_potential
from models.core_models import BasinSpec, CvMapSpec, PotentialSpec
from models.errors import EmptyDatasetError, InvalidArgumentError

TWO_BASINS = BasinSpec(centers=[[-1.0], [1.0]], radius=0.2)


def _grid(values, axis):
    values = np.asarray(values, dtype=float)
    return FesGrid(axes=[np.asarray(axis, dtype=float)], values=values, mask=np.isfinite(values), beta=1.0)


def test_reweighting_is_exponential_in_bias():
    np.testing.assert_allclose(reweight_weights(np.array([0.0, np.log(3.0)]), beta=1.0), [0.25, 0.75])
    bias = np.random.default_rng(0).normal(0.0, 3.0, 50)
    np.testing.assert_allclose(reweight_weights(bias + 40.0, 2.0), reweight_weights(bias, 2.0), rtol=1e-10)
    assert weighted_mean([1.0, 3.0], [0.25, 0.75]) == pytest.approx(2.5)


def test_uniform_samples_give_flat_surface():
    samples = np.random.default_rng(1).uniform(0.0, 1.0, 200_000)
    fes = fes_histogram(samples, None, beta=1.0, bins=20, ranges=[(0.0, 1.0)])
    assert fes.mask.all()
    assert np.nanmin(fes.values) == 0.0
    # 10000 per bin: relative count noise 1%
    assert np.nanmax(fes.values) < 0.1


def test_gaussian_samples_give_quadratic_surface():
    s, beta = 0.5, 2.0
    samples = np.random.default_rng(2).normal(0.0, s, 1_000_000)
    fes = fes_histogram(samples, None, beta=beta, bins=64, ranges=[(-1.5, 1.5)])
    axis = fes.axes[0]
    exact = _grid(axis ** 2 / (2 * s ** 2 * beta), axis)
    assert fes_rmse(fes, exact) < 0.05 / beta


def test_weighted_histogram_matches_reweighted_target():
    """Uniform samples reweighted by exp(-beta x^2) recover the quadratic surface"""
    beta = 1.0
    samples = np.random.default_rng(3).uniform(-1.0, 1.0, 400_000)
    weights = reweight_weights(-samples ** 2, beta)
    fes = fes_histogram(samples, weights, beta=beta, bins=20, ranges=[(-1.0, 1.0)])
    exact = _grid(fes.axes[0] ** 2, fes.axes[0])
    assert fes_rmse(fes, exact) < 0.02


def test_histogram_errors():
    with pytest.raises(EmptyDatasetError):
        fes_histogram(np.zeros((0, 2)), None, beta=1.0)
    with pytest.raises(InvalidArgumentError):
        fes_histogram(np.zeros((10, 3)), None, beta=1.0, subset=[0, 1, 2])
    with pytest.raises(InvalidArgumentError):
        fes_histogram(np.zeros((10, 2)), None, beta=1.0, ranges=[(0.0, 1.0)], subset=[0, 1])
    with pytest.raises(EmptyDatasetError):
        fes_histogram(np.full(10, 5.0), None, beta=1.0, ranges=[(0.0, 1.0)])


def test_two_dimensional_histogram_subset():
    samples = np.random.default_rng(4).normal(size=(5000, 3))
    fes = fes_histogram(samples, None, beta=1.0, bins=8, ranges=[(-2.0, 2.0), (-2.0, 2.0)], subset=[2, 0])
    assert fes.values.shape == (8, 8)
    assert fes.subset == (2, 0)
    assert list(fes.to_frame().columns) == ["z_3", "z_1", "value", "defined"]


def test_frame_round_trip():
    samples = np.random.default_rng(5).normal(size=(300, 2))
    fes = fes_histogram(samples, None, beta=0.5, bins=6, ranges=[(-2.0, 2.0), (-1.0, 1.0)])
    again = FesGrid.from_frame(fes.to_frame(), beta=0.5)
    np.testing.assert_array_equal(again.values, fes.values)
    np.testing.assert_array_equal(again.mask, fes.mask)
    assert again.subset == (0, 1)


def test_double_well_reference(double_well):
    ref = reference_fes_quadrature(double_well, CvMapSpec(dim=1), [np.array([-1.0, 0.0, 1.0])], beta=3.0)
    np.testing.assert_allclose(ref.values, [0.0, 1.0, 0.0], atol=1e-14)


def test_mueller_reference_is_aligned(mueller):
    axes = [np.linspace(-1.5, 1.2, 28), np.linspace(-0.4, 2.0, 25)]
    ref = reference_fes_quadrature(mueller, CvMapSpec(dim=2), axes, beta=0.1)
    assert ref.values.shape == (28, 25)
    assert np.nanmin(ref.values) == 0.0
    assert ref.mask.all()


def test_marginal_reference_matches_direct_integration():
    spec = PotentialSpec.multi_well([[0.3, -0.2]], height=1.5, width=0.8)
    potential = build_potential(spec)
    beta = 2.0
    axis = np.linspace(-1.0, 1.0, 5)
    ref = reference_fes_quadrature(spec, CvMapSpec(dim=2), [axis], beta, subset=[0], other_range=(-2.0, 2.0))

    def marginal(x):
        integral, _ = quad(lambda y: np.exp(-beta * potential.energy(np.array([[x, y]]))[0]), -2.0, 2.0,
                           epsabs=1e-13, epsrel=1e-13)
        return -np.log(integral) / beta

    expected = np.array([marginal(x) for x in axis])
    np.testing.assert_allclose(ref.values, expected - expected.min(), atol=1e-7)


def test_flat_potential_gives_flat_marginal():
    spec = PotentialSpec.multi_well([[0.0, 0.0]], height=0.0)
    ref = reference_fes_quadrature(spec, CvMapSpec(dim=2), [np.linspace(-1.0, 1.0, 7)], 1.0,
                                   subset=[1], other_range=(-1.0, 1.0))
    np.testing.assert_allclose(ref.values, 0.0, atol=1e-12)


def test_reference_needs_identity_map_and_range(mueller):
    with pytest.raises(InvalidArgumentError):
        reference_fes_quadrature(mueller, CvMapSpec(dim=2), [np.zeros(3)], beta=1.0, subset=[0])
    with pytest.raises(InvalidArgumentError):
        reference_fes_quadrature(PotentialSpec.periodic_chain(4), CvMapSpec(dim=8), [np.zeros(3)], beta=1.0)


def test_difference_and_rmse_ignore_offsets():
    axis = np.linspace(0.0, 1.0, 5)
    a = _grid([0.0, 1.0, 2.0, np.nan, 0.5], axis)
    b = _grid([3.0, 4.0, 5.0, 3.0, np.nan], axis)
    diff = fes_difference(a, b)
    np.testing.assert_array_equal(diff.mask, [True, True, True, False, False])
    np.testing.assert_allclose(diff.values[:3], -3.0)
    assert fes_rmse(a, b) == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(InvalidArgumentError):
        fes_difference(a, _grid([0.0, 1.0], [0.0, 1.0]))


def test_rmse_cutoff_restricts_bins():
    axis = np.linspace(0.0, 1.0, 4)
    fes = _grid([0.0, 1.0, 2.0, 9.0], axis)
    ref = _grid([0.0, 1.0, 2.0, 3.0], axis)
    assert fes_rmse(fes, ref) > 1.0
    assert fes_rmse(fes, ref, cutoff=2.5) == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(EmptyDatasetError):
        fes_rmse(fes, ref, cutoff=-1.0)


def test_flattened_surface_is_scaled():
    axis = np.linspace(-1.0, 1.0, 5)
    fes = _grid([4.0, 1.0, 0.0, 1.0, np.nan], axis)
    flat = flattened_fes(fes, alpha=3.0)
    np.testing.assert_allclose(flat.values[:4], [1.0, 0.25, 0.0, 0.25])
    assert np.isnan(flat.values[4])
    with pytest.raises(InvalidArgumentError):
        flattened_fes(fes, alpha=-1.0)


def test_basin_assignment():
    labels = assign_basins(np.array([-1.1, -0.5, 0.95, 1.3]), TWO_BASINS)
    np.testing.assert_array_equal(labels, [0, -1, 1, -1])
    with pytest.raises(InvalidArgumentError):
        assign_basins(np.zeros((3, 2)), TWO_BASINS)


def test_overlapping_basins_rejected():
    with pytest.raises(ValidationError):
        BasinSpec(centers=[[0.0], [0.3]], radius=0.2)


def test_alternating_series_counts_every_switch():
    counts = count_transitions(np.array([-1.0, 1.0, -1.0, 1.0, -1.0, 1.0]), TWO_BASINS)
    assert counts == {"total": 5, "pairs": {"0->1": 3, "1->0": 2}}


def test_staying_in_one_basin_counts_nothing():
    assert count_transitions(np.full(50, -1.0), TWO_BASINS) == {"total": 0, "pairs": {}}
    assert count_transitions(np.zeros(10), TWO_BASINS)["total"] == 0


def test_excursions_keep_the_last_basin():
    series = np.array([-1.0, 0.0, -1.0, 0.4, -0.9, 0.0, 1.0])
    assert count_transitions(series, TWO_BASINS)["total"] == 1


def test_repeated_snapshots_do_not_change_counts():
    series = np.array([-1.0, 0.0, 1.0, 0.1, -1.05, 1.0])
    once = count_transitions(series, TWO_BASINS)
    twice = count_transitions(np.repeat(series, 3), TWO_BASINS)
    assert once == twice
    merged = merge_transition_counts([once, twice])
    assert merged["total"] == 2 * once["total"]
    assert merged["pairs"]["0->1"] == 2 * once["pairs"]["0->1"]


def test_block_bootstrap_error_scale():
    values = np.random.default_rng(6).normal(2.0, 1.0, 10_000)
    estimate, error = block_bootstrap(values, block=100, n_boot=400, seed=1)
    assert estimate == pytest.approx(values.mean())
    assert 0.005 < error < 0.02
    assert block_bootstrap(values, block=100, n_boot=400, seed=1) == (estimate, error)


def test_block_bootstrap_short_series():
    estimate, error = block_bootstrap(np.array([1.0, 2.0, 3.0]), block=10)
    assert estimate == pytest.approx(2.0)
    assert np.isnan(error)
    with pytest.raises(EmptyDatasetError):
        block_bootstrap(np.array([]))


def test_shifted_bias_surface_agrees_to_rounding():
    rng = np.random.default_rng(11)
    samples = rng.normal(0.0, 0.5, size=(5000, 1))
    bias = np.sin(3.0 * samples[:, 0])
    fes = fes_histogram(samples, reweight_weights(bias, 2.0), 2.0, bins=20, ranges=[(-1.5, 1.5)])
    shifted = fes_histogram(samples, reweight_weights(bias + 25.0, 2.0), 2.0, bins=20, ranges=[(-1.5, 1.5)])
    np.testing.assert_array_equal(shifted.mask, fes.mask)
    np.testing.assert_allclose(shifted.values[fes.mask], fes.values[fes.mask], rtol=0.0, atol=1e-10)
    offset = replace(fes, values=np.where(fes.mask, fes.values + 3.0, np.nan))
    assert fes_rmse(offset, fes) == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(fes_difference(offset, fes).values[fes.mask], 3.0)
