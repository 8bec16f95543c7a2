# File: tests/test_history.py
import numpy as np
import pytest

from core.history import (HistoryDataset, RescaleMap, append_stage, fit_rescale, history_weights,
                          path_history_measure, wasserstein2_1d)
from models.core_models import WeightScheme, WeightSchemeKind
from models.errors import InvalidArgumentError


def _two_stages(scheme=None):
    ds = HistoryDataset.empty(1, scheme=scheme)
    ds = append_stage(ds, np.array([[0.0], [0.1], [0.2]]), stage=1)
    return append_stage(ds, np.linspace(0.0, 1.0, 5)[:, None], stage=2)


def test_uniform_weights_cover_all_stages():
    ds = _two_stages()
    assert ds.n_samples == 8
    np.testing.assert_allclose(ds.weights, 1.0 / 8)
    assert ds.stage_ranges == [(1, 0, 3), (2, 3, 8)]
    assert ds.latest_stage == 2


def test_exponential_recency_weights():
    scheme = WeightScheme(kind=WeightSchemeKind.EXP_RECENCY, lam=np.log(2.0))
    ds = append_stage(append_stage(HistoryDataset.empty(1, scheme=scheme), [0.0], stage=1), [1.0], stage=2)
    np.testing.assert_allclose(ds.weights, [1.0 / 3.0, 2.0 / 3.0])
    assert ds.weights.sum() == pytest.approx(1.0)


def test_negative_rate_rejected():
    scheme = WeightScheme(kind=WeightSchemeKind.EXP_RECENCY, lam=-1.0)
    with pytest.raises(InvalidArgumentError):
        append_stage(HistoryDataset.empty(1), [0.0], weight_scheme=scheme)
    with pytest.raises(InvalidArgumentError):
        history_weights(np.array([0, 1]), scheme)


def test_column_mismatch_rejected():
    with pytest.raises(InvalidArgumentError):
        append_stage(HistoryDataset.empty(2), np.zeros((3, 3)))


def test_stage_cannot_go_back():
    ds = append_stage(HistoryDataset.empty(1), [0.0], stage=4)
    with pytest.raises(InvalidArgumentError):
        append_stage(ds, [1.0], stage=2)


def test_periodic_columns_wrapped_on_append():
    ds = append_stage(HistoryDataset.empty(2, periodic_mask=[False, True]), np.array([[5.0, 4.0]]))
    np.testing.assert_allclose(ds.samples, [[5.0, 4.0 - 2 * np.pi]])


def test_fit_rescale_maps_bounds_to_unit_box():
    ds = append_stage(HistoryDataset.empty(1), np.array([[0.0], [10.0], [3.0]]))
    rescale = fit_rescale(ds, margin=0.1)
    np.testing.assert_allclose(rescale.lo, [-1.0])
    np.testing.assert_allclose(rescale.hi, [11.0])
    np.testing.assert_allclose(rescale.rescale(np.array([[-1.0], [11.0]])), [[-1.0], [1.0]])
    z = np.array([[2.5], [7.0]])
    np.testing.assert_allclose(rescale.unrescale(rescale.rescale(z)), z)
    assert rescale.jacobian[0] == pytest.approx(2.0 / 12.0)


def test_periodic_coordinates_keep_native_domain():
    ds = append_stage(HistoryDataset.empty(2, periodic_mask=[True, False]),
                      np.array([[0.1, 1.0], [0.5, 2.0]]))
    rescale = fit_rescale(ds)
    assert rescale.lo[0] == -np.pi and rescale.hi[0] == np.pi
    assert rescale.jacobian[0] == 1.0
    assert rescale.rescale(np.array([0.5, 2.0]))[0] == pytest.approx(0.5)


def test_fit_rescale_errors():
    with pytest.raises(InvalidArgumentError):
        fit_rescale(append_stage(HistoryDataset.empty(1), [1.0]))
    flat = append_stage(HistoryDataset.empty(2), np.array([[0.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(InvalidArgumentError):
        fit_rescale(flat)
    with pytest.raises(InvalidArgumentError):
        fit_rescale(_two_stages(), margin=-0.1)


def test_rescale_map_dict_round_trip():
    rescale = RescaleMap(lo=np.array([-0.3, -np.pi]), hi=np.array([1.7, np.pi]),
                         periodic_mask=np.array([False, True]))
    again = RescaleMap.from_dict(rescale.to_dict())
    z = np.array([[0.2, 3.0], [1.0, -1.0]])
    np.testing.assert_array_equal(again.rescale(z), rescale.rescale(z))


def test_path_history_measure_normalises():
    path = np.arange(4.0)[:, None]
    support, q = path_history_measure(path, [1.0, 1.0, 2.0, 0.0])
    np.testing.assert_array_equal(support, path)
    np.testing.assert_allclose(q, [0.25, 0.25, 0.5, 0.0])
    with pytest.raises(InvalidArgumentError):
        path_history_measure(path, [1.0, 1.0])


def test_wasserstein_simple_cases():
    assert wasserstein2_1d([0.0, 1.0], [0.5, 1.5]) == pytest.approx(0.5)
    assert wasserstein2_1d([0.0], [2.0]) == pytest.approx(2.0)
    assert wasserstein2_1d([3.0, 1.0, 2.0], [1.0, 2.0, 3.0]) == pytest.approx(0.0)
    with pytest.raises(InvalidArgumentError):
        wasserstein2_1d([], [1.0])


def test_history_measure_tracks_its_path():
    """W2 between the history measures of two paths is bounded by their sup distance"""
    rng = np.random.default_rng(0)
    path = np.cumsum(rng.normal(0.0, 0.1, 500))
    other = path + rng.uniform(-0.05, 0.05, 500)
    q = np.exp(-0.01 * np.arange(500)[::-1])
    a, wa = path_history_measure(path, q)
    b, wb = path_history_measure(other, q)
    assert wasserstein2_1d(a, b, wa, wb) <= np.max(np.abs(path - other)) + 1e-12
