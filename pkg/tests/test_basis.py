# File: tests/test_basis.py
import numpy as np
import pytest

from core.basis import (BasisSpec, build_basis, eval_ortho, eval_ortho_and_deriv, eval_raw, eval_raw_deriv,
                        gram_matrix, make_basis, orthonormalize)
from models.errors import IllConditionedBasisError, InvalidArgumentError
from tests.helpers import central_difference, gaussian_overlap_gram


@pytest.mark.parametrize("p, delta, periodic", [
    (31, 0.2, False),
    (21, 0.2, False),
    (21, 0.5, True),
    (9, 0.3, False),
])
def test_orthonormalized_gram_is_identity(p, delta, periodic):
    spec = build_basis(p, delta, periodic)
    gram = gram_matrix(spec)
    assert spec.orthonormal
    assert np.max(np.abs(gram - np.eye(spec.size))) < 1e-10


def test_quadrature_gram_matches_closed_form():
    for p, delta in [(9, 0.3), (15, 0.25)]:
        spec = make_basis(p, delta)
        np.testing.assert_allclose(gram_matrix(spec), gaussian_overlap_gram(spec.centers, delta), atol=1e-12)


def test_centers():
    flat = make_basis(5, 0.3)
    np.testing.assert_allclose(flat.centers, [-1.0, -0.5, 0.0, 0.5, 1.0])
    ring = make_basis(4, 0.3, periodic=True)
    np.testing.assert_allclose(ring.centers, [-np.pi, -np.pi / 2, 0.0, np.pi / 2])


def test_invalid_parameters():
    with pytest.raises(InvalidArgumentError):
        make_basis(1, 0.3)
    with pytest.raises(InvalidArgumentError):
        make_basis(5, 0.0)


def test_too_wide_basis_is_ill_conditioned():
    with pytest.raises(IllConditionedBasisError):
        build_basis(16, 100.0)


def test_raw_derivative_matches_finite_differences():
    for spec in (make_basis(7, 0.3), make_basis(7, 0.6, periodic=True)):
        for z in np.linspace(-0.9, 0.9, 7):
            for j in range(spec.p):
                fd = central_difference(lambda y: eval_raw(spec, y[0])[j], np.array([z]))
                assert eval_raw_deriv(spec, z)[j] == pytest.approx(fd[0], abs=1e-7)


def test_orthonormal_derivative_is_transformed_raw_derivative(small_basis):
    z = np.linspace(-1.0, 1.0, 11)
    values, derivs = eval_ortho_and_deriv(small_basis, z)
    np.testing.assert_allclose(values, eval_ortho(small_basis, z))
    np.testing.assert_allclose(derivs, eval_raw_deriv(small_basis, z) @ small_basis.transform.T)


def test_scalar_and_array_shapes(small_basis):
    assert eval_ortho(small_basis, 0.2).shape == (small_basis.size,)
    assert eval_ortho(small_basis, np.array([0.2, 0.3])).shape == (2, small_basis.size)


def test_periodic_basis_wraps():
    spec = build_basis(8, 0.7, periodic=True)
    z = np.array([-2.0, 0.3, 3.0])
    np.testing.assert_allclose(eval_ortho(spec, z), eval_ortho(spec, z + 2 * np.pi), atol=1e-9)


def test_dict_round_trip(small_basis):
    again = BasisSpec.from_dict(small_basis.to_dict())
    z = np.linspace(-1.0, 1.0, 5)
    np.testing.assert_array_equal(eval_ortho(again, z), eval_ortho(small_basis, z))
    assert again.size == small_basis.size


def test_raw_values_at_center_and_one_width():
    spec = make_basis(7, 0.3)
    for j in range(1, 5):
        center = spec.centers[j]
        assert eval_raw(spec, center)[j] == 1.0
        assert eval_raw(spec, center + spec.delta)[j] == pytest.approx(np.exp(-0.5), rel=1e-14)


def test_periodic_raw_values_continuous_across_seam():
    spec = make_basis(8, 0.7, periodic=True)
    left = eval_raw(spec, np.pi - 1e-9)
    right = eval_raw(spec, -np.pi + 1e-9)
    np.testing.assert_allclose(left, right, atol=1e-8)


def test_orthonormalize_is_idempotent(small_basis):
    again = orthonormalize(small_basis)
    assert again.size == small_basis.size
    scale = np.abs(small_basis.transform).max()
    np.testing.assert_allclose(again.transform, small_basis.transform, atol=1e-10 * scale)


def test_separated_pair_normalizes_each_function():
    # centers at -1 and 1, overlap exp(-100): only half of each Gaussian lies in the domain
    spec = build_basis(2, 0.1)
    norm = 1.0 / np.sqrt(0.5 * 0.1 * np.sqrt(np.pi))
    np.testing.assert_allclose(spec.transform, norm * np.eye(2), rtol=1e-10, atol=1e-10)


def test_in_domain_values_are_transformed_raw_values(small_basis):
    z = np.linspace(-1.0, 1.0, 41)
    np.testing.assert_array_equal(eval_ortho(small_basis, z), eval_raw(small_basis, z) @ small_basis.transform.T)


@pytest.mark.parametrize("edge", [-1.0, 1.0])
def test_continuation_is_continuous_at_the_edge(edge):
    spec = build_basis(9, 0.3)
    inner_values, inner_derivs = eval_ortho_and_deriv(spec, edge)
    outer_values, outer_derivs = eval_ortho_and_deriv(spec, edge + np.sign(edge) * 1e-9)
    scale = np.abs(inner_derivs).max()
    np.testing.assert_allclose(outer_values, inner_values, atol=1e-8 * scale)
    np.testing.assert_allclose(outer_derivs, inner_derivs, atol=1e-6 * scale)


@pytest.mark.parametrize("p, delta", [(9, 0.3), (31, 0.2)])
def test_continuation_stays_bounded_and_decays(p, delta):
    spec = build_basis(p, delta)
    for edge in (-1.0, 1.0):
        values, derivs = eval_ortho_and_deriv(spec, edge)
        bound = np.abs(values) + np.abs(derivs) * delta
        z = edge + np.sign(edge) * np.linspace(1e-3, 4.0, 400)
        assert np.all(np.abs(eval_ortho(spec, z)) <= bound + 1e-12)
        assert np.abs(eval_ortho(spec, edge + np.sign(edge) * 12 * delta)).max() < 1e-20


def test_continuation_derivative_matches_finite_differences():
    spec = build_basis(9, 0.3)
    for z in (-1.6, -1.05, 1.2, 1.9):
        _, derivs = eval_ortho_and_deriv(spec, z)
        for j in range(spec.size):
            fd = central_difference(lambda y: eval_ortho(spec, y[0])[j], np.array([z]))
            assert derivs[j] == pytest.approx(fd[0], rel=1e-5, abs=1e-6)
