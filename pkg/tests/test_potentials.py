# File: tests/test_potentials.py
import numpy as np
import pytest

from core.potentials import (MUELLER_BROWN_DEEPEST, build_potential, eval_energy, eval_gradient,
                             locate_minima)
from models.core_models import PotentialKind, PotentialSpec
from models.errors import InvalidArgumentError
from tests.helpers import central_difference


def test_double_well_values(double_well):
    assert eval_energy(double_well, [1.0]) == 0.0
    assert eval_energy(double_well, [0.0]) == 1.0
    assert eval_gradient(double_well, [0.0])[0] == 0.0
    assert eval_gradient(double_well, [2.0])[0] == pytest.approx(24.0)


def test_batch_and_single_shapes(mueller):
    batch = np.array([[0.0, 0.0], [0.5, 0.5], [-0.5, 1.5]])
    assert eval_energy(mueller, batch).shape == (3,)
    assert isinstance(eval_energy(mueller, batch[0]), float)
    assert eval_gradient(mueller, batch).shape == (3, 2)
    with pytest.raises(InvalidArgumentError):
        eval_energy(mueller, [1.0, 2.0, 3.0])


def test_mueller_deepest_minimum(mueller):
    minima = locate_minima(mueller, [list(MUELLER_BROWN_DEEPEST)])
    point, energy = minima[0]
    assert energy == pytest.approx(-146.7, abs=0.05)
    np.testing.assert_allclose(point, [-0.558, 1.442], atol=2e-3)


def test_mueller_has_three_wells(mueller):
    starts = [[x, y] for x in np.linspace(-1.2, 1.0, 6) for y in np.linspace(-0.2, 1.8, 6)]
    minima = locate_minima(mueller, starts)
    assert len(minima) == 3
    energies = [e for _, e in minima]
    assert energies == sorted(energies)
    assert energies[0] == pytest.approx(-146.7, abs=0.05)


def test_locate_minima_double_well(double_well):
    minima = locate_minima(double_well, [[-2.0], [2.0]])
    points = sorted(float(p[0]) for p, _ in minima)
    np.testing.assert_allclose(points, [-1.0, 1.0], atol=1e-6)
    assert all(abs(e) < 1e-10 for _, e in minima)


def test_locate_minima_needs_starts(double_well):
    with pytest.raises(InvalidArgumentError):
        locate_minima(double_well, [])


def test_multi_well_minima_at_centres():
    spec = PotentialSpec.multi_well([[-1.0, 0.0], [1.0, 0.0], [0.0, 1.5]])
    energies = eval_energy(spec, np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, 1.5]]))
    np.testing.assert_allclose(energies, 0.0, atol=1e-14)
    assert eval_energy(spec, [0.0, 0.5]) > 0.0


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        PotentialSpec(kind=PotentialKind.DOUBLE_WELL_1D, dim=2)


def _chain_points(rng, n):
    """Bent four-bead chains with bond lengths near 1"""
    points = []
    for _ in range(n):
        heading = rng.uniform(-np.pi, np.pi)
        bead = rng.normal(0.0, 0.3, 2)
        beads = [bead]
        for _ in range(3):
            heading += rng.uniform(-1.5, 1.5)
            length = rng.uniform(0.9, 1.1)
            bead = bead + length * np.array([np.cos(heading), np.sin(heading)])
            beads.append(bead)
        points.append(np.concatenate(beads))
    return np.array(points)


@pytest.mark.parametrize("spec, box", [
    (PotentialSpec.mueller_brown(), [(-1.5, 1.0), (-0.5, 2.0)]),
    (PotentialSpec.double_well(), [(-2.0, 2.0)]),
    (PotentialSpec.multi_well([[-1.0, 0.0], [1.0, 0.0]], height=2.0), [(-2.0, 2.0), (-2.0, 2.0)]),
])
def test_gradient_matches_finite_differences(spec, box):
    rng = np.random.default_rng(3)
    lo, hi = np.array(box).T
    points = rng.uniform(lo, hi, size=(100, spec.dim))
    potential = build_potential(spec)
    grads = potential.gradient(points)
    for x, g in zip(points, grads):
        fd = central_difference(lambda y: potential.energy(y[None, :])[0], x, h=1e-5)
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-5)


def test_periodic_chain_gradient_matches_finite_differences():
    spec = PotentialSpec.periodic_chain(n_beads=4)
    potential = build_potential(spec)
    points = _chain_points(np.random.default_rng(5), 100)
    grads = potential.gradient(points)
    for x, g in zip(points, grads):
        fd = central_difference(lambda y: potential.energy(y[None, :])[0], x, h=1e-6)
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-5)
