# File: core/potentials.py
# Analytic benchmark potentials with exact gradients

import logging
from abc import ABC, abstractmethod
from typing import List, Sequence, Tuple

import numpy as np

from core.cv import as_batch, chain_turn_angles
from models.core_models import PotentialKind, PotentialSpec
from models.errors import InvalidArgumentError

logger = logging.getLogger(__name__)

# Standard Mueller-Brown parameter set
MUELLER_BROWN_PARAMS = {
    "A": [-200.0, -100.0, -170.0, 15.0],
    "a": [-1.0, -1.0, -6.5, 0.7],
    "b": [0.0, 0.0, 11.0, 0.6],
    "c": [-10.0, -10.0, -6.5, 0.7],
    "x0": [1.0, 0.0, -0.5, -1.0],
    "y0": [0.0, 0.5, 1.5, 1.0],
}
# Deepest well of the standard surface, U there is about -146.7
MUELLER_BROWN_DEEPEST = (-0.558224, 1.441726)

PERIODIC_CHAIN_DEFAULTS = {
    "bond_k": 50.0,
    "bond_length": 1.0,
    "tether": 0.5,
    "amplitude": 1.0,
    "multiplicity": 2,
    "coupling": 0.5,
}


class BasePotential(ABC):
    """Energy U(x) and gradient over batches of shape (n, d)"""

    def __init__(self, spec: PotentialSpec):
        self.spec = spec
        self.dim = spec.dim

    @abstractmethod
    def energy(self, x: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def gradient(self, x: np.ndarray) -> np.ndarray:
        ...


class MuellerBrownPotential(BasePotential):
    """U(x, y) = sum_i A_i exp(a_i dx^2 + b_i dx dy + c_i dy^2)"""

    def __init__(self, spec: PotentialSpec):
        super().__init__(spec)
        params = {**MUELLER_BROWN_PARAMS, **spec.params}
        self.A, self.a, self.b, self.c, self.x0, self.y0 = (
            np.asarray(params[key], dtype=float) for key in ("A", "a", "b", "c", "x0", "y0")
        )

    def _terms(self, x: np.ndarray):
        dx = x[:, 0:1] - self.x0
        dy = x[:, 1:2] - self.y0
        weighted = self.A * np.exp(self.a * dx ** 2 + self.b * dx * dy + self.c * dy ** 2)
        return dx, dy, weighted

    def energy(self, x: np.ndarray) -> np.ndarray:
        return self._terms(x)[2].sum(axis=1)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        dx, dy, weighted = self._terms(x)
        grad_x = (weighted * (2.0 * self.a * dx + self.b * dy)).sum(axis=1)
        grad_y = (weighted * (self.b * dx + 2.0 * self.c * dy)).sum(axis=1)
        return np.stack([grad_x, grad_y], axis=1)


class DoubleWellPotential(BasePotential):
    """U(x) = h (x^2 - 1)^2"""

    def __init__(self, spec: PotentialSpec):
        super().__init__(spec)
        self.height = float(spec.params.get("height", 1.0))

    def energy(self, x: np.ndarray) -> np.ndarray:
        return self.height * (x[:, 0] ** 2 - 1.0) ** 2

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return (4.0 * self.height * x[:, 0] * (x[:, 0] ** 2 - 1.0))[:, None]


class MultiWellPotential(BasePotential):
    """U = h log(1 + prod_i |x - c_i|^2 / w^(2k)).

    log of a product of squared planar distances is harmonic away from the
    centers, so the only local minima are the prescribed centers (U = 0 there).
    """

    def __init__(self, spec: PotentialSpec):
        super().__init__(spec)
        self.centers = np.asarray(spec.params.get("centers", [[-1.0, 0.0], [1.0, 0.0]]), dtype=float)
        if self.centers.ndim != 2 or self.centers.shape[1] != 2:
            raise InvalidArgumentError("multi_well_2d centers must be a list of 2D points")
        self.height = float(spec.params.get("height", 1.0))
        width = float(spec.params.get("width", 1.0))
        self.scale = width ** (2 * len(self.centers))

    def _factors(self, x: np.ndarray):
        diff = x[:, None, :] - self.centers[None, :, :]
        dist2 = np.einsum("nkd,nkd->nk", diff, diff)
        return diff, dist2, np.prod(dist2, axis=1)

    def energy(self, x: np.ndarray) -> np.ndarray:
        return self.height * np.log1p(self._factors(x)[2] / self.scale)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        diff, dist2, prod = self._factors(x)
        k = len(self.centers)
        grad_f = np.zeros_like(x)
        for i in range(k):
            others = np.prod(np.delete(dist2, i, axis=1), axis=1) if k > 1 else np.ones(len(x))
            grad_f += 2.0 * diff[:, i, :] * others[:, None]
        return self.height * grad_f / (self.scale + prod)[:, None]


class PeriodicChainPotential(BasePotential):
    """Planar bead chain with cosine terms in consecutive turn angles.

    U = k_b sum (|b| - l0)^2 + t |p_0|^2 + A sum cos(n theta_j)
        + c sum cos(theta_j - theta_{j+1})
    """

    def __init__(self, spec: PotentialSpec):
        super().__init__(spec)
        params = {**PERIODIC_CHAIN_DEFAULTS, **spec.params}
        self.n_beads = int(params.get("n_beads", 4))
        self.bond_k = float(params["bond_k"])
        self.bond_length = float(params["bond_length"])
        self.tether = float(params["tether"])
        self.amplitude = float(params["amplitude"])
        self.multiplicity = int(params["multiplicity"])
        self.coupling = float(params["coupling"])

    def _bonds(self, x: np.ndarray):
        pos = x.reshape(len(x), self.n_beads, 2)
        bonds = pos[:, 1:] - pos[:, :-1]
        return pos, bonds, np.linalg.norm(bonds, axis=-1)

    def energy(self, x: np.ndarray) -> np.ndarray:
        pos, _, lengths = self._bonds(x)
        theta = chain_turn_angles(x, self.n_beads)
        u = self.bond_k * ((lengths - self.bond_length) ** 2).sum(axis=1)
        u += self.tether * (pos[:, 0] ** 2).sum(axis=1)
        u += self.amplitude * np.cos(self.multiplicity * theta).sum(axis=1)
        if theta.shape[1] > 1:
            u += self.coupling * np.cos(theta[:, :-1] - theta[:, 1:]).sum(axis=1)
        return u

    def gradient(self, x: np.ndarray) -> np.ndarray:
        n = len(x)
        pos, bonds, lengths = self._bonds(x)
        grad = np.zeros((n, self.n_beads, 2))
        g_bond = (2.0 * self.bond_k * (lengths - self.bond_length) / lengths)[..., None] * bonds
        grad[:, 1:] += g_bond
        grad[:, :-1] -= g_bond
        grad[:, 0] += 2.0 * self.tether * pos[:, 0]

        theta, jac = chain_turn_angles(x, self.n_beads, with_jacobian=True)
        du_dtheta = -self.amplitude * self.multiplicity * np.sin(self.multiplicity * theta)
        if theta.shape[1] > 1:
            s = np.sin(theta[:, :-1] - theta[:, 1:])
            du_dtheta[:, :-1] -= self.coupling * s
            du_dtheta[:, 1:] += self.coupling * s
        return grad.reshape(n, -1) + np.einsum("nmd,nm->nd", jac, du_dtheta)


_REGISTRY = {
    PotentialKind.MUELLER_BROWN: MuellerBrownPotential,
    PotentialKind.DOUBLE_WELL_1D: DoubleWellPotential,
    PotentialKind.MULTI_WELL_2D: MultiWellPotential,
    PotentialKind.PERIODIC_CHAIN: PeriodicChainPotential,
}


def build_potential(spec: PotentialSpec) -> BasePotential:
    return _REGISTRY[spec.kind](spec)


def eval_energy(spec: PotentialSpec, x: np.ndarray):
    """U(x) for one point (float) or a batch (array)"""
    batch, single = as_batch(x, spec.dim)
    energy = build_potential(spec).energy(batch)
    return float(energy[0]) if single else energy


def eval_gradient(spec: PotentialSpec, x: np.ndarray) -> np.ndarray:
    """Exact analytic gradient of U"""
    batch, single = as_batch(x, spec.dim)
    grad = build_potential(spec).gradient(batch)
    return grad[0] if single else grad


def descend(potential: BasePotential, start: Sequence[float], tol: float = 1e-8,
            max_iter: int = 50000) -> Tuple[np.ndarray, bool, int]:
    """Damped gradient descent with backtracking from one start.

    A step is accepted on sufficient decrease, or, once energy differences drop
    below round-off, when it reduces the gradient norm.
    """
    x = np.asarray(start, dtype=float)[None, :]
    u = potential.energy(x)[0]
    g = potential.gradient(x)[0]
    step = 1e-3
    for iteration in range(max_iter):
        gnorm2 = float(g @ g)
        if np.sqrt(gnorm2) <= tol:
            return x[0], True, iteration
        accepted = False
        for _ in range(60):
            trial = x - step * g
            u_trial = potential.energy(trial)[0]
            g_trial = potential.gradient(trial)[0]
            roundoff = 1e-12 * max(1.0, abs(u))
            if u_trial <= u - 1e-4 * step * gnorm2 or (
                    abs(u_trial - u) <= roundoff and g_trial @ g_trial < gnorm2):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            return x[0], False, iteration
        x, u, g = trial, u_trial, g_trial
        step *= 2.0
    return x[0], bool(np.sqrt(g @ g) <= tol), max_iter


def locate_minima(spec: PotentialSpec, starts: Sequence[Sequence[float]], tol: float = 1e-8,
                  max_iter: int = 50000, dedup: float = 1e-3) -> List[Tuple[np.ndarray, float]]:
    """Deduplicated converged local minima sorted by energy"""
    if len(starts) == 0:
        raise InvalidArgumentError("locate_minima needs at least one start")
    potential = build_potential(spec)
    minima: List[Tuple[np.ndarray, float]] = []
    for start in starts:
        if len(start) != spec.dim:
            raise InvalidArgumentError(f"start {start} has wrong length for dim={spec.dim}")
        point, converged, n_iter = descend(potential, start, tol=tol, max_iter=max_iter)
        if not converged:
            logger.warning(f"Minimisation from {list(start)} did not converge after {n_iter} iterations")
            continue
        if any(np.linalg.norm(point - known) <= dedup for known, _ in minima):
            continue
        minima.append((point, float(potential.energy(point[None, :])[0])))
    minima.sort(key=lambda item: item[1])
    logger.info(f"Located {len(minima)} minima from {len(starts)} starts")
    return minima
