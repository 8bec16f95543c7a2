# File: core/basis.py
# Gaussian feature bases per CV coordinate and their orthonormalization

import logging
import math
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np

from models.errors import IllConditionedBasisError, InvalidArgumentError

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
# Singular-value floor relative to the largest; eigenvalue floor is its square
SINGULAR_FLOOR = 1e-4
# exp(-x^2 / 2) < 1e-14 beyond this many widths
TAIL_WIDTHS = 8.03


@dataclass(frozen=True, eq=False)
class BasisSpec:
    """Gaussian features with an orthonormalizing transform.

    Evaluated functions are ``transform @ raw(z)``; ``transform`` starts as the
    identity and becomes (p_eff, p) once orthonormalized.
    """
    p: int
    delta: float
    periodic: bool
    centers: np.ndarray
    transform: np.ndarray
    orthonormal: bool = False

    @property
    def size(self) -> int:
        return self.transform.shape[0]

    @property
    def domain(self) -> Tuple[float, float]:
        return (-np.pi, np.pi) if self.periodic else (-1.0, 1.0)

    @property
    def n_images(self) -> int:
        return int(math.ceil(TAIL_WIDTHS * self.delta / TWO_PI)) + 1

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "delta": self.delta,
            "periodic": self.periodic,
            "orthonormal": self.orthonormal,
            "transform": self.transform.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BasisSpec":
        spec = make_basis(int(data["p"]), float(data["delta"]), bool(data["periodic"]))
        return replace(spec, transform=np.asarray(data["transform"], dtype=float),
                       orthonormal=bool(data["orthonormal"]))


def make_basis(p: int, delta: float, periodic: bool = False) -> BasisSpec:
    """Raw basis with equally spaced centers"""
    if p < 2:
        raise InvalidArgumentError(f"basis needs at least 2 functions, got p={p}")
    if delta <= 0:
        raise InvalidArgumentError(f"basis width must be positive, got {delta}")
    if periodic:
        # -pi and pi are the same point, so +pi is not a center
        centers = -np.pi + TWO_PI * np.arange(p) / p
    else:
        centers = -1.0 + 2.0 * np.arange(p) / (p - 1)
        centers[-1] = 1.0
    return BasisSpec(p=p, delta=float(delta), periodic=periodic, centers=centers, transform=np.eye(p))


def _raw(spec: BasisSpec, z: np.ndarray, with_deriv: bool):
    diff = z[:, None] - spec.centers[None, :]
    inv = 1.0 / (2.0 * spec.delta ** 2)
    if not spec.periodic:
        values = np.exp(-inv * diff ** 2)
        return values, (-diff / spec.delta ** 2) * values if with_deriv else None
    values = np.zeros_like(diff)
    derivs = np.zeros_like(diff) if with_deriv else None
    for shift in range(-spec.n_images, spec.n_images + 1):
        shifted = diff + TWO_PI * shift
        term = np.exp(-inv * shifted ** 2)
        values += term
        if with_deriv:
            derivs += (-shifted / spec.delta ** 2) * term
    return values, derivs


def _as_points(z) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(z, dtype=float)
    return arr.reshape(-1), arr.ndim == 0


def eval_raw(spec: BasisSpec, z) -> np.ndarray:
    """Raw Gaussians psi_j(z); shape (p,) for a scalar, (n, p) for an array"""
    points, scalar = _as_points(z)
    values, _ = _raw(spec, points, with_deriv=False)
    return values[0] if scalar else values


def eval_raw_deriv(spec: BasisSpec, z) -> np.ndarray:
    points, scalar = _as_points(z)
    _, derivs = _raw(spec, points, with_deriv=True)
    return derivs[0] if scalar else derivs


def _ortho(spec: BasisSpec, points: np.ndarray, with_deriv: bool):
    """Transformed functions; outside [-1, 1] a Gaussian-damped linear continuation.

    Beyond the edge e the value is ``(phi(e) + phi'(e) * g) * exp(-g^2 / (2 delta^2))``
    with g = z - e; value and slope are continuous at the edge.
    """
    if spec.periodic:
        values, derivs = _raw(spec, points, with_deriv)
        return values @ spec.transform.T, derivs @ spec.transform.T if with_deriv else None
    edge = np.clip(points, -1.0, 1.0)
    outside = edge != points
    extend = bool(outside.any())
    values, derivs = _raw(spec, edge, with_deriv or extend)
    values = values @ spec.transform.T
    if derivs is not None:
        derivs = derivs @ spec.transform.T
    if extend:
        gap = (points - edge)[outside][:, None]
        damp = np.exp(-0.5 * (gap / spec.delta) ** 2)
        slope = derivs[outside]
        linear = values[outside] + slope * gap
        values[outside] = linear * damp
        derivs[outside] = (slope - linear * gap / spec.delta ** 2) * damp
    return values, derivs if with_deriv else None


def eval_ortho(spec: BasisSpec, z) -> np.ndarray:
    points, scalar = _as_points(z)
    out, _ = _ortho(spec, points, with_deriv=False)
    return out[0] if scalar else out


def eval_ortho_and_deriv(spec: BasisSpec, z) -> Tuple[np.ndarray, np.ndarray]:
    """Values and first derivatives of the orthonormalized functions"""
    points, scalar = _as_points(z)
    values, derivs = _ortho(spec, points, with_deriv=True)
    if scalar:
        return values[0], derivs[0]
    return values, derivs


def quadrature(spec: BasisSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and weights over the coordinate domain (Lebesgue measure)"""
    if spec.periodic:
        n = max(256, 2 * int(math.ceil(8.0 * np.pi / spec.delta)))
        nodes = -np.pi + TWO_PI * np.arange(n) / n
        return nodes, np.full(n, TWO_PI / n)
    n = max(256, int(math.ceil(20.0 / spec.delta)))
    return np.polynomial.legendre.leggauss(n)


def gram_matrix(spec: BasisSpec) -> np.ndarray:
    """Gram matrix of the current (transformed) functions by quadrature"""
    nodes, weights = quadrature(spec)
    phi = eval_ortho(spec, nodes) * np.sqrt(weights)[:, None]
    return phi.T @ phi


def orthonormalize(spec: BasisSpec, floor: float = SINGULAR_FLOOR) -> BasisSpec:
    """Compose the transform with G^{-1/2} so the functions have identity Gram.

    Directions whose singular value falls below ``floor * s_max`` are dropped;
    the symmetric form is used when none are, the canonical form otherwise.
    The SVD runs on quadrature-weighted values; G itself is never formed.
    """
    nodes, weights = quadrature(spec)
    phi = eval_ortho(spec, nodes) * np.sqrt(weights)[:, None]
    _, s, vt = np.linalg.svd(phi, full_matrices=False)
    keep = s > floor * s[0]
    n_keep = int(keep.sum())
    if n_keep < math.ceil(spec.p / 4):
        raise IllConditionedBasisError(
            f"basis p={spec.p}, delta={spec.delta} keeps {n_keep} of {spec.size} directions; "
            f"use a smaller width or fewer functions"
        )
    if n_keep == s.size:
        step = vt.T @ (vt / s[:, None])
    else:
        logger.warning(f"Basis p={spec.p}, delta={spec.delta}: dropped {s.size - n_keep} "
                       f"near-dependent directions, {n_keep} remain")
        step = vt[keep] / s[keep][:, None]
    return replace(spec, transform=step @ spec.transform, orthonormal=True)


def build_basis(p: int, delta: float, periodic: bool = False) -> BasisSpec:
    return orthonormalize(make_basis(p, delta, periodic))
