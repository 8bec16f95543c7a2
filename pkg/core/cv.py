# File: core/cv.py
# Collective-variable maps and their Jacobians

import logging
from typing import Tuple, Union

import numpy as np

from models.core_models import CvKind, CvMapSpec
from models.errors import InvalidArgumentError

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


def wrap_angle(theta: np.ndarray) -> np.ndarray:
    """Map angles into [-pi, pi)"""
    wrapped = np.mod(np.asarray(theta, dtype=float) + np.pi, TWO_PI) - np.pi
    return np.where(wrapped >= np.pi, wrapped - TWO_PI, wrapped)


def as_batch(x: np.ndarray, dim: int) -> Tuple[np.ndarray, bool]:
    """Promote a single point to a batch and check its width"""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise InvalidArgumentError(f"expected points of length {dim}, got shape {np.shape(x)}")
    return arr, single


def chain_turn_angles(x: np.ndarray, n_beads: int, with_jacobian: bool = False):
    """Signed turn angles between consecutive bonds of a planar bead chain.

    The angle between bonds b1 and b2 is atan2(b1 x b2, b1 . b2), so a straight
    (collinear, same direction) chain has angle 0 and a fully folded one has -pi.
    Returns angles of shape (n, n_beads - 2) and optionally the Jacobian of shape
    (n, n_beads - 2, 2 * n_beads).
    """
    n = x.shape[0]
    pos = x.reshape(n, n_beads, 2)
    bonds = pos[:, 1:] - pos[:, :-1]
    lengths2 = np.einsum("nbk,nbk->nb", bonds, bonds)
    if np.any(lengths2 <= 0.0):
        raise InvalidArgumentError("chain has a zero-length bond; turn angle undefined")

    b1, b2 = bonds[:, :-1], bonds[:, 1:]
    cross = b1[..., 0] * b2[..., 1] - b1[..., 1] * b2[..., 0]
    dot = np.einsum("nmk,nmk->nm", b1, b2)
    theta = wrap_angle(np.arctan2(cross, dot))
    if not with_jacobian:
        return theta

    den = (cross ** 2 + dot ** 2)[..., None]
    dc_db1 = np.stack([b2[..., 1], -b2[..., 0]], axis=-1)
    dc_db2 = np.stack([-b1[..., 1], b1[..., 0]], axis=-1)
    g1 = (dot[..., None] * dc_db1 - cross[..., None] * b2) / den
    g2 = (dot[..., None] * dc_db2 - cross[..., None] * b1) / den

    m = n_beads - 2
    jac = np.zeros((n, m, n_beads, 2))
    idx = np.arange(m)
    jac[:, idx, idx] -= g1
    jac[:, idx, idx + 1] += g1 - g2
    jac[:, idx, idx + 2] += g2
    return theta, jac.reshape(n, m, 2 * n_beads)


class CvMap:
    """Vectorised evaluation of a CvMapSpec over batches of configurations"""

    def __init__(self, spec: CvMapSpec):
        self.spec = spec
        self.dim = spec.dim
        self.m = spec.m
        self.periodic_mask = np.array(spec.periodic_mask, dtype=bool)
        if spec.kind == CvKind.COORDINATE_SUBSET:
            self._indices = np.array(spec.indices, dtype=int)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        kind = self.spec.kind
        if kind == CvKind.CHAIN_ANGLES:
            return chain_turn_angles(x, self.spec.n_beads)
        z = x.copy() if kind == CvKind.IDENTITY else x[:, self._indices]
        if self.periodic_mask.any():
            z[:, self.periodic_mask] = wrap_angle(z[:, self.periodic_mask])
        return z

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        kind = self.spec.kind
        if kind == CvKind.CHAIN_ANGLES:
            return chain_turn_angles(x, self.spec.n_beads, with_jacobian=True)[1]
        if kind == CvKind.IDENTITY:
            return np.broadcast_to(np.eye(self.dim), (n, self.dim, self.dim)).copy()
        jac = np.zeros((n, self.m, self.dim))
        jac[:, np.arange(self.m), self._indices] = 1.0
        return jac

    def pullback(self, x: np.ndarray, grad_z: np.ndarray) -> np.ndarray:
        """grad_x = J(x)^T grad_z for every row"""
        kind = self.spec.kind
        if kind == CvKind.IDENTITY:
            return grad_z.copy()
        if kind == CvKind.COORDINATE_SUBSET:
            out = np.zeros((x.shape[0], self.dim))
            np.add.at(out, (slice(None), self._indices), grad_z)
            return out
        return np.einsum("nmd,nm->nd", self.jacobian(x), grad_z)


def _as_map(cv_map: Union[CvMap, CvMapSpec]) -> CvMap:
    return cv_map if isinstance(cv_map, CvMap) else CvMap(cv_map)


def eval_cv(cv_map: Union[CvMap, CvMapSpec], x: np.ndarray) -> np.ndarray:
    """z = xi(x); periodic coordinates wrapped into [-pi, pi)"""
    cv_map = _as_map(cv_map)
    batch, single = as_batch(x, cv_map.dim)
    z = cv_map.evaluate(batch)
    return z[0] if single else z


def eval_jacobian(cv_map: Union[CvMap, CvMapSpec], x: np.ndarray) -> np.ndarray:
    """grad xi(x), rows indexed by CV coordinate"""
    cv_map = _as_map(cv_map)
    batch, single = as_batch(x, cv_map.dim)
    jac = cv_map.jacobian(batch)
    return jac[0] if single else jac
