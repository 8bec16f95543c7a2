# File: core/bias.py
# Softplus-regularized log-density bias and the biased drift

import hashlib
import json
import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from scipy.special import expit

from core.cv import CvMap, as_batch
from core.fht import FhtModel, evaluate, evaluate_with_gradient
from core.history import RescaleMap
from core.potentials import BasePotential
from models.core_models import CvMapSpec, RegularizerConfig
from models.errors import IncompatibleBiasError, InvalidArgumentError

logger = logging.getLogger(__name__)

BIAS_FORMAT = "pathmv-bias"
BIAS_VERSION = 1
# Beyond this |r / tau| the softplus is replaced by its asymptote
ASYMPTOTE = 30.0


def softplus_reg(r, eps: float, tau: float):
    """K(r) = eps + tau * log(1 + exp(r / tau)), >= eps everywhere"""
    if eps <= 0 or tau <= 0:
        raise InvalidArgumentError(f"eps and tau must be positive, got eps={eps}, tau={tau}")
    x = np.asarray(r, dtype=float) / tau
    mid = np.clip(x, -ASYMPTOTE, ASYMPTOTE)
    soft = np.where(x > ASYMPTOTE, x, np.where(x < -ASYMPTOTE, np.exp(np.minimum(x, 0.0)), np.log1p(np.exp(mid))))
    out = eps + tau * soft
    return float(out) if out.ndim == 0 else out


def softplus_reg_deriv(r, tau: float):
    """dK/dr = sigmoid(r / tau)"""
    out = expit(np.asarray(r, dtype=float) / tau)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class BiasPotential:
    """V(z) = (alpha / beta) log K(rho_FHT(rescale(z)) * prod J_k)"""
    model: Optional[FhtModel]
    rescale: RescaleMap
    eps: float
    tau: float
    alpha: float
    beta: float
    iteration: int = 0

    @property
    def m(self) -> int:
        return self.rescale.m

    @property
    def strength(self) -> float:
        return self.alpha / self.beta

    @property
    def is_zero(self) -> bool:
        return self.model is None or self.alpha == 0.0

    @classmethod
    def zero(cls, m: int, beta: float, regularizer: Optional[RegularizerConfig] = None,
             periodic_mask=None) -> "BiasPotential":
        """Bias of the first stage: no model, no force"""
        regularizer = regularizer or RegularizerConfig()
        return cls(model=None, rescale=RescaleMap.identity(m, periodic_mask), eps=regularizer.eps,
                   tau=regularizer.tau, alpha=0.0, beta=beta)

    def density(self, z: np.ndarray) -> np.ndarray:
        """Fitted CV density in raw coordinates"""
        return evaluate(self.model, self.rescale.rescale(z)) * np.prod(self.rescale.jacobian)

    def to_dict(self) -> dict:
        return {
            "format": BIAS_FORMAT,
            "version": BIAS_VERSION,
            "m": self.m,
            "iteration": self.iteration,
            "eps": self.eps,
            "tau": self.tau,
            "alpha": self.alpha,
            "beta": self.beta,
            "rescale": self.rescale.to_dict(),
            "model": None if self.model is None else self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BiasPotential":
        if data.get("format") != BIAS_FORMAT:
            raise IncompatibleBiasError(f"not a bias snapshot (format={data.get('format')!r})")
        if data.get("version") != BIAS_VERSION:
            raise IncompatibleBiasError(f"unsupported bias snapshot version {data.get('version')}")
        model = None if data["model"] is None else FhtModel.from_dict(data["model"])
        return cls(model=model, rescale=RescaleMap.from_dict(data["rescale"]), eps=float(data["eps"]),
                   tau=float(data["tau"]), alpha=float(data["alpha"]), beta=float(data["beta"]),
                   iteration=int(data.get("iteration", 0)))

    def content_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _cv_rows(bp: BiasPotential, z_raw: np.ndarray) -> Tuple[np.ndarray, bool]:
    return as_batch(z_raw, bp.m)


def bias_value(bp: BiasPotential, z_raw: np.ndarray):
    """V_bias at raw CV points"""
    rows, single = _cv_rows(bp, z_raw)
    if bp.is_zero:
        values = np.zeros(rows.shape[0])
    else:
        rho = bp.density(rows)
        values = bp.strength * np.log(softplus_reg(rho, bp.eps, bp.tau))
    return float(values[0]) if single else values


def bias_value_and_gradient(bp: BiasPotential, z_raw: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    rows, _ = _cv_rows(bp, z_raw)
    if bp.is_zero:
        return np.zeros(rows.shape[0]), np.zeros_like(rows)
    jac = bp.rescale.jacobian
    volume = np.prod(jac)
    rho_hat, grad_hat = evaluate_with_gradient(bp.model, bp.rescale.rescale(rows))
    rho = rho_hat * volume
    grad_rho = grad_hat * (volume * jac)
    k_val = np.atleast_1d(softplus_reg(rho, bp.eps, bp.tau))
    k_prime = np.atleast_1d(softplus_reg_deriv(rho, bp.tau))
    values = bp.strength * np.log(k_val)
    grads = (bp.strength * k_prime / k_val)[:, None] * grad_rho
    return values, grads


def bias_gradient_cv(bp: BiasPotential, z_raw: np.ndarray) -> np.ndarray:
    """grad_z V = (alpha / beta) K'(rho) / K(rho) grad_z rho"""
    _, single = _cv_rows(bp, z_raw)
    grads = bias_value_and_gradient(bp, z_raw)[1]
    return grads[0] if single else grads


class BiasedForceField:
    """F(x) = -grad U(x) - grad xi(x)^T grad V(xi(x)) over walker batches"""

    def __init__(self, potential: BasePotential, cv_map: Union[CvMap, CvMapSpec], bias: Optional[BiasPotential]):
        self.potential = potential
        self.cv_map = cv_map if isinstance(cv_map, CvMap) else CvMap(cv_map)
        self.bias = bias
        if bias is not None and bias.m != self.cv_map.m:
            raise IncompatibleBiasError(f"bias over {bias.m} CVs cannot drive a map with m={self.cv_map.m}")

    @property
    def biased(self) -> bool:
        return self.bias is not None and not self.bias.is_zero

    def __call__(self, x: np.ndarray) -> np.ndarray:
        force = -self.potential.gradient(x)
        if not self.biased:
            return force
        z = self.cv_map.evaluate(x)
        _, grad_z = bias_value_and_gradient(self.bias, z)
        return force - self.cv_map.pullback(x, grad_z)

    def bias_energy(self, x: np.ndarray) -> np.ndarray:
        """V_bias(xi(x)) per row"""
        if not self.biased:
            return np.zeros(x.shape[0])
        return bias_value(self.bias, self.cv_map.evaluate(x))


def total_force(bp: Optional[BiasPotential], potential: BasePotential, cv_map: Union[CvMap, CvMapSpec],
                x: np.ndarray) -> np.ndarray:
    """Biased drift times gamma at one point or a batch"""
    field = BiasedForceField(potential, cv_map, bp)
    rows, single = as_batch(x, field.cv_map.dim)
    forces = field(rows)
    return forces[0] if single else forces
