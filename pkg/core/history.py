# File: core/history.py
# Weighted path-history measure over accumulated CV snapshots

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from core.cv import wrap_angle
from models.core_models import WeightScheme, WeightSchemeKind
from models.errors import InvalidArgumentError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class HistoryDataset:
    """CV snapshots of every stage so far with their history weights"""
    samples: np.ndarray
    weights: np.ndarray
    stages: np.ndarray
    periodic_mask: np.ndarray
    scheme: WeightScheme = field(default_factory=WeightScheme)

    @classmethod
    def empty(cls, m: int, periodic_mask: Optional[Sequence[bool]] = None,
              scheme: Optional[WeightScheme] = None) -> "HistoryDataset":
        mask = np.zeros(m, dtype=bool) if periodic_mask is None else np.asarray(periodic_mask, dtype=bool)
        if mask.size != m:
            raise InvalidArgumentError(f"periodic mask has {mask.size} entries, expected {m}")
        return cls(samples=np.empty((0, m)), weights=np.empty(0), stages=np.empty(0, dtype=int),
                   periodic_mask=mask, scheme=scheme or WeightScheme())

    @property
    def m(self) -> int:
        return self.samples.shape[1]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def latest_stage(self) -> int:
        return int(self.stages[-1]) if self.n_samples else -1

    @property
    def stage_ranges(self) -> List[Tuple[int, int, int]]:
        """(stage, start, stop) slices delimiting each stage's contribution"""
        ranges = []
        if not self.n_samples:
            return ranges
        cuts = np.flatnonzero(np.diff(self.stages)) + 1
        starts = np.concatenate([[0], cuts])
        stops = np.concatenate([cuts, [self.n_samples]])
        for start, stop in zip(starts, stops):
            ranges.append((int(self.stages[start]), int(start), int(stop)))
        return ranges

    def stage_samples(self, stage: int) -> np.ndarray:
        return self.samples[self.stages == stage]


def history_weights(stages: np.ndarray, scheme: WeightScheme) -> np.ndarray:
    """Normalised q over samples tagged with their stage index"""
    if scheme.lam < 0:
        raise InvalidArgumentError(f"recency rate must be non-negative, got {scheme.lam}")
    n = len(stages)
    if n == 0:
        return np.empty(0)
    if scheme.kind == WeightSchemeKind.UNIFORM or scheme.lam == 0.0:
        return np.full(n, 1.0 / n)
    log_w = -scheme.lam * (stages.max() - stages).astype(float)
    return np.exp(log_w - logsumexp(log_w))


def append_stage(ds: HistoryDataset, new_samples: np.ndarray, weight_scheme: Optional[WeightScheme] = None,
                 stage: Optional[int] = None) -> HistoryDataset:
    """Append one stage of snapshots and recompute weights over the whole history"""
    scheme = weight_scheme or ds.scheme
    if scheme.lam < 0:
        raise InvalidArgumentError(f"recency rate must be non-negative, got {scheme.lam}")
    new_samples = np.asarray(new_samples, dtype=float)
    if new_samples.ndim == 1:
        new_samples = new_samples[:, None] if ds.m == 1 else new_samples[None, :]
    if new_samples.shape[1] != ds.m:
        raise InvalidArgumentError(f"new samples have {new_samples.shape[1]} columns, expected {ds.m}")
    if ds.periodic_mask.any():
        new_samples = new_samples.copy()
        new_samples[:, ds.periodic_mask] = wrap_angle(new_samples[:, ds.periodic_mask])

    stage = ds.latest_stage + 1 if stage is None else int(stage)
    if stage < ds.latest_stage:
        raise InvalidArgumentError(f"stage {stage} precedes latest stage {ds.latest_stage}")
    samples = np.vstack([ds.samples, new_samples])
    stages = np.concatenate([ds.stages, np.full(len(new_samples), stage, dtype=int)])
    weights = history_weights(stages, scheme)
    logger.debug(f"History now holds {len(samples)} samples over {len(np.unique(stages))} stages")
    return HistoryDataset(samples=samples, weights=weights, stages=stages,
                          periodic_mask=ds.periodic_mask, scheme=scheme)


@dataclass(frozen=True, eq=False)
class RescaleMap:
    """Affine map of each non-periodic coordinate onto [-1, 1]"""
    lo: np.ndarray
    hi: np.ndarray
    periodic_mask: np.ndarray

    @property
    def m(self) -> int:
        return self.lo.size

    @property
    def jacobian(self) -> np.ndarray:
        # periodic angles keep their native [-pi, pi) domain
        jac = 2.0 / (self.hi - self.lo)
        return np.where(self.periodic_mask, 1.0, jac)

    @property
    def log_det(self) -> float:
        return float(np.log(self.jacobian).sum())

    def rescale(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        scaled = (z - self.lo) * (2.0 / (self.hi - self.lo)) - 1.0
        return np.where(self.periodic_mask, wrap_angle(z), scaled)

    def unrescale(self, z_hat: np.ndarray) -> np.ndarray:
        z_hat = np.asarray(z_hat, dtype=float)
        raw = self.lo + (z_hat + 1.0) * (0.5 * (self.hi - self.lo))
        return np.where(self.periodic_mask, wrap_angle(z_hat), raw)

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist(),
                "periodic": self.periodic_mask.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "RescaleMap":
        return cls(lo=np.asarray(data["lo"], dtype=float), hi=np.asarray(data["hi"], dtype=float),
                   periodic_mask=np.asarray(data["periodic"], dtype=bool))

    @classmethod
    def identity(cls, m: int, periodic_mask: Optional[Sequence[bool]] = None) -> "RescaleMap":
        mask = np.zeros(m, dtype=bool) if periodic_mask is None else np.asarray(periodic_mask, dtype=bool)
        lo = np.where(mask, -np.pi, -1.0)
        hi = np.where(mask, np.pi, 1.0)
        return cls(lo=lo, hi=hi, periodic_mask=mask)


def fit_rescale(ds: HistoryDataset, margin: float = 0.02) -> RescaleMap:
    """Bounds (min - margin * range, max + margin * range) per non-periodic coordinate"""
    if margin < 0:
        raise InvalidArgumentError(f"margin must be non-negative, got {margin}")
    if ds.n_samples < 2:
        raise InvalidArgumentError(f"rescaling needs at least 2 samples, got {ds.n_samples}")
    z_min = ds.samples.min(axis=0)
    z_max = ds.samples.max(axis=0)
    spread = z_max - z_min
    lo = z_min - margin * spread
    hi = z_max + margin * spread
    mask = ds.periodic_mask
    degenerate = ~mask & ~(hi > lo)
    if degenerate.any():
        axis = int(np.flatnonzero(degenerate)[0])
        raise InvalidArgumentError(f"coordinate {axis} has zero range; cannot rescale")
    lo = np.where(mask, -np.pi, lo)
    hi = np.where(mask, np.pi, hi)
    return RescaleMap(lo=lo, hi=hi, periodic_mask=mask.copy())


def path_history_measure(path: np.ndarray, q_weights: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """Discrete path-history measure of one trajectory under weights q"""
    path = np.asarray(path, dtype=float)
    q = np.asarray(q_weights, dtype=float)
    if path.shape[0] == 0 or path.shape[0] != q.size:
        raise InvalidArgumentError(f"path of length {path.shape[0]} needs as many weights, got {q.size}")
    if np.any(q < 0) or q.sum() <= 0:
        raise InvalidArgumentError("history weights must be non-negative with positive total")
    return path, q / q.sum()


def _normalised(samples: np.ndarray, weights: Optional[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size == 0:
        raise InvalidArgumentError("W2 needs non-empty sample sets")
    if weights is None:
        weights = np.full(samples.size, 1.0 / samples.size)
    weights = np.asarray(weights, dtype=float).ravel()
    order = np.argsort(samples, kind="stable")
    return samples[order], weights[order] / weights.sum()


def wasserstein2_1d(a: np.ndarray, b: np.ndarray, a_weights: Optional[np.ndarray] = None,
                    b_weights: Optional[np.ndarray] = None) -> float:
    """Exact 1D W2 by integrating the squared gap between quantile functions"""
    xa, wa = _normalised(a, a_weights)
    xb, wb = _normalised(b, b_weights)
    ca = np.cumsum(wa)
    cb = np.cumsum(wb)
    ca[-1] = cb[-1] = 1.0
    levels = np.union1d(ca, cb)
    lower = np.concatenate([[0.0], levels[:-1]])
    mid = 0.5 * (lower + levels)
    qa = xa[np.minimum(np.searchsorted(ca, mid), xa.size - 1)]
    qb = xb[np.minimum(np.searchsorted(cb, mid), xb.size - 1)]
    return float(np.sqrt(np.sum((levels - lower) * (qa - qb) ** 2)))
