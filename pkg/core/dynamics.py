# File: core/dynamics.py
# Euler-Maruyama integration of biased overdamped Langevin dynamics

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from models.core_models import DynParams
from models.errors import DivergedTrajectoryError, InvalidArgumentError

logger = logging.getLogger(__name__)

# Force evaluators map positions (M, d) to total forces (M, d)
ForceField = Callable[[np.ndarray], np.ndarray]
Observer = Callable[[np.ndarray], np.ndarray]

NOISE_CHUNK = 4096


def walker_stream(seed: int, stage: int, walker: int) -> np.random.Generator:
    """Counter-based stream for one walker in one stage"""
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stage), int(walker)))
    return np.random.Generator(np.random.Philox(sequence))


@dataclass
class WalkerEnsemble:
    """M independent walkers with their own RNG streams"""
    positions: np.ndarray
    rngs: List[np.random.Generator] = field(repr=False)
    t: float = 0.0
    n_steps: int = 0

    @classmethod
    def create(cls, positions: np.ndarray, seed: int, stage: int = 0) -> "WalkerEnsemble":
        positions = np.array(positions, dtype=float, ndmin=2)
        rngs = [walker_stream(seed, stage, i) for i in range(len(positions))]
        return cls(positions=positions, rngs=rngs)

    def reseed(self, seed: int, stage: int) -> "WalkerEnsemble":
        rngs = [walker_stream(seed, stage, i) for i in range(self.n_walkers)]
        return replace(self, rngs=rngs)

    @property
    def n_walkers(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]


@dataclass
class StageRecord:
    """CV snapshots of one stage, walker-major then time"""
    cv: np.ndarray
    walker: np.ndarray
    step: np.ndarray
    positions: np.ndarray

    def __len__(self) -> int:
        return len(self.cv)


def _check_finite(values: np.ndarray, step: int, what: str) -> None:
    bad = ~np.all(np.isfinite(values), axis=1)
    if bad.any():
        walker = int(np.flatnonzero(bad)[0])
        raise DivergedTrajectoryError(walker, step, f"non-finite {what}")


def _advance(positions: np.ndarray, force: ForceField, params: DynParams,
             noise: Optional[np.ndarray], step: int) -> np.ndarray:
    f = force(positions)
    _check_finite(f, step, "force")
    drift = (params.dt / params.gamma) * f
    if params.max_drift_step is not None:
        length = np.linalg.norm(drift, axis=1, keepdims=True)
        drift = drift / np.maximum(1.0, length / params.max_drift_step)
    new = positions + drift
    if noise is not None:
        new = new + params.sigma * np.sqrt(params.dt) * noise
    _check_finite(new, step, "position")
    return new


def _draw(ensemble: WalkerEnsemble, n: int) -> np.ndarray:
    """Noise block of shape (n, M, d), each walker from its own stream"""
    block = np.stack([rng.standard_normal((n, ensemble.dim)) for rng in ensemble.rngs], axis=1)
    return block


def step(ensemble: WalkerEnsemble, force: ForceField, params: DynParams) -> WalkerEnsemble:
    """One Euler-Maruyama step: X' = X + F/gamma dt + sigma sqrt(dt) N(0, I)

    With params.max_drift_step set, each walker's drift increment is scaled
    down to that length when it would exceed it.
    """
    noise = None if params.sigma == 0.0 else _draw(ensemble, 1)[0]
    positions = _advance(ensemble.positions, force, params, noise, ensemble.n_steps + 1)
    return replace(ensemble, positions=positions, t=ensemble.t + params.dt, n_steps=ensemble.n_steps + 1)


def run_stage(ensemble: WalkerEnsemble, force: ForceField, params: DynParams, n_step: int,
              n_save: int, observer: Optional[Observer] = None) -> Tuple[WalkerEnsemble, StageRecord]:
    """Advance n_step steps under a frozen force, recording every n_save steps"""
    if n_step < 0 or n_save <= 0:
        raise InvalidArgumentError(f"invalid schedule n_step={n_step}, n_save={n_save}")
    if n_step % n_save != 0:
        raise InvalidArgumentError(f"n_save={n_save} must divide n_step={n_step}")

    n_walkers, dim = ensemble.positions.shape
    n_rec = n_step // n_save
    recorded = np.empty((n_rec, n_walkers, dim))
    positions = ensemble.positions
    noisy = params.sigma != 0.0
    start = ensemble.n_steps
    done = 0
    while done < n_step:
        chunk = min(NOISE_CHUNK, n_step - done)
        noise = _draw(ensemble, chunk) if noisy else None
        for i in range(chunk):
            positions = _advance(positions, force, params, noise[i] if noisy else None, start + done + i + 1)
            if (done + i + 1) % n_save == 0:
                recorded[(done + i + 1) // n_save - 1] = positions
        done += chunk

    out = replace(ensemble, positions=positions, t=ensemble.t + n_step * params.dt,
                  n_steps=start + n_step)
    walker_major = recorded.transpose(1, 0, 2).reshape(n_walkers * n_rec, dim)
    cv = np.asarray(observer(walker_major) if observer is not None else walker_major.copy(), dtype=float)
    if cv.ndim == 1:
        cv = cv[:, None]
    record = StageRecord(
        cv=cv,
        walker=np.repeat(np.arange(n_walkers), n_rec),
        step=np.tile(start + n_save * np.arange(1, n_rec + 1), n_walkers),
        positions=walker_major,
    )
    return out, record


def lipschitz_estimate(force: ForceField, lo: Sequence[float], hi: Sequence[float],
                       n_pairs: int = 10000, seed: int = 0) -> float:
    """Largest |F(x1) - F(x2)| / |x1 - x2| over random pairs in a box"""
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    x1 = rng.uniform(lo, hi, size=(n_pairs, lo.size))
    x2 = rng.uniform(lo, hi, size=(n_pairs, lo.size))
    ratio = np.linalg.norm(force(x1) - force(x2), axis=1) / np.linalg.norm(x1 - x2, axis=1)
    bound = float(ratio.max())
    logger.info(f"Empirical Lipschitz bound over {n_pairs} pairs: {bound:.4g}")
    return bound
