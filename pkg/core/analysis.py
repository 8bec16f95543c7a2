# File: core/analysis.py
# Reweighting, free-energy surfaces and basin transition counts

import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from core.potentials import build_potential
from models.core_models import BasinSpec, CvKind, CvMapSpec, PotentialSpec
from models.errors import EmptyDatasetError, InvalidArgumentError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FesGrid:
    """Free energy on a regular grid; undefined bins hold NaN and mask False"""
    axes: List[np.ndarray]
    values: np.ndarray
    mask: np.ndarray
    beta: float
    subset: Tuple[int, ...] = (0,)

    @property
    def ndim(self) -> int:
        return len(self.axes)

    def to_frame(self) -> pd.DataFrame:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        data = {f"z_{k + 1}": grid.ravel() for k, grid in zip(self.subset, mesh)}
        data["value"] = self.values.ravel()
        data["defined"] = self.mask.ravel().astype(int)
        return pd.DataFrame(data)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, beta: float) -> "FesGrid":
        axis_cols = [c for c in frame.columns if c.startswith("z_")]
        axes = [np.unique(frame[c].to_numpy()) for c in axis_cols]
        shape = tuple(len(a) for a in axes)
        values = frame["value"].to_numpy(dtype=float).reshape(shape)
        mask = frame["defined"].to_numpy().astype(bool).reshape(shape)
        subset = tuple(int(c.split("_")[1]) - 1 for c in axis_cols)
        return cls(axes=axes, values=values, mask=mask, beta=beta, subset=subset)


def _aligned(free: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = np.full(free.shape, np.nan)
    out[mask] = free[mask] - free[mask].min()
    return out


def reweight_weights(bias_values: np.ndarray, beta: float) -> np.ndarray:
    """Normalised weights proportional to exp(beta * V_bias).

    A constant shift of the bias cancels in the normalisation, up to rounding:
    weights agree to about 1e-10 relative, not bit for bit.
    """
    log_w = beta * np.asarray(bias_values, dtype=float)
    if log_w.size == 0:
        return log_w
    return np.exp(log_w - logsumexp(log_w))


def weighted_mean(values: np.ndarray, weights: np.ndarray) -> float:
    weights = np.asarray(weights, dtype=float)
    return float(np.sum(weights * np.asarray(values, dtype=float)) / weights.sum())


def fes_histogram(samples: np.ndarray, weights: Optional[np.ndarray], beta: float, bins: int = 64,
                  ranges: Optional[Sequence[Tuple[float, float]]] = None,
                  subset: Optional[Sequence[int]] = None) -> FesGrid:
    """F = -(1/beta) log of the weighted histogram density, aligned to min 0"""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    subset = tuple(range(min(samples.shape[1], 2))) if subset is None else tuple(int(k) for k in subset)
    if len(subset) not in (1, 2):
        raise InvalidArgumentError(f"FES needs 1 or 2 coordinates, got {len(subset)}")
    if samples.shape[0] == 0:
        raise EmptyDatasetError("no samples to histogram")
    data = samples[:, list(subset)]
    if ranges is None:
        ranges = [(float(data[:, k].min()), float(data[:, k].max())) for k in range(len(subset))]
    ranges = [tuple(r) for r in ranges]
    if len(ranges) != len(subset):
        raise InvalidArgumentError(f"{len(ranges)} ranges given for {len(subset)} coordinates")

    weights = np.full(len(data), 1.0 / len(data)) if weights is None else np.asarray(weights, dtype=float)
    hist, edges = np.histogramdd(data, bins=bins, range=ranges, weights=weights)
    counts, _ = np.histogramdd(data, bins=bins, range=ranges)
    mask = counts > 0
    if not mask.any():
        raise EmptyDatasetError("every histogram bin is empty")
    dropped = len(data) - int(counts.sum())
    if dropped:
        logger.info(f"FES histogram ignored {dropped} samples outside {ranges}")

    volume = np.prod([e[1] - e[0] for e in edges])
    density = hist / (hist.sum() * volume)
    mask &= density > 0
    free = np.zeros_like(density)
    free[mask] = -np.log(density[mask]) / beta
    axes = [0.5 * (e[:-1] + e[1:]) for e in edges]
    return FesGrid(axes=axes, values=_aligned(free, mask), mask=mask, beta=beta, subset=subset)


def reference_fes_quadrature(potential: PotentialSpec, cv_map: CvMapSpec, axes: Sequence[np.ndarray],
                             beta: float, subset: Optional[Sequence[int]] = None,
                             other_range: Optional[Tuple[float, float]] = None, n_quad: int = 200) -> FesGrid:
    """Exact FES of an Identity CV: U - min U, or the quadrature marginal over one coordinate"""
    if cv_map.kind != CvKind.IDENTITY or potential.dim > 2:
        raise InvalidArgumentError("reference FES needs an Identity CV map with d <= 2")
    subset = tuple(range(potential.dim)) if subset is None else tuple(int(k) for k in subset)
    axes = [np.asarray(a, dtype=float) for a in axes]
    if len(axes) != len(subset):
        raise InvalidArgumentError(f"{len(axes)} axes given for {len(subset)} coordinates")
    pot = build_potential(potential)

    if len(subset) == potential.dim:
        mesh = np.meshgrid(*axes, indexing="ij")
        points = np.zeros((mesh[0].size, potential.dim))
        for k, grid in zip(subset, mesh):
            points[:, k] = grid.ravel()
        free = pot.energy(points).reshape(mesh[0].shape)
    else:
        if other_range is None:
            raise InvalidArgumentError("marginal reference needs the integration range of the other coordinate")
        other = 1 - subset[0]
        nodes, weights = np.polynomial.legendre.leggauss(n_quad)
        lo, hi = other_range
        nodes = lo + (nodes + 1.0) * (0.5 * (hi - lo))
        weights = weights * (0.5 * (hi - lo))
        points = np.zeros((axes[0].size * n_quad, 2))
        points[:, subset[0]] = np.repeat(axes[0], n_quad)
        points[:, other] = np.tile(nodes, axes[0].size)
        log_boltz = (-beta * pot.energy(points)).reshape(axes[0].size, n_quad)
        free = -logsumexp(log_boltz, b=weights[None, :], axis=1) / beta
    mask = np.isfinite(free)
    return FesGrid(axes=axes, values=_aligned(free, mask), mask=mask, beta=beta, subset=subset)


def _check_same_grid(a: FesGrid, b: FesGrid) -> None:
    if a.ndim != b.ndim or any(x.shape != y.shape or not np.allclose(x, y) for x, y in zip(a.axes, b.axes)):
        raise InvalidArgumentError("FES grids have different axes")


def fes_difference(fes: FesGrid, reference: FesGrid) -> FesGrid:
    """Pointwise fes - reference on bins defined in both"""
    _check_same_grid(fes, reference)
    mask = fes.mask & reference.mask
    values = np.full(fes.values.shape, np.nan)
    values[mask] = fes.values[mask] - reference.values[mask]
    return replace(fes, values=values, mask=mask)


def fes_rmse(fes: FesGrid, reference: FesGrid, cutoff: Optional[float] = None) -> float:
    """RMSE over commonly defined bins with reference below cutoff.

    The mean of fes - reference over the compared bins is subtracted first, so
    two surfaces that differ by a constant score 0 whatever zero each is
    aligned to. Compare ``fes_difference`` values directly to see the offset.
    """
    diff = fes_difference(fes, reference)
    mask = diff.mask.copy()
    if cutoff is not None:
        mask &= np.where(reference.mask, reference.values, np.inf) <= cutoff
    if not mask.any():
        raise EmptyDatasetError("no commonly defined bins to compare")
    gaps = diff.values[mask]
    gaps = gaps - gaps.mean()
    return float(np.sqrt(np.mean(gaps ** 2)))


def flattened_fes(fes: FesGrid, alpha: float) -> FesGrid:
    """Surface the adaptive bias leaves behind in the well-sampled regime: F / (1 + alpha)"""
    if alpha < 0:
        raise InvalidArgumentError(f"alpha must be non-negative, got {alpha}")
    return replace(fes, values=_aligned(np.nan_to_num(fes.values) / (1.0 + alpha), fes.mask))


def assign_basins(series: np.ndarray, basins: BasinSpec) -> np.ndarray:
    """Basin index of each point, -1 outside every capture disk"""
    series = np.asarray(series, dtype=float)
    if series.ndim == 1:
        series = series[:, None]
    centers = np.asarray(basins.centers, dtype=float)
    if centers.shape[1] != series.shape[1]:
        raise InvalidArgumentError(f"basin centers have {centers.shape[1]} coordinates, series has {series.shape[1]}")
    dist = np.linalg.norm(series[:, None, :] - centers[None, :, :], axis=2)
    inside = dist <= basins.radius
    return np.where(inside.any(axis=1), np.argmax(inside, axis=1), -1)


def count_transitions(series: np.ndarray, basins: BasinSpec) -> Dict:
    """Dwell-based basin switches along one ordered CV series.

    A walker keeps its last basin while outside every capture disk; each first
    entry into a different basin counts as one transition.
    """
    labels = assign_basins(series, basins)
    visited = labels[labels >= 0]
    if visited.size:
        visited = visited[np.concatenate([[True], visited[1:] != visited[:-1]])]
    pairs: Dict[str, int] = {}
    for src, dst in zip(visited[:-1], visited[1:]):
        key = f"{int(src)}->{int(dst)}"
        pairs[key] = pairs.get(key, 0) + 1
    return {"total": int(max(visited.size - 1, 0)), "pairs": dict(sorted(pairs.items()))}


def merge_transition_counts(counts: Sequence[Dict]) -> Dict:
    pairs: Dict[str, int] = {}
    for count in counts:
        for key, value in count["pairs"].items():
            pairs[key] = pairs.get(key, 0) + value
    return {"total": int(sum(c["total"] for c in counts)), "pairs": dict(sorted(pairs.items()))}


def block_bootstrap(values: np.ndarray, weights: Optional[np.ndarray] = None, block: int = 1000,
                    n_boot: int = 200, seed: int = 0) -> Tuple[float, float]:
    """Weighted mean with a moving-block bootstrap standard error"""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise EmptyDatasetError("no values to bootstrap")
    weights = np.ones_like(values) if weights is None else np.asarray(weights, dtype=float)
    estimate = weighted_mean(values, weights)
    n_blocks = values.size // block
    if n_blocks < 2:
        logger.warning(f"Only {values.size} values for block size {block}; standard error not estimated")
        return estimate, float("nan")
    used = n_blocks * block
    v_blocks = values[:used].reshape(n_blocks, block)
    w_blocks = weights[:used].reshape(n_blocks, block)
    block_wv = (v_blocks * w_blocks).sum(axis=1)
    block_w = w_blocks.sum(axis=1)
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, n_blocks, size=(n_boot, n_blocks))
    replicas = block_wv[picks].sum(axis=1) / block_w[picks].sum(axis=1)
    return estimate, float(replicas.std(ddof=1))
