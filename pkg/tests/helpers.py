# File: tests/helpers.py
import numpy as np
from scipy.special import erf


def central_difference(fn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Gradient of a scalar function of one point by central differences"""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for k in range(x.size):
        step = np.zeros_like(x)
        step[k] = h
        grad[k] = (fn(x + step) - fn(x - step)) / (2.0 * h)
    return grad


def planted_cp_tensor(dims, rank: int = 2, seed: int = 0) -> np.ndarray:
    """Sum of `rank` outer products: hierarchical rank <= rank at every tree node"""
    rng = np.random.default_rng(seed)
    tensor = np.zeros(dims)
    for _ in range(rank):
        term = np.ones(())
        for n in dims:
            term = np.multiply.outer(term, rng.standard_normal(n))
        tensor += term
    return tensor




def gaussian_overlap_gram(centers: np.ndarray, delta: float) -> np.ndarray:
    """Closed-form Gram of exp(-(z - c)^2 / (2 delta^2)) features on [-1, 1]"""
    mid = 0.5 * (centers[:, None] + centers[None, :])
    gap = centers[:, None] - centers[None, :]
    overlap = erf((1.0 - mid) / delta) - erf((-1.0 - mid) / delta)
    return np.exp(-gap ** 2 / (4.0 * delta ** 2)) * (0.5 * delta * np.sqrt(np.pi)) * overlap
