"""Space-filling designs over the variable-input cube."""
from __future__ import annotations

import numpy as np
from scipy.spatial.distance import pdist
from scipy.stats import qmc


def equispaced(n: int, d: int = 1) -> np.ndarray:
    """``n`` equally spaced points on [0, 1] (d = 1) or the smallest full grid with >= n points."""
    if n < 1:
        raise ValueError("need at least one point")
    if d == 1:
        return np.linspace(0.0, 1.0, n).reshape(-1, 1)
    k = int(np.ceil(n ** (1.0 / d)))
    axes = [np.linspace(0.0, 1.0, k)] * d
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)


def maximin_lhs(n: int, d: int, rng: np.random.Generator, candidates: int = 50) -> np.ndarray:
    """Best of ``candidates`` random Latin hypercubes by minimum pairwise distance."""
    if n < 1:
        raise ValueError("need at least one point")
    sampler = qmc.LatinHypercube(d, seed=rng)
    best, best_score = None, -np.inf
    for _ in range(candidates):
        X = sampler.random(n)
        score = pdist(X).min() if n > 1 else 0.0
        if score > best_score:
            best, best_score = X, score
    return best
