"""Minibatch couplings between prior and target samples."""

from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..nn.tensor import NonFiniteError

OT_CAP = 256


def pair_cost(x0: np.ndarray, x1: np.ndarray, perm) -> float:
    """Sum of squared distances of the pairing x0[i] <-> x1[perm[i]]."""
    return float(np.sum((np.asarray(x0) - np.asarray(x1)[np.asarray(perm)]) ** 2))


def ot_coupling(x0, x1, cap: int = OT_CAP) -> np.ndarray:
    """Permutation pi minimizing sum_i ||x0_i - x1_pi(i)||^2 (exact assignment)."""
    x0 = np.asarray(x0, dtype=np.float64).reshape(len(x0), -1)
    x1 = np.asarray(x1, dtype=np.float64).reshape(len(x1), -1)
    if x0.shape != x1.shape:
        raise ValueError(f"batches differ in shape: {x0.shape} vs {x1.shape}")
    m = x0.shape[0]
    if m > cap:
        raise ValueError(f"batch of {m} exceeds the assignment solver cap of {cap}")
    # expanded form avoids an (m, m, d) temporary
    cost = (x0 ** 2).sum(1)[:, None] + (x1 ** 2).sum(1)[None, :] - 2.0 * x0 @ x1.T
    if not np.all(np.isfinite(cost)):
        raise NonFiniteError("non-finite transport cost between batches")
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(m, dtype=np.int64)
    perm[rows] = cols
    return perm


def brute_force_coupling(x0, x1) -> tuple:
    """(perm, cost) by enumerating all m! pairings; for checking small batches."""
    x0, x1 = np.asarray(x0, dtype=np.float64), np.asarray(x1, dtype=np.float64)
    m = len(x0)
    if m > 9:
        raise ValueError("brute force is limited to m <= 9")
    best, best_cost = None, np.inf
    for perm in itertools.permutations(range(m)):
        c = pair_cost(x0, x1, perm)
        if c < best_cost:
            best, best_cost = np.array(perm), c
    return best, best_cost


def independent_coupling(m: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Identity pairing, or a random one when ``rng`` is given."""
    return np.arange(m) if rng is None else rng.permutation(m)


COUPLINGS = ("ot", "independent")
