"""Probability paths x_t = beta(t) x0 + alpha(t) x1 and their target velocities."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class ProbPath:
    kind: str
    alpha: Callable
    beta: Callable
    d_alpha: Callable
    d_beta: Callable


LINEAR = ProbPath(
    "linear",
    alpha=lambda t: t,
    beta=lambda t: 1.0 - t,
    d_alpha=lambda t: np.ones_like(t),
    d_beta=lambda t: -np.ones_like(t),
)

PATHS = {"linear": LINEAR}


def get_path(kind: str) -> ProbPath:
    if kind not in PATHS:
        raise ValueError(f"unknown path {kind!r}; only {sorted(PATHS)} are implemented")
    return PATHS[kind]


@dataclass
class PathSample:
    x0: np.ndarray  # (B, d)
    x1: np.ndarray
    t: np.ndarray  # (B,)
    x_t: np.ndarray
    u: np.ndarray  # target velocity
    y: Optional[object] = None  # (B, c) array or Tensor

    def __len__(self) -> int:
        return self.x_t.shape[0]


def path_sample(path: ProbPath, x0, x1, t, y=None) -> PathSample:
    """Point on the path and its velocity; ``t`` is a scalar or one value per row."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    if x0.shape != x1.shape:
        raise ValueError(f"x0 {x0.shape} and x1 {x1.shape} differ")
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x0.shape[0],)).copy()
    if np.any(t < 0.0) or np.any(t > 1.0) or not np.all(np.isfinite(t)):
        raise ValueError("t must lie in [0, 1]")
    tc = t[:, None]
    x_t = path.beta(tc) * x0 + path.alpha(tc) * x1
    u = path.d_alpha(tc) * x1 + path.d_beta(tc) * x0
    return PathSample(x0, x1, t, x_t, u, y)


def sample_t(rng: np.random.Generator, n: int) -> np.ndarray:
    """t ~ U[0, 1], one per batch element."""
    return rng.uniform(0.0, 1.0, size=n)
