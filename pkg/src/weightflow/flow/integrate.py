"""Fixed-step ODE integration of dx = v(x, t; y) dt from t = 0 to 1."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from ..nn import tensor as T
from ..nn.tensor import NonFiniteError, Tensor

DEFAULT_NFE = 100
STAGES = {"euler": 1, "midpoint": 2, "rk4": 4}


def nfe(method: str, steps: int) -> int:
    return STAGES[method] * steps


def _step(f: Callable, x: Tensor, t: float, h: float, method: str) -> Tensor:
    if method == "euler":
        return T.add(x, T.mul(f(x, t), h))
    if method == "midpoint":
        k1 = f(x, t)
        return T.add(x, T.mul(f(T.add(x, T.mul(k1, h / 2)), t + h / 2), h))
    k1 = f(x, t)
    k2 = f(T.add(x, T.mul(k1, h / 2)), t + h / 2)
    k3 = f(T.add(x, T.mul(k2, h / 2)), t + h / 2)
    k4 = f(T.add(x, T.mul(k3, h)), t + h)
    s = T.add(T.add(k1, T.mul(k2, 2.0)), T.add(T.mul(k3, 2.0), k4))
    return T.add(x, T.mul(s, h / 6))


def cut_step(t_cut: float, steps: int) -> int:
    """Index of the first recorded step: steps starting before ``t_cut`` are detached."""
    if not 0.0 <= t_cut <= 1.0:
        raise ValueError(f"stopgrad time {t_cut} outside [0, 1]")
    return min(steps, math.ceil(t_cut * steps - 1e-12))


def integrate_tensor(field: Callable, x0, y=None, steps: int = DEFAULT_NFE, method: str = "euler",
                     t_cut: float = 0.0, trajectory: list | None = None) -> Tensor:
    """Unrolled integration on the autodiff tape.

    Steps whose start time is below ``t_cut`` run detached, so parameters only
    receive gradient through the steps from ``t_cut`` onward.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if method not in STAGES:
        raise ValueError(f"unknown method {method!r}; expected one of {sorted(STAGES)}")
    first = cut_step(t_cut, steps)
    h = 1.0 / steps

    def f(x, t):
        return T.as_tensor(field(x, t, y))

    x = T.as_tensor(x0)
    if trajectory is not None:
        trajectory.append(np.array(x.data))
    for i in range(steps):
        t = i * h
        try:
            x = _step(f, x, t, h, method)
        except NonFiniteError as exc:
            raise NonFiniteError(f"non-finite state at step {i} (t={t:.4f})") from exc
        if i < first:
            x = x.detach()
        if trajectory is not None:
            trajectory.append(np.array(x.data))
    return x


def integrate(field: Callable, x0, y=None, steps: int = DEFAULT_NFE, method: str = "euler",
              return_trajectory: bool = False):
    """Sample endpoints as arrays; ``field(x, t, y)`` may return an array or Tensor."""
    traj = [] if return_trajectory else None
    x = integrate_tensor(field, np.asarray(x0, dtype=np.float64), y, steps, method, t_cut=1.0, trajectory=traj)
    if return_trajectory:
        return x.data, np.stack(traj)
    return x.data
