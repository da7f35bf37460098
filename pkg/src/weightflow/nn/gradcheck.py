"""Central finite-difference checks against the autodiff tape."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .layers import LayerSpec, forward, param_layout
from .tensor import Tensor, cross_entropy


@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    per_param: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_err < self.tol)


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max |a - n| / max(|a|, |n|, floor) over entries."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def numeric_grad(f: Callable[[], float], array: np.ndarray, h: float) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. ``array`` (perturbed in place)."""
    g = np.zeros_like(array)
    flat, gflat = array.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def grad_check(arch: Sequence[LayerSpec], params: Mapping, x, labels, h: float = 1e-5,
               tol: float = 1e-4, corrupt: Callable | None = None) -> GradCheckReport:
    """Compare tape gradients of mean cross-entropy with central differences.

    ``corrupt`` optionally maps ``(name, grad)`` to a modified gradient; it
    exists so negative controls can prove the check actually fails.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    arrays = {name: np.array(params[name], dtype=np.float64) for name, _ in param_layout(arch)}
    leaves = {name: Tensor(a, requires_grad=True) for name, a in arrays.items()}
    loss = cross_entropy(forward(arch, leaves, x), labels)
    loss.backward()

    def f() -> float:
        return float(cross_entropy(forward(arch, arrays, x), labels).data)

    report = GradCheckReport(0.0, tol)
    for name, leaf in leaves.items():
        analytic = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad
        if corrupt is not None:
            analytic = corrupt(name, analytic)
        err = rel_error(analytic, numeric_grad(f, arrays[name], h))
        report.per_param[name] = err
        report.max_rel_err = max(report.max_rel_err, err)
    return report
