"""SGD and AdamW over lists of leaf tensors, plus cosine annealing."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .tensor import NonFiniteError, Tensor


class Optimizer:
    kind = "base"

    def __init__(self, params: Sequence[Tensor], lr: float, weight_decay: float = 0.0):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = list(params)
        self.lr = float(lr)
        self.weight_decay = float(weight_decay)
        self.step_count = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def _grads(self) -> list:
        grads = []
        for p in self.params:
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if g.shape != p.data.shape:
                raise ValueError("gradient shape does not match parameter")
            if not np.all(np.isfinite(g)):
                raise NonFiniteError("non-finite gradient passed to optimizer")
            grads.append(g)
        return grads

    def step(self) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    """p <- p - lr * (g + wd * p)."""

    kind = "sgd"

    def step(self) -> None:
        for p, g in zip(self.params, self._grads()):
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            p.data = p.data - self.lr * g
        self.step_count += 1


class AdamW(Optimizer):
    """Adam with decoupled weight decay and bias-corrected moments."""

    kind = "adamw"

    def __init__(self, params, lr: float = 1e-3, weight_decay: float = 0.0,
                 betas: tuple = (0.9, 0.999), eps: float = 1e-8):
        super().__init__(params, lr, weight_decay)
        self.betas = tuple(betas)
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        grads = self._grads()
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        step = self.lr / c1
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            # in place: these buffers are large for the meta-models
            data = np.array(p.data, dtype=np.float64)
            if self.weight_decay:
                data *= 1.0 - self.lr * self.weight_decay
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            tmp = np.multiply(g, g)
            tmp *= 1.0 - b2
            v += tmp
            np.divide(v, c2, out=tmp)
            np.sqrt(tmp, out=tmp)
            tmp += self.eps
            np.divide(m, tmp, out=tmp)
            tmp *= step
            data -= tmp
            p.data = data


def make_optimizer(kind: str, params, lr: float, weight_decay: float = 0.0) -> Optimizer:
    if kind == "sgd":
        return SGD(params, lr, weight_decay)
    if kind == "adamw":
        return AdamW(params, lr, weight_decay)
    raise ValueError(f"unknown optimizer {kind!r}")


def cosine_anneal(lr0: float, lr_min: float, t: float, T: float) -> float:
    if T == 0:
        raise ValueError("cosine_anneal with T = 0")
    if not 0 <= t <= T:
        raise ValueError("cosine_anneal needs 0 <= t <= T")
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * t / T))
