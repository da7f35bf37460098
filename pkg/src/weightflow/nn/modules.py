"""Small stateful building blocks for the meta-models (VAE, field, encoders).

Base classifiers stay functional (arch + param dict); these modules own
their parameters as leaf Tensors and expose a flat, name-sorted state.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

ACTIVATIONS = {"relu": T.relu, "silu": T.silu, "tanh": T.tanh}


class Module:
    def named_parameters(self, prefix: str = "") -> list:
        out = []
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((prefix + name, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(f"{prefix}{name}."))
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        out.extend(v.named_parameters(f"{prefix}{name}.{i}."))
        return sorted(out, key=lambda kv: kv[0])

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def state(self) -> list:
        """``[(name, array copy)]`` in sorted name order."""
        return [(n, p.data.copy()) for n, p in self.named_parameters()]

    def load_state(self, arrays: dict) -> None:
        for name, p in self.named_parameters():
            if name not in arrays:
                raise KeyError(f"missing parameter {name}")
            a = np.asarray(arrays[name], dtype=np.float64)
            if a.shape != p.data.shape:
                raise ValueError(f"parameter {name}: stored {a.shape}, model {p.data.shape}")
            p.data = a.copy()

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag


class Linear(Module):
    """y = x W^T + b with U(-1/sqrt(d_in), 1/sqrt(d_in)) init; ``zero`` starts at 0."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, zero: bool = False):
        bound = 1.0 / math.sqrt(d_in)
        w = np.zeros((d_out, d_in)) if zero else rng.uniform(-bound, bound, size=(d_out, d_in))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True)

    def __call__(self, x) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class MLP(Module):
    def __init__(self, dims: Sequence[int], rng: np.random.Generator, act: str = "silu",
                 zero_last: bool = False):
        if len(dims) < 2:
            raise ValueError("MLP needs at least input and output dims")
        self.dims = list(dims)
        self.act = act
        n = len(dims) - 1
        self.layers = [Linear(a, b, rng, zero=zero_last and i == n - 1)
                       for i, (a, b) in enumerate(zip(dims, dims[1:]))]

    def __call__(self, x) -> Tensor:
        h = T.as_tensor(x)
        f = ACTIVATIONS[self.act]
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = f(h)
        return h
