"""Layer specs, initialisers, and the functional network forward pass."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

KINDS = ("linear", "relu", "conv2d", "affine_norm", "softmax_ce_head", "flatten")
PARAMETRIC = ("linear", "conv2d", "affine_norm")


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a base network.

    ``d_in``/``d_out`` are features for linear layers and channels for conv2d;
    affine_norm uses ``d_in == d_out`` as its width. ``kernel`` is (h, w).
    """

    kind: str
    d_in: int = 0
    d_out: int = 0
    kernel: tuple = (0, 0)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        if self.kind in ("linear", "conv2d") and (self.d_in <= 0 or self.d_out <= 0):
            raise ValueError(f"{self.kind} needs positive dims, got {self.d_in}->{self.d_out}")
        if self.kind == "conv2d" and min(self.kernel) <= 0:
            raise ValueError("conv2d needs a positive kernel size")
        if self.kind == "affine_norm" and (self.d_in <= 0 or self.d_in != self.d_out):
            raise ValueError("affine_norm needs d_in == d_out > 0")

    @property
    def fan_in(self) -> int:
        if self.kind == "linear":
            return self.d_in
        if self.kind == "conv2d":
            return self.d_in * self.kernel[0] * self.kernel[1]
        return 0

    def param_shapes(self) -> list:
        if self.kind == "linear":
            return [("weight", (self.d_out, self.d_in)), ("bias", (self.d_out,))]
        if self.kind == "conv2d":
            return [("weight", (self.d_out, self.d_in) + self.kernel), ("bias", (self.d_out,))]
        if self.kind == "affine_norm":
            return [("scale", (self.d_in,)), ("shift", (self.d_in,))]
        return []

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind in PARAMETRIC:
            out.update(d_in=self.d_in, d_out=self.d_out)
        if self.kind == "conv2d":
            out["kernel"] = list(self.kernel)
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "LayerSpec":
        return cls(d["kind"], int(d.get("d_in", 0)), int(d.get("d_out", 0)), tuple(d.get("kernel", (0, 0))))


def linear(d_in: int, d_out: int) -> LayerSpec:
    return LayerSpec("linear", d_in, d_out)


def conv(c_in: int, c_out: int, kh: int, kw: int | None = None) -> LayerSpec:
    return LayerSpec("conv2d", c_in, c_out, (kh, kh if kw is None else kw))


def affine_norm(d: int) -> LayerSpec:
    return LayerSpec("affine_norm", d, d)


RELU = LayerSpec("relu")
FLATTEN = LayerSpec("flatten")


def mlp_arch(d_in: int, hidden: Sequence[int], d_out: int, flatten: bool = True) -> list:
    """[flatten,] linear, relu, ..., linear."""
    arch = [FLATTEN] if flatten else []
    dims = [d_in, *hidden, d_out]
    for i, (a, b) in enumerate(zip(dims, dims[1:])):
        arch.append(linear(a, b))
        if i < len(dims) - 2:
            arch.append(RELU)
    return arch


def param_layout(arch: Sequence[LayerSpec]) -> list:
    """Ordered ``(name, shape)`` for every parameter, named ``"{layer}.{field}"``."""
    return [(f"{i}.{field}", shape) for i, spec in enumerate(arch) for field, shape in spec.param_shapes()]


def num_params(arch: Sequence[LayerSpec]) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_layout(arch))


def kaiming_init(spec: LayerSpec, mode: str, rng: np.random.Generator) -> dict:
    """He initialisation of one layer's parameters; biases start at zero.

    normal: N(0, 2/fan_in); uniform: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
    affine_norm starts as the identity (scale 1, shift 0).
    """
    if spec.kind == "affine_norm":
        return {"scale": np.ones(spec.d_in), "shift": np.zeros(spec.d_in)}
    if spec.kind not in ("linear", "conv2d"):
        return {}
    fan_in = spec.fan_in
    if fan_in <= 0:
        raise ValueError("kaiming_init with zero fan-in")
    shape = dict(spec.param_shapes())["weight"]
    if mode == "normal":
        w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
    elif mode == "uniform":
        bound = math.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=shape)
    else:
        raise ValueError(f"unknown kaiming mode {mode!r}")
    return {"weight": w, "bias": np.zeros(spec.d_out)}


def init_params(arch: Sequence[LayerSpec], rng: np.random.Generator, mode: str = "normal") -> dict:
    params = {}
    for i, spec in enumerate(arch):
        for field, value in kaiming_init(spec, mode, rng).items():
            params[f"{i}.{field}"] = value
    return params


def check_params(arch: Sequence[LayerSpec], params: Mapping) -> None:
    for name, shape in param_layout(arch):
        if name not in params:
            raise ValueError(f"missing parameter {name}")
        got = tuple(np.shape(params[name].data if isinstance(params[name], Tensor) else params[name]))
        if got != tuple(shape):
            raise ValueError(f"parameter {name} has shape {got}, expected {tuple(shape)}")


def forward(arch: Sequence[LayerSpec], params: Mapping, x) -> Tensor:
    """Run ``x`` through the network; returns logits.

    ``params`` values may be arrays (constants) or Tensors (recorded when they
    require grad). Linear layers expect (N, d_in), conv layers (N, C, H, W).
    """
    h = T.as_tensor(x)
    for i, spec in enumerate(arch):
        kind = spec.kind
        if kind == "linear":
            if h.ndim != 2 or h.shape[1] != spec.d_in:
                raise ValueError(f"layer {i} (linear {spec.d_in}->{spec.d_out}) got input {h.shape}")
            h = T.linear(h, params[f"{i}.weight"], params[f"{i}.bias"])
        elif kind == "conv2d":
            if h.ndim != 4 or h.shape[1] != spec.d_in:
                raise ValueError(f"layer {i} (conv2d {spec.d_in}->{spec.d_out}) got input {h.shape}")
            h = T.conv2d(h, params[f"{i}.weight"], params[f"{i}.bias"])
        elif kind == "affine_norm":
            if h.shape[1] != spec.d_in:
                raise ValueError(f"layer {i} (affine_norm {spec.d_in}) got input {h.shape}")
            shape = (1, spec.d_in) + (1,) * (h.ndim - 2)
            m = T.reshape(T.as_tensor(params[f"{i}.scale"]), shape)
            b = T.reshape(T.as_tensor(params[f"{i}.shift"]), shape)
            h = T.add(T.mul(h, m), b)
        elif kind == "relu":
            h = T.relu(h)
        elif kind == "flatten":
            h = T.reshape(h, (h.shape[0], -1))
        # softmax_ce_head: logits pass through; the loss applies the softmax
    return h


def predict(arch: Sequence[LayerSpec], params: Mapping, x) -> np.ndarray:
    """Argmax class per row; ties resolve to the lowest index."""
    return np.argmax(forward(arch, params, x).data, axis=1)


def accuracy(arch: Sequence[LayerSpec], params: Mapping, x, y) -> float:
    y = np.asarray(y)
    return float(np.mean(predict(arch, params, x) == y))
