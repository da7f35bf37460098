"""Source distributions for the flow: Gaussian codes, Kaiming-initialized
weights, or a donor network whose classifier head is redrawn ("implanted")."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import nn
from ..codec.base import Codec, WeightSpace
from ..codec.flat import vectorize

PRIOR_KINDS = ("gaussian", "kaiming", "implanted")


@dataclass
class PriorSpec:
    kind: str = "gaussian"
    mode: str = "uniform"  # kaiming variant
    donor: Optional[object] = None  # WeightRecord, implanted only
    mu: float = 0.0
    sigma: float = 1.0
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise ValueError(f"unknown prior {self.kind!r}; expected one of {PRIOR_KINDS}")
        if self.sigma < 0 or self.noise_scale < 0:
            raise ValueError("prior sigma and noise_scale must be >= 0")
        if self.kind == "implanted" and self.donor is None:
            raise ValueError("implanted prior needs a donor record")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "mode": self.mode, "mu": self.mu, "sigma": self.sigma,
             "noise_scale": self.noise_scale}
        if self.donor is not None:
            d["donor"] = dict(self.donor.meta)
        return d


def head_index(arch) -> int:
    """Arch index of the last linear layer (the classifier head)."""
    idx = [i for i, s in enumerate(arch) if s.kind == "linear"]
    if not idx:
        raise ValueError("architecture has no linear head")
    return idx[-1]


def head_stats(records) -> tuple:
    """Scalar (mean, std) of all head weight and bias entries across ``records``."""
    vals = []
    for r in records:
        h = head_index(r.arch)
        vals += [np.ravel(r.params[f"{h}.weight"]), np.ravel(r.params[f"{h}.bias"])]
    v = np.concatenate(vals)
    return float(v.mean()), float(v.std())


def pad_donor(donor, arch) -> dict:
    """Zero-pad every donor tensor into the matching target shape."""
    kinds = [s.kind for s in arch if s.kind in nn.layers.PARAMETRIC]
    dkinds = [s.kind for s in donor.arch if s.kind in nn.layers.PARAMETRIC]
    if kinds != dkinds:
        raise ValueError(f"donor layers {dkinds} do not match target layers {kinds}")
    dnames = [n for n, _ in nn.param_layout(donor.arch)]
    out = {}
    for (name, shape), dname in zip(nn.param_layout(arch), dnames):
        src = np.asarray(donor.params[dname], dtype=np.float64)
        if src.ndim != len(shape) or any(a > b for a, b in zip(src.shape, shape)):
            raise ValueError(f"donor tensor {dname} {src.shape} does not fit target {name} {tuple(shape)}")
        buf = np.zeros(shape)
        buf[tuple(slice(0, a) for a in src.shape)] = src
        out[name] = buf
    return out


def sample_prior_raw(spec: PriorSpec, space: WeightSpace, rng: np.random.Generator, count: int) -> np.ndarray:
    """Raw weight vectors (count, d) for the kaiming and implanted priors."""
    arch = space.arch
    out = np.zeros((count, space.d))
    if spec.kind == "kaiming":
        for i in range(count):
            out[i] = vectorize(nn.init_params(arch, rng, spec.mode), arch, space.d).vector
        return out
    if spec.kind != "implanted":
        raise ValueError("raw samples exist only for weight-space priors")
    base = pad_donor(spec.donor, arch)
    h = head_index(arch)
    n = space.n_params
    for i in range(count):
        params = dict(base)
        for field in ("weight", "bias"):
            name = f"{h}.{field}"
            params[name] = spec.mu + spec.sigma * rng.standard_normal(base[name].shape)
        vec = vectorize(params, arch, space.d).vector
        # noise only on real parameters; padding stays zero
        vec[:n] += spec.noise_scale * rng.standard_normal(n)
        out[i] = vec
    return out


def sample_prior(spec: PriorSpec, codec: Codec, rng: np.random.Generator, count: int) -> np.ndarray:
    """Prior samples in the codec's code space, shape (count, code_dim)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if spec.kind == "gaussian":
        return rng.standard_normal((count, codec.code_dim))
    return codec.encode(sample_prior_raw(spec, codec.space, rng, count))
