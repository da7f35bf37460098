"""Shared evaluation and generation helpers."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .. import nn
from ..codec.base import Codec
from ..flow.integrate import DEFAULT_NFE, integrate
from ..flow.prior import PriorSpec, sample_prior
from ..zoo.training import WeightRecord, evaluate


def eval_weights(arch, weights, ds, codec: Codec | None = None, split: str = "val") -> float:
    """Top-1 accuracy of a record, a param dict, or a code decoded by ``codec``."""
    if isinstance(weights, WeightRecord):
        params = weights.params
    elif isinstance(weights, Mapping):
        params = weights
    else:
        if codec is None:
            raise ValueError("a code needs a codec to decode it")
        params = codec.decode_params(np.atleast_2d(weights))[0]
    try:
        nn.layers.check_params(arch, params)
    except ValueError as exc:
        raise ValueError(f"decoded weights do not match the architecture: {exc}") from exc
    return evaluate(arch, params, ds, split)


def generate_codes(field, codec: Codec, prior: PriorSpec, rng: np.random.Generator, count: int, y=None,
                   nfe: int = DEFAULT_NFE, method: str = "euler") -> np.ndarray:
    x0 = sample_prior(prior, codec, rng, count)
    if y is not None:
        y = np.broadcast_to(np.asarray(y, dtype=np.float64), (count, np.shape(y)[-1]))
    steps = nfe // {"euler": 1, "midpoint": 2, "rk4": 4}[method]
    return integrate(field, x0, y, steps=max(1, steps), method=method)


def accuracies(arch, codec: Codec, codes: np.ndarray, ds) -> list:
    return [evaluate(arch, p, ds) for p in codec.decode_params(codes)]
