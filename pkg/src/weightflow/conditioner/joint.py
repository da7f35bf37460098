"""Training the condition encoder together with the vector field."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..flow.train import CfmConfig, CfmCurve, train_cfm
from .encoder import CondEncoder, condition_fn


def train_cond_joint(enc: CondEncoder, field, codes: np.ndarray, tags, draw: Callable, hp: CfmConfig,
                     rng: np.random.Generator, prior: Callable, freeze: bool = False) -> CfmCurve:
    """CFM training where y = enc(images behind each code's tag).

    Gradients reach ``enc`` unless ``freeze`` is set, in which case its
    parameters are left bit-unchanged.
    """
    tags = np.asarray(tags)
    if tags.shape != (np.asarray(codes).shape[0],):
        raise ValueError("one tag per code is required")
    extra = [] if freeze else enc.parameters()
    if freeze:
        enc.set_requires_grad(False)
    try:
        return train_cfm(field, codes, hp, rng, prior, cond=condition_fn(enc, tags, draw),
                         extra_params=extra, tags=tags)
    finally:
        if freeze:
            enc.set_requires_grad(True)
