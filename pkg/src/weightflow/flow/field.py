"""Time embedding and the conditional vector-field network."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..nn import tensor as T
from ..nn.modules import MLP, Linear, Module
from ..nn.tensor import Tensor

MAX_FREQ = 100.0


def time_embed(t, dim: int, max_freq: float = MAX_FREQ) -> np.ndarray:
    """Interleaved [sin(f_k t), cos(f_k t)] with f_k geometric in [1, max_freq].

    ``t`` scalar -> (dim,); ``t`` of shape (B,) -> (B, dim).
    """
    if dim <= 0 or dim % 2:
        raise ValueError(f"time embedding dim must be even and positive, got {dim}")
    t = np.asarray(t, dtype=np.float64)
    half = dim // 2
    freqs = max_freq ** (np.arange(half) / max(half - 1, 1))
    ang = t[..., None] * freqs
    out = np.empty(t.shape + (dim,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


def time_embed_lipschitz(dim: int, max_freq: float = MAX_FREQ) -> float:
    """Upper bound on ||d/dt time_embed(t)||."""
    half = dim // 2
    freqs = max_freq ** (np.arange(half) / max(half - 1, 1))
    return float(np.sqrt(np.sum(freqs ** 2)))


@dataclass(frozen=True)
class FieldConfig:
    dim: int
    cond_dim: int = 0
    temb_dim: int = 128
    hidden: tuple = (256, 256, 256)
    act: str = "silu"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.dim <= 0:
            raise ValueError("field dim must be positive")
        if self.cond_dim < 0:
            raise ValueError("cond_dim must be >= 0")
        if not 2 <= len(self.hidden) + 1 <= 5:
            raise ValueError("field MLP takes 1-4 hidden layers")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


class FieldNet(Module):
    """v(x, t; y) = MLP([x || proj(time_embed(t) || y)]); the last layer starts at zero."""

    def __init__(self, cfg: FieldConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.proj = Linear(cfg.temb_dim + cfg.cond_dim, cfg.temb_dim, rng)
        self.net = MLP([cfg.dim + cfg.temb_dim, *cfg.hidden, cfg.dim], rng, cfg.act, zero_last=True)

    @property
    def dim(self) -> int:
        return self.cfg.dim

    def __call__(self, x, t, y=None) -> Tensor:
        x = T.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.cfg.dim:
            raise ValueError(f"field expects (B, {self.cfg.dim}) inputs, got {x.shape}")
        B = x.shape[0]
        temb = T.as_tensor(np.broadcast_to(time_embed(np.broadcast_to(t, (B,)), self.cfg.temb_dim),
                                           (B, self.cfg.temb_dim)))
        if self.cfg.cond_dim:
            if y is None:
                raise ValueError("conditional field called without y")
            y = T.as_tensor(y)
            if y.ndim == 1:
                y = T.reshape(y, (1, -1))
            if y.shape[-1] != self.cfg.cond_dim:
                raise ValueError(f"condition has dim {y.shape[-1]}, field expects {self.cfg.cond_dim}")
            if y.shape[0] != B:
                y = T.add(y, np.zeros((B, self.cfg.cond_dim)))
            temb = T.concat([temb, y], axis=-1)
        elif y is not None:
            raise ValueError("unconditional field got a condition")
        return self.net(T.concat([x, self.proj(temb)], axis=-1))
