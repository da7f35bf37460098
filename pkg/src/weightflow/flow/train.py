"""CFM objective, training loop, sampling, and field checkpoints."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np

from .. import nn
from ..nn import tensor as T
from ..nn.tensor import NonFiniteError, Tensor
from ..zoo.checkpoint import read_blob, write_blob
from ..zoo.training import TrainingDiverged
from .coupling import COUPLINGS, ot_coupling
from .field import FieldConfig, FieldNet
from .integrate import DEFAULT_NFE, integrate
from .path import PathSample, get_path, path_sample, sample_t

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CfmConfig:
    steps: int = 2000
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 2e-6
    lr_min: float = 0.0
    schedule: str = "cosine"
    coupling: str = "ot"
    path: str = "linear"

    def __post_init__(self):
        if self.coupling not in COUPLINGS:
            raise ValueError(f"unknown coupling {self.coupling!r}; expected one of {COUPLINGS}")
        get_path(self.path)

    def to_dict(self) -> dict:
        return asdict(self)


def cfm_loss(field: Callable, batch: PathSample) -> Tensor:
    """Batch mean of ||v(x_t, t; y) - u||^2."""
    if len(batch) == 0:
        raise ValueError("empty CFM batch")
    v = T.as_tensor(field(batch.x_t, batch.t, batch.y))
    if v.shape != batch.u.shape:
        raise ValueError(f"field output {v.shape} does not match target velocity {batch.u.shape}")
    return T.tmean(T.tsum(T.square(T.sub(v, batch.u)), axis=1))


def path_sample_tensor(path, x0: np.ndarray, x1: Tensor, t: np.ndarray, y=None) -> PathSample:
    """Like ``path_sample`` but keeps ``x1`` on the tape (codec co-training)."""
    tc = t[:, None]
    x_t = T.add(path.beta(tc) * x0, T.mul(x1, path.alpha(tc)))
    u = T.add(T.mul(x1, path.d_alpha(tc)), path.d_beta(tc) * x0)
    return PathSample(x0, x1, t, x_t, u, y)


def _group_tags(n: int, cond, tags) -> np.ndarray:
    if tags is not None:
        tags = np.asarray(tags)
        if tags.shape != (n,):
            raise ValueError("one tag per code is required")
        return tags
    if cond is None:
        return np.zeros(n, dtype=np.int64)
    if callable(cond):
        return np.arange(n)
    return np.unique(np.asarray(cond), axis=0, return_inverse=True)[1].reshape(n)


def grouped_ot(x1: np.ndarray, x0: np.ndarray, tags: np.ndarray) -> np.ndarray:
    """Reorder prior draws ``x0`` by exact OT against ``x1`` within each tag group."""
    out = np.empty_like(x0)
    for tag in np.unique(tags):
        rows = np.flatnonzero(tags == tag)
        out[rows] = x0[rows][ot_coupling(x1[rows], x0[rows])]
    return out


@dataclass
class CfmCurve:
    loss: list = dc_field(default_factory=list)


def train_cfm(field: FieldNet, codes: np.ndarray, hp: CfmConfig, rng: np.random.Generator,
              prior: Callable, cond=None, extra_params: Sequence[Tensor] = (),
              encode_fn: Optional[Callable] = None, tags=None) -> CfmCurve:
    """Fit ``field`` by conditional flow matching.

    ``prior(rng, n)`` draws source codes. ``cond`` is None, an (N, c) array of
    per-code conditions, or ``cond(idx, rng) -> Tensor`` (for a jointly
    trained conditioner whose params go in ``extra_params``). With
    ``encode_fn``, ``codes`` are raw vectors encoded on the tape each step,
    so the encoder params (also in ``extra_params``) are co-trained.

    OT coupling runs within groups of equal ``tags`` (one tag per code), so a
    prior draw is never paired across conditions. Without tags, codes sharing
    a condition row form a group; a callable ``cond`` without tags couples
    each code with itself only, i.e. independently.
    """
    codes = np.asarray(codes, dtype=np.float64)
    if codes.ndim != 2 or codes.shape[0] < 1:
        raise ValueError("train_cfm needs a nonempty (N, d) array of codes")
    if isinstance(cond, np.ndarray) and cond.shape[0] != codes.shape[0]:
        raise ValueError("one condition row per code is required")
    tags = _group_tags(codes.shape[0], cond, tags)
    path = get_path(hp.path)
    params = field.parameters() + list(extra_params)
    opt = nn.AdamW(params, hp.lr, hp.weight_decay)
    curve = CfmCurve()
    n = codes.shape[0]
    for step in range(hp.steps):
        idx = rng.integers(0, n, size=hp.batch_size)
        x0 = np.asarray(prior(rng, hp.batch_size), dtype=np.float64)
        t = sample_t(rng, hp.batch_size)
        if hp.schedule == "cosine":
            opt.lr = nn.cosine_anneal(hp.lr, hp.lr_min, step, hp.steps)
        opt.zero_grad()
        try:
            if callable(cond):
                y = cond(idx, rng)
            else:
                y = None if cond is None else cond[idx]
            if encode_fn is None:
                x1 = codes[idx]
                x1_data = x1
            else:
                x1 = encode_fn(codes[idx])
                x1_data = x1.data
            if x0.shape != x1_data.shape:
                raise ValueError(f"prior samples {x0.shape} and codes {x1_data.shape} differ")
            # OT reorders the prior draws so each target keeps its condition
            if hp.coupling == "ot":
                x0 = grouped_ot(x1_data, x0, tags[idx])
            if encode_fn is None:
                batch = path_sample(path, x0, x1, t, y)
            else:
                batch = path_sample_tensor(path, x0, x1, t, y)
            loss = cfm_loss(field, batch)
            loss.backward()
            opt.step()
        except NonFiniteError as exc:
            raise TrainingDiverged(f"CFM training diverged at step {step}: {exc}") from exc
        curve.loss.append(loss.item())
    return curve


def generate(field: FieldNet, x0: np.ndarray, y=None, steps: int = DEFAULT_NFE, method: str = "euler") -> np.ndarray:
    """Integrate prior codes ``x0`` to generated codes."""
    return integrate(field, x0, y, steps, method)


def save_field(field: FieldNet, path, meta: dict | None = None, config: dict | None = None) -> None:
    cfg = {"field": field.cfg.to_dict()}
    cfg.update(config or {})
    write_blob(path, "cfm", field.state(), meta=meta or {}, config=cfg)


def load_field(path) -> tuple:
    """(FieldNet, header)."""
    header, tensors = read_blob(path, expect_kind="cfm")
    fc = header["config"]["field"]
    net = FieldNet(FieldConfig(**fc), np.random.default_rng(0))
    net.load_state(tensors)
    return net, header
