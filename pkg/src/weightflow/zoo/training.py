"""Base-classifier training and zoo construction."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .. import nn
from ..nn.layers import LayerSpec, check_params, param_layout
from ..nn.tensor import NonFiniteError, Tensor
from ..rng import derive
from .datasets import Dataset

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 3e-3
    lr_min: float = 0.0
    optimizer: str = "adamw"
    weight_decay: float = 0.0
    schedule: str = "cosine"  # cosine | constant
    init: str = "normal"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class WeightRecord:
    arch: list
    params: dict  # name -> float64 array, in param_layout order
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        check_params(self.arch, self.params)
        acc = self.meta.get("val_acc")
        if acc is not None and not 0.0 <= acc <= 1.0:
            raise ValueError(f"val_acc {acc} outside [0, 1]")

    def ordered(self) -> list:
        return [(name, self.params[name]) for name, _ in param_layout(self.arch)]


def f32_round(params: dict) -> dict:
    """Round to the f32 grid that checkpoints store, keeping f64 dtype."""
    return {k: np.asarray(v, dtype=np.float32).astype(np.float64) for k, v in params.items()}


def evaluate(arch: Sequence[LayerSpec], params: dict, ds: Dataset, split: str = "val") -> float:
    x, y = ds.split(split)
    return nn.accuracy(arch, params, x, y)


def fit(arch: Sequence[LayerSpec], params: dict, x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
        rng: np.random.Generator, epochs: int | None = None, on_epoch=None) -> dict:
    """Minibatch cross-entropy training from ``params``; returns new params.

    ``on_epoch(epoch, params)`` is called after each completed epoch (1-based).
    """
    epochs = cfg.epochs if epochs is None else epochs
    leaves = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True) for k, v in params.items()}
    opt = nn.make_optimizer(cfg.optimizer, list(leaves.values()), cfg.lr, cfg.weight_decay)
    n = x.shape[0]
    steps_per_epoch = max(1, -(-n // cfg.batch_size))
    # the schedule always spans cfg.epochs so a shorter run is a prefix of the full one
    total = max(1, max(epochs, cfg.epochs) * steps_per_epoch)
    step = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        for s in range(steps_per_epoch):
            idx = order[s * cfg.batch_size:(s + 1) * cfg.batch_size]
            if cfg.schedule == "cosine":
                opt.lr = nn.cosine_anneal(cfg.lr, cfg.lr_min, step, total)
            opt.zero_grad()
            try:
                loss = nn.cross_entropy(nn.forward(arch, leaves, x[idx]), y[idx])
                loss.backward()
                opt.step()
            except NonFiniteError as exc:
                raise TrainingDiverged(f"non-finite value at epoch {epoch} step {s}: {exc}") from exc
            step += 1
        if on_epoch is not None:
            on_epoch(epoch, {k: t.data for k, t in leaves.items()})
    return {k: t.data.copy() for k, t in leaves.items()}


def train_base(ds: Dataset, arch: Sequence[LayerSpec], cfg: TrainConfig, save_epochs: Iterable[int],
               rng: np.random.Generator, seed: int | None = None) -> list:
    """Train one base net from Kaiming init, snapshotting at ``save_epochs``.

    Epoch 0 means the initial weights. Stored params are f32-rounded and the
    recorded val accuracy is computed on exactly those params.
    """
    arch = list(arch)
    if arch and arch[0].kind == "flatten":
        first = next(s for s in arch if s.kind in ("linear", "conv2d"))
        if first.kind == "linear" and first.d_in != ds.input_dim:
            raise ValueError(f"arch expects {first.d_in} inputs, dataset has {ds.input_dim}")
    save = sorted(set(int(e) for e in save_epochs))
    if not save or save[0] < 0 or save[-1] > cfg.epochs:
        raise ValueError(f"save_epochs must lie in [0, {cfg.epochs}]")
    records = []

    def snapshot(epoch, params):
        p = f32_round(params)
        meta = {"dataset": ds.name, "epoch": epoch, "seed": seed, "val_acc": evaluate(arch, p, ds)}
        records.append(WeightRecord(arch, p, meta))

    params = nn.init_params(arch, rng, cfg.init)
    if 0 in save:
        snapshot(0, params)
    wanted = set(save)
    fit(arch, params, ds.x_train, ds.y_train, cfg, rng, epochs=save[-1] if save[-1] > 0 else 0,
        on_epoch=lambda e, p: snapshot(e, p) if e in wanted else None)
    return records


def build_zoo(ds: Dataset, arch: Sequence[LayerSpec], cfg: TrainConfig, n_models: int,
              save_epochs: Iterable[int], master_seed: int) -> list:
    """Train ``n_models`` seeds on ``ds``; seed i varies init and batch order."""
    out = []
    save_epochs = list(save_epochs)
    for i in range(n_models):
        rng = derive(master_seed, "zoo", ds.name, i)
        out.extend(train_base(ds, arch, cfg, save_epochs, rng, seed=i))
    return out
