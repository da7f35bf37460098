"""Support-set encoder producing the flow's condition vector.

A small feature MLP embeds each image; embeddings are averaged within each
class; the class means are concatenated into fixed slots (episode-local
label order, missing classes zero-filled) and projected by two linear layers.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from ..nn import tensor as T
from ..nn.modules import MLP, Linear, Module
from ..nn.tensor import Tensor
from ..zoo.checkpoint import read_blob, write_blob


@dataclass(frozen=True)
class CondConfig:
    input_dim: int = 64
    feat_hidden: int = 64
    feat_dim: int = 32
    max_classes: int = 4
    proj_hidden: int = 128
    out_dim: int = 64

    def to_dict(self) -> dict:
        return asdict(self)


class CondEncoder(Module):
    def __init__(self, cfg: CondConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.feat = MLP([cfg.input_dim, cfg.feat_hidden, cfg.feat_dim], rng, act="relu")
        self.proj_in = Linear(cfg.max_classes * cfg.feat_dim, cfg.proj_hidden, rng)
        self.proj_out = Linear(cfg.proj_hidden, cfg.out_dim, rng)

    @property
    def out_dim(self) -> int:
        return self.cfg.out_dim

    def slots(self, x: np.ndarray, labels: np.ndarray) -> Tensor:
        """(max_classes * feat_dim,) concatenated per-class mean features."""
        cfg = self.cfg
        if len(x) == 0:
            raise ValueError("empty support set")
        x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
        labels = np.asarray(labels, dtype=np.int64)
        if x.shape[1] != cfg.input_dim:
            raise ValueError(f"images have {x.shape[1]} values, encoder expects {cfg.input_dim}")
        if labels.shape != (x.shape[0],):
            raise ValueError("one label per support image is required")
        if labels.min() < 0 or labels.max() >= cfg.max_classes:
            raise ValueError(f"labels must lie in 0..{cfg.max_classes - 1}")
        # canonical order (label, then pixel values) makes the mean bit-exact under reordering
        order = np.lexsort(tuple(x.T[::-1]) + (labels,))
        x, labels = x[order], labels[order]
        feats = self.feat(x)  # (N, feat_dim)
        avg = np.zeros((cfg.max_classes, x.shape[0]))
        for c in np.unique(labels):
            rows = labels == c
            avg[c, rows] = 1.0 / rows.sum()
        means = _left_matmul(avg, feats)
        return T.reshape(means, (cfg.max_classes * cfg.feat_dim,))

    def project(self, slots: Tensor) -> Tensor:
        return self.proj_out(T.relu(self.proj_in(slots)))

    def __call__(self, x, labels) -> Tensor:
        return self.project(self.slots(x, labels))


def _left_matmul(a: np.ndarray, b: Tensor) -> Tensor:
    """Constant (m, n) times Tensor (n, k), via the transposed product."""
    return T.transpose(T.matmul(T.transpose(b, (1, 0)), a.T), (1, 0))


def embed_support(enc: CondEncoder, x, labels) -> Tensor:
    """Condition vector y (out_dim,) for one support set or dataset sample."""
    return enc(x, labels)


def embed_many(enc: CondEncoder, sets: Sequence[tuple]) -> Tensor:
    """Stack of condition vectors (len(sets), out_dim) for [(x, labels), ...]."""
    slots = [T.reshape(enc.slots(x, y), (1, -1)) for x, y in sets]
    return enc.project(T.concat(slots, axis=0))


class DatasetSampler:
    """Draws ``shots`` training images per class from tagged datasets."""

    def __init__(self, datasets: Sequence, shots: int = 5):
        if shots < 1:
            raise ValueError("shots must be >= 1")
        self.datasets = list(datasets)
        self.shots = shots

    def sample(self, tag: int, rng: np.random.Generator) -> tuple:
        ds = self.datasets[int(tag)]
        x, y = ds.split("train")
        picks = [rng.choice(np.flatnonzero(y == c), size=self.shots, replace=False) for c in range(ds.num_classes)]
        idx = np.concatenate(picks)
        return x[idx], y[idx]


def condition_fn(enc: CondEncoder, tags: np.ndarray, draw: Callable) -> Callable:
    """``cond(idx, rng)`` for ``train_cfm``: one fresh sample per distinct tag in the batch.

    ``draw(tag, rng) -> (x, labels)`` supplies the images behind a tag.
    """
    tags = np.asarray(tags)

    def cond(idx, rng):
        batch_tags = tags[idx]
        uniq, inv = np.unique(batch_tags, return_inverse=True)
        ys = embed_many(enc, [draw(t, rng) for t in uniq])
        pick = np.zeros((len(idx), len(uniq)))
        pick[np.arange(len(idx)), inv.reshape(-1)] = 1.0
        return _left_matmul(pick, ys)

    return cond


def save_cond(enc: CondEncoder, path, meta: dict | None = None) -> None:
    write_blob(path, "cond", enc.state(), meta=meta or {}, config={"cond": enc.cfg.to_dict()})


def load_cond(path) -> CondEncoder:
    header, tensors = read_blob(path, expect_kind="cond")
    enc = CondEncoder(CondConfig(**header["config"]["cond"]), np.random.default_rng(0))
    enc.load_state(tensors)
    return enc
