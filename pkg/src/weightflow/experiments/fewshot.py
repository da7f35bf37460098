"""Few-shot head generation on a frozen feature backbone."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import nn
from ..codec.base import Codec
from ..conditioner.encoder import embed_support
from ..flow.integrate import integrate
from ..flow.prior import PriorSpec, sample_prior
from ..rng import derive
from ..zoo.datasets import Dataset
from ..zoo.episodes import sample_episode
from ..zoo.training import TrainConfig, train_base
from .report import EvalReport, topk_mean


def union_dataset(datasets: Sequence[Dataset], name: str = "union") -> Dataset:
    """All classes of ``datasets`` side by side, labels offset per dataset."""
    offs = np.cumsum([0] + [d.num_classes for d in datasets])
    cat = lambda f: np.concatenate([f(d, o) for d, o in zip(datasets, offs)])
    return Dataset(name, cat(lambda d, o: d.x_train), cat(lambda d, o: d.y_train + o),
                   cat(lambda d, o: d.x_val), cat(lambda d, o: d.y_val + o), int(offs[-1]))


@dataclass
class Backbone:
    """First linear layer + ReLU of a base net trained on the union of the in-distribution datasets."""

    record: object

    @property
    def feat_dim(self) -> int:
        return self.record.arch[1].d_out

    def features(self, x) -> np.ndarray:
        prefix = self.record.arch[:3]
        if [s.kind for s in prefix] != ["flatten", "linear", "relu"]:
            raise ValueError("backbone must start with flatten, linear, relu")
        return nn.forward(prefix, self.record.params, x).data


def train_backbone(datasets, hidden: int, cfg: TrainConfig, seed: int) -> Backbone:
    u = union_dataset(datasets)
    arch = nn.mlp_arch(u.input_dim, [hidden], u.num_classes)
    return Backbone(train_base(u, arch, cfg, {cfg.epochs}, derive(seed, "backbone"), seed=seed)[0])


def head_arch(feat_dim: int, way: int) -> list:
    return [nn.linear(feat_dim, way)]


def fit_probe(feats: np.ndarray, labels: np.ndarray, way: int, steps: int = 300, lr: float = 0.5,
              l2: float = 1e-3) -> dict:
    """Full-batch softmax regression from zero; returns head params."""
    W = np.zeros((way, feats.shape[1]))
    b = np.zeros(way)
    Y = np.eye(way)[labels]
    for _ in range(steps):
        z = feats @ W.T + b
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - Y) / len(labels)
        W -= lr * (g.T @ feats + l2 * W)
        b -= lr * g.sum(axis=0)
    return {"0.weight": W, "0.bias": b}


def head_accuracy(params: dict, feats: np.ndarray, labels: np.ndarray) -> float:
    way = params["0.bias"].size
    return nn.accuracy(head_arch(feats.shape[1], way), params, feats, labels)


@dataclass
class HeadZoo:
    heads: np.ndarray  # (N, d) head vectors in param_layout order
    supports: list  # (support_x, support_y) per head
    tags: np.ndarray  # episode index per head
    sources: list  # dataset name per head


def build_head_zoo(backbone: Backbone, datasets, n_episodes: int, way: int, shot: int, queries: int,
                   seed: int) -> HeadZoo:
    """Linear-probe heads on training episodes, cycling through ``datasets``."""
    rng = derive(seed, "head-zoo")
    heads, supports, sources = [], [], []
    for e in range(n_episodes):
        ds = datasets[e % len(datasets)]
        ep = sample_episode(ds, way, shot, queries, rng)
        p = fit_probe(backbone.features(ep.support_x), ep.support_y, way)
        heads.append(np.concatenate([p["0.weight"].ravel(), p["0.bias"]]))
        supports.append((ep.support_x, ep.support_y))
        sources.append(ds.name)
    return HeadZoo(np.array(heads), supports, np.arange(n_episodes), sources)


def run_fewshot(backbone: Backbone, enc, field, codec: Codec, in_datasets, ood_datasets, seed: int,
                way: int = 4, shot: int = 5, queries: int = 15, n_episodes: int = 10, n_samples: int = 50,
                k: int = 3, select: str = "query", prior: PriorSpec | None = None, nfe: int = 100) -> EvalReport:
    """Top-k-of-n generated heads per test episode (val split), against a probe oracle.

    ``select`` picks the top-k by query accuracy (default) or support accuracy;
    the reported value is always query accuracy.
    """
    if select not in ("query", "support"):
        raise ValueError("select must be 'query' or 'support'")
    expect = way * backbone.feat_dim + way
    if codec.space.d != expect:
        raise ValueError(f"head codec holds {codec.space.d} values, backbone/way need {expect}")
    start = time.perf_counter()
    prior = prior or PriorSpec()
    rows, summary = [], {}
    for group, pool in (("in_distribution", in_datasets), ("ood", ood_datasets)):
        gen_scores, probe_scores = [], []
        for e in range(n_episodes):
            ds = pool[e % len(pool)]
            ep = sample_episode(ds, way, shot, queries, derive(seed, "fewshot-episode", group, e), split="val")
            fs, fq = backbone.features(ep.support_x), backbone.features(ep.query_x)
            probe = head_accuracy(fit_probe(fs, ep.support_y, way), fq, ep.query_y)
            y = embed_support(enc, ep.support_x, ep.support_y).data
            x0 = sample_prior(prior, codec, derive(seed, "fewshot-x0", group, e), n_samples)
            codes = integrate(field, x0, np.repeat(y[None], n_samples, 0), steps=nfe)
            heads = codec.decode_params(codes)
            q_acc = np.array([head_accuracy(h, fq, ep.query_y) for h in heads])
            key = q_acc if select == "query" else np.array([head_accuracy(h, fs, ep.support_y) for h in heads])
            best = np.argsort(-key, kind="stable")[:k]
            score = float(q_acc[best].mean())
            gen_scores.append(score)
            probe_scores.append(probe)
            rows.append({"group": group, "dataset": ds.name, "episode": e, "accuracy": score,
                         "probe_accuracy": probe, "mean_sample_accuracy": float(q_acc.mean())})
        summary[group] = {"topk_mean": float(np.mean(gen_scores)), "probe_mean": float(np.mean(probe_scores)),
                          "episodes": n_episodes}
    return EvalReport("fewshot", rows=rows, summary={**summary, "k": k, "n_samples": n_samples, "select": select},
                      baselines={"chance": 1.0 / way}, seeds={"seed": seed}, wall_time=time.perf_counter() - start)


__all__ = ["Backbone", "HeadZoo", "build_head_zoo", "fit_probe", "head_accuracy", "head_arch", "run_fewshot",
           "train_backbone", "union_dataset", "topk_mean"]
