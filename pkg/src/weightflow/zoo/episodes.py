"""n-way k-shot episode sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import Dataset


@dataclass
class Episode:
    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray
    classes: np.ndarray  # dataset class ids, in episode-local label order
    way: int
    shot: int
    queries: int
    support_idx: np.ndarray | None = None
    query_idx: np.ndarray | None = None


def sample_episode(ds: Dataset, n: int, k: int, q: int, rng: np.random.Generator,
                   split: str = "train") -> Episode:
    """Draw ``n`` classes, then ``k`` support and ``q`` query examples of each.

    Classes are relabelled 0..n-1 in the order they were drawn.
    """
    x, y = ds.split(split)
    classes = np.unique(y)
    if classes.size < n:
        raise ValueError(f"dataset {ds.name} has {classes.size} classes, episode needs {n}")
    chosen = rng.choice(classes, size=n, replace=False)
    s_idx, q_idx, s_lab, q_lab = [], [], [], []
    for local, cls in enumerate(chosen):
        pool = np.flatnonzero(y == cls)
        if pool.size < k + q:
            raise ValueError(f"class {cls} has {pool.size} examples, episode needs {k + q}")
        pick = rng.choice(pool, size=k + q, replace=False)
        s_idx.append(pick[:k])
        q_idx.append(pick[k:])
        s_lab += [local] * k
        q_lab += [local] * q
    s_idx = np.concatenate(s_idx)
    q_idx = np.concatenate(q_idx)
    return Episode(
        support_x=x[s_idx], support_y=np.array(s_lab, dtype=np.int64),
        query_x=x[q_idx], query_y=np.array(q_lab, dtype=np.int64),
        classes=np.asarray(chosen), way=n, shot=k, queries=q,
        support_idx=s_idx, query_idx=q_idx,
    )
