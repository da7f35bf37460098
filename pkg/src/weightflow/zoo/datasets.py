"""Procedural image datasets and raw-tensor ingestion.

Each family draws one prototype per class from a generator seeded by
``(seed, family)``. Samples are the prototype with a small amplitude/shift
jitter plus Gaussian pixel noise; both scale with ``noise_std``, so a zero
noise spec produces identical images within a class.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..rng import derive

FAMILIES = ("sinusoid", "blob", "checker", "bars")
# pattern amplitude relative to unit pixel noise, and jitter per unit noise_std
SIGNAL = 0.4
JITTER = 2.0


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    family: str = "sinusoid"
    image_shape: tuple = (8, 8, 1)  # h, w, c
    num_classes: int = 4
    noise_std: float = 0.3
    n_train: int = 512
    n_val: int = 256
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "image_shape", tuple(int(s) for s in self.image_shape))
        if self.family not in FAMILIES:
            raise ValueError(f"unknown dataset family {self.family!r}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.n_train <= 0 or self.n_val <= 0:
            raise ValueError("dataset splits must be non-empty")
        if len(self.image_shape) != 3 or min(self.image_shape) <= 0:
            raise ValueError("image_shape must be (h, w, c) with positive entries")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["image_shape"] = list(self.image_shape)
        return d


@dataclass
class Dataset:
    """Images are stored channels-first: (N, c, h, w)."""

    name: str
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    num_classes: int
    spec: DatasetSpec | None = field(default=None, repr=False)

    @property
    def image_shape(self) -> tuple:
        return self.x_train.shape[1:]

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.image_shape))

    def split(self, which: str) -> tuple:
        if which == "train":
            return self.x_train, self.y_train
        if which == "val":
            return self.x_val, self.y_val
        raise ValueError(f"unknown split {which!r}")

    def restrict_classes(self, classes, name: str | None = None) -> "Dataset":
        """Keep only ``classes``, relabelled 0..len(classes)-1 in the given order."""
        classes = list(classes)
        lut = {c: i for i, c in enumerate(classes)}

        def pick(x, y):
            mask = np.isin(y, classes)
            return x[mask], np.array([lut[int(v)] for v in y[mask]], dtype=np.int64)

        xt, yt = pick(self.x_train, self.y_train)
        xv, yv = pick(self.x_val, self.y_val)
        return Dataset(name or self.name, xt, yt, xv, yv, len(classes), self.spec)


def _grid(h: int, w: int):
    return np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")


def _prototypes(spec: DatasetSpec) -> dict:
    h, w, c = spec.image_shape
    r = derive(spec.seed, "prototypes", spec.family)
    k = spec.num_classes
    if spec.family == "sinusoid":
        return {
            "freq": r.uniform(0.4, 2.5, size=(k, c, 2)) * r.choice([-1.0, 1.0], size=(k, c, 2)),
            "phase": r.uniform(0, 2 * np.pi, size=(k, c)),
        }
    if spec.family == "blob":
        return {
            "center": np.stack([r.uniform(0.5, h - 1.5, size=(k, c)), r.uniform(0.5, w - 1.5, size=(k, c))], -1),
            "width": r.uniform(0.9, 1.8, size=(k, c)),
        }
    if spec.family == "checker":
        return {"cells": r.choice([-1.0, 1.0], size=(k, c, 4, 4))}
    # bars: each class lights a random subset of rows and columns
    return {"rows": r.random(size=(k, c, h)) < 0.35, "cols": r.random(size=(k, c, w)) < 0.35}


def _render(spec: DatasetSpec, protos: dict, labels: np.ndarray, r: np.random.Generator) -> np.ndarray:
    h, w, c = spec.image_shape
    n = labels.size
    s = spec.noise_std
    ii, jj = _grid(h, w)
    j = JITTER * s
    amp = 1.0 + 0.5 * j * r.standard_normal((n, c, 1, 1))
    if spec.family == "sinusoid":
        f = protos["freq"][labels]  # (n, c, 2)
        ph = protos["phase"][labels] + j * r.standard_normal((n, c))
        arg = 2 * np.pi * (f[..., 0, None, None] * ii / h + f[..., 1, None, None] * jj / w) + ph[..., None, None]
        img = np.sin(arg)
    elif spec.family == "blob":
        ctr = protos["center"][labels] + 0.5 * j * r.standard_normal((n, c, 2))
        wid = protos["width"][labels]
        d2 = (ii - ctr[..., 0, None, None]) ** 2 + (jj - ctr[..., 1, None, None]) ** 2
        img = 3.0 * np.exp(-d2 / (2 * wid[..., None, None] ** 2)) - 0.5
    elif spec.family == "checker":
        cells = protos["cells"][labels]  # (n, c, 4, 4)
        ri = np.minimum((ii * 4 / h).astype(int), 3)
        rj = np.minimum((jj * 4 / w).astype(int), 3)
        img = cells[:, :, ri, rj]
    else:
        rows = protos["rows"][labels].astype(np.float64)
        cols = protos["cols"][labels].astype(np.float64)
        img = np.clip(rows[..., :, None] + cols[..., None, :], 0, 1) * 2.0 - 1.0
    img = SIGNAL * amp * img
    return img + s * r.standard_normal(img.shape)


def _balanced_labels(n: int, k: int, r: np.random.Generator) -> np.ndarray:
    y = np.arange(n, dtype=np.int64) % k
    r.shuffle(y)
    return y


def make_dataset(spec: DatasetSpec) -> Dataset:
    protos = _prototypes(spec)
    r_train = derive(spec.seed, "samples", spec.family, "train")
    r_val = derive(spec.seed, "samples", spec.family, "val")
    y_train = _balanced_labels(spec.n_train, spec.num_classes, r_train)
    y_val = _balanced_labels(spec.n_val, spec.num_classes, r_val)
    x_train = _render(spec, protos, y_train, r_train)
    x_val = _render(spec, protos, y_val, r_val)
    return Dataset(spec.name, x_train, y_train, x_val, y_val, spec.num_classes, spec)


def with_family(spec: DatasetSpec, family: str, name: str | None = None) -> DatasetSpec:
    return replace(spec, family=family, name=name or family)


# -- raw ingestion ------------------------------------------------------------------
def save_raw_dataset(path, x: np.ndarray, y: np.ndarray, num_classes: int, n_val: int) -> None:
    """Write images (N, h, w, c) as data.f32 + labels.u32 + shape.json."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    x = np.asarray(x)
    if x.ndim != 4:
        raise ValueError("raw images must be (N, h, w, c)")
    x.astype("<f4").tofile(path / "data.f32")
    np.asarray(y).astype("<u4").tofile(path / "labels.u32")
    meta = {"shape": list(x.shape), "num_classes": int(num_classes), "n_val": int(n_val)}
    (path / "shape.json").write_text(json.dumps(meta, sort_keys=True))


def load_raw_dataset(path, name: str | None = None) -> Dataset:
    """Read a raw directory; the last ``n_val`` samples form the val split."""
    path = Path(path)
    meta = json.loads((path / "shape.json").read_text())
    shape = tuple(meta["shape"])
    x = np.fromfile(path / "data.f32", dtype="<f4").astype(np.float64)
    y = np.fromfile(path / "labels.u32", dtype="<u4").astype(np.int64)
    if x.size != int(np.prod(shape)) or y.size != shape[0]:
        raise ValueError(f"raw dataset {path} does not match shape.json {shape}")
    x = x.reshape(shape).transpose(0, 3, 1, 2)
    n_val = int(meta.get("n_val", max(1, shape[0] // 5)))
    k = int(meta.get("num_classes", int(y.max()) + 1))
    if not 0 < n_val < shape[0]:
        raise ValueError("n_val must leave both splits non-empty")
    cut = shape[0] - n_val
    return Dataset(name or path.name, x[:cut], y[:cut], x[cut:], y[cut:], k)
