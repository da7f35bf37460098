"""Flattening weight records into fixed-length vectors, and chunking them."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..nn.layers import LayerSpec, param_layout

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Slot:
    name: str
    shape: tuple
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


def make_layout(arch: Sequence[LayerSpec]) -> list:
    slots, off = [], 0
    for name, shape in param_layout(arch):
        slots.append(Slot(name, tuple(shape), off))
        off += int(np.prod(shape))
    return slots


def layout_size(layout: Sequence[Slot]) -> int:
    return sum(s.size for s in layout)


@dataclass
class FlatCode:
    vector: np.ndarray
    layout: list
    pad_len: int

    def __post_init__(self):
        if self.vector.ndim != 1 or self.vector.size != layout_size(self.layout) + self.pad_len:
            raise ValueError("vector length does not equal layout size plus padding")


def vectorize(params: Mapping, arch: Sequence[LayerSpec], d: int | None = None) -> FlatCode:
    """Row-major per-tensor flattening in layer order, zero-padded to ``d``."""
    layout = make_layout(arch)
    n = layout_size(layout)
    d = n if d is None else int(d)
    if d < n:
        raise ValueError(f"target length {d} is smaller than the {n} parameters")
    vec = np.zeros(d)
    for s in layout:
        a = np.asarray(params[s.name], dtype=np.float64)
        if a.shape != s.shape:
            raise ValueError(f"{s.name} has shape {a.shape}, layout expects {s.shape}")
        vec[s.offset:s.offset + s.size] = a.ravel()
    return FlatCode(vec, layout, d - n)


def devectorize(code: FlatCode) -> dict:
    """Inverse of :func:`vectorize`; nonzero padding is dropped with a warning."""
    if not code.layout:
        raise ValueError("cannot devectorize an empty layout")
    n = layout_size(code.layout)
    if code.vector.size != n + code.pad_len:
        raise ValueError("layout/length mismatch")
    pad = code.vector[n:]
    nonzero = int(np.count_nonzero(pad))
    if nonzero:
        log.warning("devectorize: ignored %d nonzero padding entries", nonzero)
    return {s.name: code.vector[s.offset:s.offset + s.size].reshape(s.shape).copy() for s in code.layout}


def vectors_to_params(vectors: np.ndarray, layout: Sequence[Slot]) -> list:
    d = np.asarray(vectors).shape[1]
    pad = d - layout_size(layout)
    return [devectorize(FlatCode(np.asarray(v, dtype=np.float64), list(layout), pad)) for v in vectors]


@dataclass
class ChunkedCode:
    chunks: np.ndarray  # (k, chunk_size)
    chunk_size: int
    length: int  # original vector length before chunk padding
    layout: list
    pad_len: int  # FlatCode padding, carried through


def chunk_count(length: int, size: int) -> int:
    return max(1, -(-length // size))


def chunk(code: FlatCode, size: int) -> ChunkedCode:
    if size <= 0:
        raise ValueError("chunk size must be positive")
    length = code.vector.size
    k = chunk_count(length, size)
    buf = np.zeros(k * size)
    buf[:length] = code.vector
    return ChunkedCode(buf.reshape(k, size), size, length, code.layout, code.pad_len)


def unchunk(cc: ChunkedCode) -> FlatCode:
    return FlatCode(cc.chunks.reshape(-1)[:cc.length].copy(), cc.layout, cc.pad_len)
