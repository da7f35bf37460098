"""Weight codecs: maps between base-net parameters and the vectors a flow models.

A :class:`WeightSpace` fixes the architecture and padded vector length. A
codec then maps those vectors to codes: ``flat`` is the identity, ``vae``
encodes the whole vector, ``chunk`` encodes fixed-size chunks with one
shared VAE and concatenates the chunk latents, and ``graph`` (registered by
the graph package) encodes the neural graph with a message-passing encoder.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..nn import tensor as T
from ..nn.layers import LayerSpec
from ..nn.tensor import Tensor
from ..zoo.checkpoint import arch_from_header, read_blob, write_blob
from .flat import chunk_count, layout_size, make_layout, vectorize, vectors_to_params
from .vae import VaeConfig, VaeModel, VaeTrainConfig, reconstruct, train_vae, vae_decode, vae_encode

CODEC_KINDS = ("flat", "chunk", "vae", "graph")
_REGISTRY: dict = {}


@dataclass
class WeightSpace:
    arch: list
    d: int

    def __post_init__(self):
        self.layout = make_layout(self.arch)
        if self.d < layout_size(self.layout):
            raise ValueError(f"vector length {self.d} cannot hold {layout_size(self.layout)} parameters")

    @classmethod
    def for_arch(cls, arch: Sequence[LayerSpec], d: int | None = None) -> "WeightSpace":
        arch = list(arch)
        return cls(arch, layout_size(make_layout(arch)) if d is None else int(d))

    @property
    def n_params(self) -> int:
        return layout_size(self.layout)

    def to_vectors(self, records) -> np.ndarray:
        return np.stack([vectorize(r.params, self.arch, self.d).vector for r in records])

    def to_params(self, vectors) -> list:
        return vectors_to_params(np.atleast_2d(vectors), self.layout)

    def tensor_params(self, vec: Tensor) -> dict:
        """Differentiable slice of one (d,) vector Tensor into named params."""
        return {s.name: T.reshape(vec[s.offset:s.offset + s.size], s.shape) for s in self.layout}


class Codec:
    kind = "base"
    file_kind = "vae"

    def __init__(self, space: WeightSpace):
        self.space = space

    @property
    def code_dim(self) -> int:
        raise NotImplementedError

    def fit(self, vectors: np.ndarray, rng: np.random.Generator, hp=None, records=None):
        return None

    def encode(self, vectors: np.ndarray, records=None) -> np.ndarray:
        raise NotImplementedError

    def decode(self, codes: np.ndarray) -> np.ndarray:
        return self.decode_tensor(T.as_tensor(np.atleast_2d(codes))).data

    def decode_tensor(self, codes: Tensor) -> Tensor:
        raise NotImplementedError

    def encode_records(self, records) -> np.ndarray:
        return self.encode(self.space.to_vectors(records), records=records)

    def decode_params(self, codes) -> list:
        return self.space.to_params(self.decode(codes))

    def modules(self) -> list:
        return []

    def config(self) -> dict:
        return {"codec": self.kind, "d": self.space.d}

    def tensors(self) -> list:
        out = []
        for prefix, mod in self.modules():
            out += [(f"{prefix}.{n}", a) for n, a in mod.state()]
        return out


class FlatCodec(Codec):
    """Identity codec: the code is the zero-padded weight vector itself."""

    kind = "flat"

    @property
    def code_dim(self) -> int:
        return self.space.d

    def encode(self, vectors, records=None) -> np.ndarray:
        return np.array(np.atleast_2d(vectors), dtype=np.float64)

    def decode_tensor(self, codes: Tensor) -> Tensor:
        return codes


class VaeCodec(Codec):
    """VAE over the whole vector (``chunk_size`` None) or over shared-size chunks."""

    def __init__(self, space: WeightSpace, cfg: VaeConfig, rng: np.random.Generator,
                 chunk_size: int | None = None):
        super().__init__(space)
        self.cfg = cfg
        self.chunk_size = chunk_size
        self.n_chunks = 1 if chunk_size is None else chunk_count(space.d, chunk_size)
        width = space.d if chunk_size is None else chunk_size
        self.model = VaeModel(width, cfg, rng)

    @property
    def kind(self) -> str:
        return "vae" if self.chunk_size is None else "chunk"

    @property
    def code_dim(self) -> int:
        return self.n_chunks * self.cfg.latent_dim

    def _rows(self, vectors: np.ndarray) -> np.ndarray:
        vectors = np.atleast_2d(vectors)
        if self.chunk_size is None:
            return vectors
        k, size = self.n_chunks, self.chunk_size
        buf = np.zeros((vectors.shape[0], k * size))
        buf[:, :vectors.shape[1]] = vectors
        return buf.reshape(-1, size)

    def fit(self, vectors, rng, hp: VaeTrainConfig | None = None, records=None):
        return train_vae(self.model, self._rows(vectors), hp or VaeTrainConfig(), rng)

    def encode(self, vectors, records=None) -> np.ndarray:
        n = np.atleast_2d(vectors).shape[0]
        _, _, z = vae_encode(self.model, self._rows(vectors))
        return z.data.reshape(n, self.code_dim)

    def encode_tensor(self, vectors) -> Tensor:
        """Eval-mode codes kept on the tape, for co-training the encoder."""
        n = np.atleast_2d(vectors).shape[0]
        mean = self.model.encode_stats(T.as_tensor(self._rows(vectors)))[0]
        return T.reshape(mean, (n, self.code_dim))

    def decode_tensor(self, codes: Tensor) -> Tensor:
        n = codes.shape[0]
        out = vae_decode(self.model, T.reshape(codes, (n * self.n_chunks, self.cfg.latent_dim)))
        if self.chunk_size is None:
            return out
        flat = T.reshape(out, (n, self.n_chunks * self.chunk_size))
        return flat[:, :self.space.d]

    def reconstruct(self, vectors) -> np.ndarray:
        return self.decode(self.encode(vectors))

    def modules(self) -> list:
        return [("vae", self.model)]

    def config(self) -> dict:
        c = super().config()
        c.update(vae=self.cfg.to_dict(), chunk_size=self.chunk_size)
        return c


def register_codec(kind: str, builder, loader) -> None:
    _REGISTRY[kind] = (builder, loader)


def make_codec(kind: str, space: WeightSpace, rng: np.random.Generator, vae_cfg: VaeConfig | None = None,
               chunk_size: int = 256, **kwargs) -> Codec:
    vae_cfg = vae_cfg or VaeConfig()
    if kind == "flat":
        return FlatCodec(space)
    if kind == "vae":
        return VaeCodec(space, vae_cfg, rng)
    if kind == "chunk":
        return VaeCodec(space, vae_cfg, rng, chunk_size=chunk_size)
    if kind in _REGISTRY:
        return _REGISTRY[kind][0](space, rng, vae_cfg=vae_cfg, **kwargs)
    if kind == "graph":
        from .. import graph  # noqa: F401  registers the graph codec
        return _REGISTRY[kind][0](space, rng, vae_cfg=vae_cfg, **kwargs)
    raise ValueError(f"unknown codec kind {kind!r}; expected one of {CODEC_KINDS}")


def save_codec(codec: Codec, path) -> None:
    write_blob(path, codec.file_kind, codec.tensors(), arch=codec.space.arch, config=codec.config())


def load_codec(path) -> Codec:
    header, tensors = read_blob(path)
    cfg = header["config"]
    space = WeightSpace(arch_from_header(header), int(cfg["d"]))
    kind = cfg["codec"]
    if kind == "flat":
        return FlatCodec(space)
    if kind in ("vae", "chunk"):
        vcfg = VaeConfig(**cfg["vae"])
        codec = VaeCodec(space, vcfg, np.random.default_rng(0), chunk_size=cfg.get("chunk_size"))
    elif kind == "graph":
        from .. import graph  # noqa: F401
        codec = _REGISTRY["graph"][1](space, cfg)
    else:
        raise ValueError(f"unknown codec kind {kind!r} in {path}")
    for prefix, mod in codec.modules():
        mod.load_state({n[len(prefix) + 1:]: a for n, a in tensors.items() if n.startswith(prefix + ".")})
    return codec


__all__ = ["Codec", "FlatCodec", "VaeCodec", "WeightSpace", "make_codec", "save_codec", "load_codec",
           "register_codec", "reconstruct"]
