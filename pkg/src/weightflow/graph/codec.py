"""Graph codec: message-passing encoder over the neural graph, MLP decoder.

Trained with the same noisy VAE objective as the vector codecs; only the
encoder differs, so codes are invariant to relabelling hidden neurons.
"""

from __future__ import annotations

import numpy as np

from ..codec.base import Codec, WeightSpace, register_codec
from ..codec.vae import VaeConfig, VaeTrainConfig, train_vae, vae_decode, vae_encode
from ..nn import tensor as T
from ..nn.modules import MLP, Linear, Module
from ..nn.tensor import Tensor
from .convert import SpatialPad, allowed_mask, block_sizes, graph_layers
from .gnn import GnnConfig, GnnEncoder, Structure


def vector_index_maps(space: WeightSpace) -> tuple:
    """Structure plus vector positions feeding each edge feature and node feature.

    Returns (structure, edge_pos (m, d_E), node_pos (n,)); -1 marks entries
    that are always zero (kernel padding, input nodes).
    """
    arch = space.arch
    pad = SpatialPad.for_arch(arch)
    node_mask, edge_mask = allowed_mask(arch, pad)
    sizes = block_sizes(arch)
    off = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    src, dst = np.nonzero(np.any(edge_mask, axis=2))
    st = Structure(sizes, src, dst)
    edge_lookup = -np.ones((st.n, st.n, pad.size), dtype=np.int64)
    node_pos = -np.ones(st.n, dtype=np.int64)
    slots = {s.name: s for s in space.layout}
    for b, (i, spec) in enumerate(graph_layers(arch), start=1):
        dst_nodes = np.arange(off[b], off[b + 1])
        if spec.kind == "affine_norm":
            sc, sh = slots[f"{i}.scale"], slots[f"{i}.shift"]
            idx = np.arange(spec.d_in)
            edge_lookup[off[b - 1] + idx, off[b] + idx, 0] = sc.offset + idx
            node_pos[dst_nodes] = sh.offset + idx
            continue
        w, bias = slots[f"{i}.weight"], slots[f"{i}.bias"]
        node_pos[dst_nodes] = bias.offset + np.arange(spec.d_out)
        if spec.kind == "linear":
            o, j = np.meshgrid(np.arange(spec.d_out), np.arange(spec.d_in), indexing="ij")
            edge_lookup[off[b - 1] + j, off[b] + o, 0] = w.offset + o * spec.d_in + j
        else:
            kh, kw = spec.kernel
            for o in range(spec.d_out):
                for c in range(spec.d_in):
                    for y in range(kh):
                        for x in range(kw):
                            edge_lookup[off[b - 1] + c, off[b] + o, y * pad.w_max + x] = (
                                w.offset + ((o * spec.d_in + c) * kh + y) * kw + x)
    return st, edge_lookup[src, dst], node_pos


class GraphVae(Module):
    def __init__(self, space: WeightSpace, cfg: VaeConfig, gcfg: GnnConfig, rng: np.random.Generator):
        self.d_in = space.d
        self.cfg = cfg
        self.gcfg = gcfg
        self.structure, self.edge_pos, self.node_pos = vector_index_maps(space)
        sizes = self.structure.block_sizes
        d_E = self.edge_pos.shape[1]
        self.encoder = GnnEncoder(sizes[0], sizes[-1], 1, d_E, gcfg, rng)
        self.head = Linear(len(sizes) * gcfg.hidden, 2 * cfg.latent_dim, rng)
        self.decoder = MLP([cfg.latent_dim, *reversed(cfg.hidden), self.d_in], rng, cfg.act)

    @property
    def latent_dim(self) -> int:
        return self.cfg.latent_dim

    def graph_features(self, x: np.ndarray) -> tuple:
        """Batch of vectors (B, d) -> V (B, n, 1), edge features (B, m, d_E), nonzero mask."""
        xp = np.concatenate([x, np.zeros((x.shape[0], 1))], axis=1)  # index -1 reads the zero column
        E = xp[:, self.edge_pos]
        V = xp[:, self.node_pos][..., None]
        mask = np.any(E != 0, axis=2, keepdims=True).astype(np.float64)
        return V, E, mask

    def encode_stats(self, x: Tensor) -> tuple:
        V, E, mask = self.graph_features(np.asarray(x.data))
        h = self.head(self.encoder(V, E, mask, self.structure))
        L = self.latent_dim
        return h[:, :L], h[:, L:]


class GraphCodec(Codec):
    kind = "graph"
    file_kind = "graph"

    def __init__(self, space: WeightSpace, rng: np.random.Generator, vae_cfg: VaeConfig | None = None,
                 gnn_cfg: GnnConfig | None = None, **_):
        super().__init__(space)
        self.cfg = vae_cfg or VaeConfig()
        self.gnn_cfg = gnn_cfg or GnnConfig()
        self.model = GraphVae(space, self.cfg, self.gnn_cfg, rng)

    @property
    def code_dim(self) -> int:
        return self.cfg.latent_dim

    def fit(self, vectors, rng, hp: VaeTrainConfig | None = None, records=None):
        return train_vae(self.model, np.atleast_2d(vectors), hp or VaeTrainConfig(), rng)

    def encode(self, vectors, records=None) -> np.ndarray:
        return vae_encode(self.model, np.atleast_2d(vectors))[2].data

    def decode_tensor(self, codes: Tensor) -> Tensor:
        return vae_decode(self.model, codes)

    def modules(self) -> list:
        return [("graph", self.model)]

    def config(self) -> dict:
        c = super().config()
        c.update(vae=self.cfg.to_dict(), gnn={"hidden": self.gnn_cfg.hidden, "rounds": self.gnn_cfg.rounds})
        return c


def _load(space: WeightSpace, cfg: dict) -> GraphCodec:
    return GraphCodec(space, np.random.default_rng(0), VaeConfig(**cfg["vae"]), GnnConfig(**cfg["gnn"]))


register_codec("graph", GraphCodec, _load)
