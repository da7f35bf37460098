"""Edge-conditioned message passing over neural graphs.

Each round sends a forward message along every edge (src -> dst) computed
from the source state and the edge feature, and a backward message
(dst -> src) from the destination state and the edge feature. Messages are
summed and scaled by the size of the neighbouring block, then added to the
node state through a residual update. Only nonzero edges carry messages.

Input and output nodes get positional one-hot features (their order has
meaning); hidden nodes get none, so the embedding, a per-block mean of the
final node states concatenated in block order, is invariant to relabelling
hidden neurons.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import tensor as T
from ..nn.modules import MLP, Linear, Module
from ..nn.tensor import Tensor
from .convert import NeuralGraph


@dataclass
class Structure:
    """Fixed edge list and gather/scatter matrices for one block layout."""

    block_sizes: list
    src: np.ndarray
    dst: np.ndarray

    def __post_init__(self):
        sizes = self.block_sizes
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        n = int(self.offsets[-1])
        m = self.src.size
        block_of = np.repeat(np.arange(len(sizes)), sizes)
        self.n = n
        self.gather_src = np.zeros((n, m))
        self.gather_src[self.src, np.arange(m)] = 1.0
        self.gather_dst = np.zeros((n, m))
        self.gather_dst[self.dst, np.arange(m)] = 1.0
        # forward messages land on dst, normalised by the width of the source block
        src_width = np.asarray(sizes)[block_of[self.src]]
        dst_width = np.asarray(sizes)[block_of[self.dst]]
        self.scatter_dst = (self.gather_dst / src_width).T
        self.scatter_src = (self.gather_src / dst_width).T
        self.readout = np.zeros((n, len(sizes)))
        self.readout[np.arange(n), block_of] = 1.0 / np.asarray(sizes)[block_of]
        d0, dL = sizes[0], sizes[-1]
        pos = np.zeros((n, 1 + d0 + dL))
        pos[:, 0] = 1.0
        pos[:d0, 0] = 0.0
        pos[n - dL:, 0] = 0.0
        pos[np.arange(d0), 1 + np.arange(d0)] = 1.0
        pos[n - dL + np.arange(dL), 1 + d0 + np.arange(dL)] = 1.0
        self.positional = pos

    @classmethod
    def from_graph(cls, g: NeuralGraph) -> "Structure":
        src, dst = np.nonzero(np.any(g.E != 0, axis=2))
        return cls(list(g.block_sizes), src, dst)


@dataclass(frozen=True)
class GnnConfig:
    hidden: int = 16
    rounds: int = 2


class GnnEncoder(Module):
    def __init__(self, first_block: int, last_block: int, d_V: int, d_E: int, cfg: GnnConfig,
                 rng: np.random.Generator):
        if cfg.rounds < 1:
            raise ValueError("rounds must be >= 1")
        self.cfg = cfg
        self.sizes_io = (first_block, last_block)
        h = cfg.hidden
        self.embed = Linear(d_V + 1 + first_block + last_block, h, rng)
        self.fwd = [MLP([h + d_E, h, h], rng) for _ in range(cfg.rounds)]
        self.bwd = [MLP([h + d_E, h, h], rng) for _ in range(cfg.rounds)]
        self.upd = [MLP([3 * h, h, h], rng) for _ in range(cfg.rounds)]

    def __call__(self, V, E_edges, mask, st: Structure) -> Tensor:
        """V (B, n, d_V); E_edges (B, m, d_E); mask (B, m, 1) -> (B, n_blocks * hidden)."""
        if st.n == 0:
            raise ValueError("cannot encode an empty graph")
        if (st.block_sizes[0], st.block_sizes[-1]) != self.sizes_io:
            raise ValueError("graph input/output widths do not match the encoder")
        V = T.as_tensor(V)
        B = V.shape[0]
        pos = np.broadcast_to(st.positional, (B,) + st.positional.shape)
        h = T.silu(self.embed(T.concat([V, T.as_tensor(pos)], axis=-1)))
        for r in range(self.cfg.rounds):
            hT = T.transpose(h, (0, 2, 1))  # (B, hid, n)
            hs = T.transpose(T.matmul(hT, st.gather_src), (0, 2, 1))  # (B, m, hid)
            hd = T.transpose(T.matmul(hT, st.gather_dst), (0, 2, 1))
            mf = T.mul(self.fwd[r](T.concat([hs, E_edges], axis=-1)), mask)
            mb = T.mul(self.bwd[r](T.concat([hd, E_edges], axis=-1)), mask)
            agg_f = T.transpose(T.matmul(T.transpose(mf, (0, 2, 1)), st.scatter_dst), (0, 2, 1))
            agg_b = T.transpose(T.matmul(T.transpose(mb, (0, 2, 1)), st.scatter_src), (0, 2, 1))
            h = T.add(h, self.upd[r](T.concat([h, agg_f, agg_b], axis=-1)))
        pooled = T.matmul(T.transpose(h, (0, 2, 1)), st.readout)  # (B, hid, blocks)
        pooled = T.transpose(pooled, (0, 2, 1))
        return T.reshape(pooled, (B, -1))


def gnn_encode(g: NeuralGraph, enc: GnnEncoder, rounds: int | None = None) -> np.ndarray:
    """Embedding of one graph, using its nonzero edges."""
    if g.n == 0:
        raise ValueError("cannot encode an empty graph")
    if rounds is not None and rounds != enc.cfg.rounds:
        raise ValueError(f"encoder was built for {enc.cfg.rounds} rounds")
    st = Structure.from_graph(g)
    E_edges = g.E[st.src, st.dst][None]
    mask = np.ones((1, st.src.size, 1))
    return enc(g.V[None], E_edges, mask, st).data[0]
