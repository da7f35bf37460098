"""Network <-> neural-graph conversion.

Node blocks: block 0 holds the input features (or channels); every
parametric layer appends one block of output nodes. ``E[src, dst]`` carries
the weight of the connection src -> dst, so the block between layers is the
transposed weight matrix. Node features are biases (zero for inputs).
Conv kernels are zero-padded top-left into a (h_max, w_max) grid and
flattened row-major; scalar weights occupy feature slot 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..nn.layers import LayerSpec

GRAPH_LAYERS = ("linear", "conv2d", "affine_norm")
PASSIVE = ("relu", "flatten", "softmax_ce_head")


@dataclass
class NeuralGraph:
    V: np.ndarray  # (n, d_V)
    E: np.ndarray  # (n, n, d_E)
    layer_offsets: list  # start of each node block, plus n at the end

    @property
    def n(self) -> int:
        return self.V.shape[0]

    @property
    def d_V(self) -> int:
        return self.V.shape[1]

    @property
    def d_E(self) -> int:
        return self.E.shape[2]

    @property
    def block_sizes(self) -> list:
        o = self.layer_offsets
        return [b - a for a, b in zip(o, o[1:])]

    def block(self, i: int) -> slice:
        return slice(self.layer_offsets[i], self.layer_offsets[i + 1])

    def to_json(self) -> str:
        """Debug dump listing nonzero edges only."""
        src, dst = np.nonzero(np.any(self.E != 0, axis=2))
        edges = [{"i": int(i), "j": int(j), "feat": self.E[i, j].tolist()} for i, j in zip(src, dst)]
        return json.dumps({"n": self.n, "d_V": self.d_V, "d_E": self.d_E, "layer_offsets": self.layer_offsets,
                           "nodes": self.V.tolist(), "edges": edges}, sort_keys=True)


@dataclass(frozen=True)
class SpatialPad:
    h_max: int
    w_max: int

    @property
    def size(self) -> int:
        return self.h_max * self.w_max

    @classmethod
    def for_arch(cls, arch: Sequence[LayerSpec]) -> "SpatialPad":
        ks = [s.kernel for s in arch if s.kind == "conv2d"]
        if not ks:
            return cls(1, 1)
        return cls(max(k[0] for k in ks), max(k[1] for k in ks))


def graph_layers(arch: Sequence[LayerSpec]) -> list:
    """(arch index, spec) of every parametric layer, with block-width checks."""
    out = []
    width = None
    for i, spec in enumerate(arch):
        if spec.kind in PASSIVE:
            continue
        if spec.kind not in GRAPH_LAYERS:
            raise ValueError(f"layer {i} ({spec.kind}) has no graph form")
        if width is not None and spec.d_in != width:
            raise ValueError(f"layer {i} consumes {spec.d_in} nodes but the previous block has {width}; "
                             "conv->linear flattening has no node-level graph form")
        out.append((i, spec))
        width = spec.d_out
    if not out:
        raise ValueError("network has no parametric layers")
    return out


def block_sizes(arch: Sequence[LayerSpec]) -> list:
    layers = graph_layers(arch)
    return [layers[0][1].d_in] + [s.d_out for _, s in layers]


def _pad_kernel(k: np.ndarray, pad: SpatialPad) -> np.ndarray:
    kh, kw = k.shape[-2:]
    if kh > pad.h_max or kw > pad.w_max:
        raise ValueError(f"kernel {kh}x{kw} exceeds pad {pad.h_max}x{pad.w_max}")
    out = np.zeros(k.shape[:-2] + (pad.h_max, pad.w_max))
    out[..., :kh, :kw] = k
    return out.reshape(k.shape[:-2] + (pad.size,))


def to_graph(arch: Sequence[LayerSpec], params: Mapping, pad: SpatialPad | None = None) -> NeuralGraph:
    """Convert any chain of linear / conv2d / affine_norm layers."""
    layers = graph_layers(arch)
    pad = pad or SpatialPad.for_arch(arch)
    d_E = pad.size
    sizes = block_sizes(arch)
    offsets = [int(o) for o in np.concatenate([[0], np.cumsum(sizes)])]
    n = offsets[-1]
    V = np.zeros((n, 1))
    E = np.zeros((n, n, d_E))
    for b, (i, spec) in enumerate(layers, start=1):
        src = slice(offsets[b - 1], offsets[b])
        dst = slice(offsets[b], offsets[b + 1])
        if spec.kind == "linear":
            E[src, dst, 0] = np.asarray(params[f"{i}.weight"]).T
            V[dst, 0] = params[f"{i}.bias"]
        elif spec.kind == "conv2d":
            k = _pad_kernel(np.asarray(params[f"{i}.weight"], dtype=np.float64), pad)  # (out, in, s)
            E[src, dst, :] = k.transpose(1, 0, 2)
            V[dst, 0] = params[f"{i}.bias"]
        else:
            idx = np.arange(spec.d_in)
            E[offsets[b - 1] + idx, offsets[b] + idx, 0] = params[f"{i}.scale"]
            V[dst, 0] = params[f"{i}.shift"]
    return NeuralGraph(V, E, offsets)


def mlp_to_graph(arch: Sequence[LayerSpec], params: Mapping) -> NeuralGraph:
    bad = [s.kind for s in arch if s.kind not in ("linear",) + PASSIVE]
    if bad:
        raise ValueError(f"mlp_to_graph got non-MLP layers: {bad}")
    return to_graph(arch, params, SpatialPad(1, 1))


def conv_to_graph(arch: Sequence[LayerSpec], params: Mapping, pad: SpatialPad) -> NeuralGraph:
    return to_graph(arch, params, pad)


def norm_to_graph(m, b) -> NeuralGraph:
    m = np.asarray(m, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if m.shape != b.shape or m.ndim != 1:
        raise ValueError("norm_to_graph needs equal-length scale and shift vectors")
    d = m.size
    return to_graph([LayerSpec("affine_norm", d, d)], {"0.scale": m, "0.shift": b})


def allowed_mask(arch: Sequence[LayerSpec], pad: SpatialPad | None = None) -> tuple:
    """Boolean masks (node_mask (n,), edge_mask (n, n, d_E)) of structurally allowed entries."""
    layers = graph_layers(arch)
    pad = pad or SpatialPad.for_arch(arch)
    sizes = block_sizes(arch)
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    n = offsets[-1]
    node = np.zeros(n, dtype=bool)
    edge = np.zeros((n, n, pad.size), dtype=bool)
    for b, (_, spec) in enumerate(layers, start=1):
        node[offsets[b]:offsets[b + 1]] = True
        if spec.kind == "affine_norm":
            idx = np.arange(spec.d_in)
            edge[offsets[b - 1] + idx, offsets[b] + idx, 0] = True
        elif spec.kind == "linear":
            edge[offsets[b - 1]:offsets[b], offsets[b]:offsets[b + 1], 0] = True
        else:
            grid = np.zeros((pad.h_max, pad.w_max), dtype=bool)
            grid[:spec.kernel[0], :spec.kernel[1]] = True
            edge[offsets[b - 1]:offsets[b], offsets[b]:offsets[b + 1], :] = grid.reshape(-1)
    return node, edge


def graph_to_weights(g: NeuralGraph, arch: Sequence[LayerSpec], pad: SpatialPad | None = None) -> dict:
    """Inverse of :func:`to_graph`; rejects graphs with entries outside the arch's pattern."""
    layers = graph_layers(arch)
    pad = pad or SpatialPad.for_arch(arch)
    sizes = block_sizes(arch)
    if g.n != sum(sizes) or g.d_E != pad.size:
        raise ValueError(f"graph has n={g.n}, d_E={g.d_E}; arch needs n={sum(sizes)}, d_E={pad.size}")
    node, edge = allowed_mask(arch, pad)
    if np.any(g.V[~node] != 0) or np.any(g.V[:, 1:] != 0):
        raise ValueError("graph has nonzero node features outside the allowed pattern")
    stray = np.argwhere((g.E != 0) & ~edge)
    if stray.size:
        i, j, f = stray[0]
        raise ValueError(f"graph has an edge outside the allowed blocks: {i}->{j} feature {f}")
    off = g.layer_offsets
    params = {}
    for b, (i, spec) in enumerate(layers, start=1):
        src = slice(off[b - 1], off[b])
        dst = slice(off[b], off[b + 1])
        if spec.kind == "linear":
            params[f"{i}.weight"] = g.E[src, dst, 0].T.copy()
            params[f"{i}.bias"] = g.V[dst, 0].copy()
        elif spec.kind == "conv2d":
            k = g.E[src, dst, :].transpose(1, 0, 2).reshape(spec.d_out, spec.d_in, pad.h_max, pad.w_max)
            params[f"{i}.weight"] = k[:, :, :spec.kernel[0], :spec.kernel[1]].copy()
            params[f"{i}.bias"] = g.V[dst, 0].copy()
        else:
            idx = np.arange(spec.d_in)
            params[f"{i}.scale"] = g.E[off[b - 1] + idx, off[b] + idx, 0].copy()
            params[f"{i}.shift"] = g.V[dst, 0].copy()
    return params


def permute_hidden(arch: Sequence[LayerSpec], params: Mapping, block: int, perm) -> dict:
    """Relabel the neurons of hidden node block ``block`` (1..L-1) by ``perm``.

    The producing layer's outputs are permuted; affine_norm layers that follow
    carry the permutation on to their own block; the next linear/conv layer
    permutes its inputs. The network function is unchanged.
    """
    layers = graph_layers(arch)
    if not 1 <= block < len(layers):
        raise ValueError(f"block {block} is not a hidden layer (valid: 1..{len(layers) - 1})")
    perm = np.asarray(perm)
    width = layers[block - 1][1].d_out
    if sorted(perm.tolist()) != list(range(width)):
        raise ValueError(f"perm is not a permutation of {width} units")
    out = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    i, spec = layers[block - 1]
    if spec.kind == "affine_norm":
        raise ValueError("permute_hidden must start at a linear or conv block")
    out[f"{i}.weight"] = out[f"{i}.weight"][perm]
    out[f"{i}.bias"] = out[f"{i}.bias"][perm]
    for j, nxt in layers[block:]:
        if nxt.kind == "affine_norm":
            out[f"{j}.scale"] = out[f"{j}.scale"][perm]
            out[f"{j}.shift"] = out[f"{j}.shift"][perm]
            continue
        out[f"{j}.weight"] = out[f"{j}.weight"][:, perm]
        break
    else:
        raise ValueError("permutation reaches the output layer")
    return out


def norm_blocks_after(arch: Sequence[LayerSpec], block: int) -> list:
    """Block indices relabelled together with ``block`` by :func:`permute_hidden`."""
    layers = graph_layers(arch)
    out = [block]
    for b in range(block + 1, len(layers) + 1):
        if layers[b - 1][1].kind != "affine_norm":
            break
        out.append(b)
    return out
