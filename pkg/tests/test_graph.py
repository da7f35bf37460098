import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from weightflow import nn
from weightflow.codec import WeightSpace, load_codec, make_codec, save_codec
from weightflow.graph import (
    GnnConfig,
    GnnEncoder,
    SpatialPad,
    allowed_mask,
    conv_to_graph,
    gnn_encode,
    graph_to_weights,
    mlp_to_graph,
    norm_blocks_after,
    norm_to_graph,
    permute_hidden,
    to_graph,
)
from weightflow.rng import derive


def mlp(dims):
    return nn.mlp_arch(dims[0], dims[1:-1], dims[-1], flatten=False)


def rand_params(arch, r, scale=1.0):
    return {name: r.normal(scale=scale, size=shape) for name, shape in nn.param_layout(arch)}


def encoder_for(arch, seed=0, rounds=2):
    sizes = [s.d_in for s in arch if s.kind == "linear"][:1] + [s.d_out for s in arch if s.kind in ("linear", "affine_norm")]
    return GnnEncoder(sizes[0], sizes[-1], 1, 1, GnnConfig(hidden=8, rounds=rounds), derive(seed, "gnn"))


class TestMlpToGraph:
    def test_node_count(self):
        g = mlp_to_graph(mlp([2, 3, 2]), rand_params(mlp([2, 3, 2]), np.random.default_rng(0)))
        assert g.n == 7 and g.d_V == 1 and g.d_E == 1
        assert g.layer_offsets == [0, 2, 5, 7]

    def test_all_zero(self):
        arch = mlp([2, 3, 2])
        g = mlp_to_graph(arch, {k: np.zeros(s) for k, s in nn.param_layout(arch)})
        assert not g.V.any() and not g.E.any()
        # sparsity pattern is a property of the arch, not the values
        _, edge = allowed_mask(arch)
        assert edge.sum() == 2 * 3 + 3 * 2

    def test_single_edge(self):
        g = mlp_to_graph([nn.linear(1, 1)], {"0.weight": np.array([[5.0]]), "0.bias": np.array([7.0])})
        assert g.E[0, 1, 0] == 5.0 and np.count_nonzero(g.E) == 1
        assert g.V[:, 0].tolist() == [0.0, 7.0]

    def test_edge_direction(self):
        arch = [nn.linear(2, 3)]
        w = np.arange(6.0).reshape(3, 2) + 1
        g = mlp_to_graph(arch, {"0.weight": w, "0.bias": np.zeros(3)})
        for i, j in itertools.product(range(3), range(2)):
            assert g.E[j, 2 + i, 0] == w[i, j]

    def test_rejects_non_mlp(self):
        arch = [nn.conv(1, 2, 3)]
        with pytest.raises(ValueError):
            mlp_to_graph(arch, rand_params(arch, np.random.default_rng(0)))

    @settings(max_examples=100, deadline=None, derandomize=True)
    @given(dims=st.lists(st.integers(1, 6), min_size=2, max_size=5), seed=st.integers(0, 2**31))
    def test_property_round_trip_and_count(self, dims, seed):
        arch = mlp(dims)
        params = rand_params(arch, np.random.default_rng(seed))
        g = mlp_to_graph(arch, params)
        assert g.n == sum(dims)
        back = graph_to_weights(g, arch)
        for k in params:
            assert np.array_equal(back[k], params[k])
        nz = np.argwhere(g.E != 0)
        assert len(nz) == sum(a * b for a, b in zip(dims, dims[1:]))
        _, edge = allowed_mask(arch)
        assert edge[tuple(nz.T)].all()

    def test_stray_edge(self):
        arch = mlp([2, 3, 2])
        g = mlp_to_graph(arch, rand_params(arch, np.random.default_rng(0)))
        g.E[0, 6, 0] = 1.0  # input straight to output skips a layer
        with pytest.raises(ValueError, match="outside the allowed blocks"):
            graph_to_weights(g, arch)

    def test_input_node_feature_rejected(self):
        arch = mlp([2, 2])
        g = mlp_to_graph(arch, rand_params(arch, np.random.default_rng(0)))
        g.V[0, 0] = 1.0
        with pytest.raises(ValueError):
            graph_to_weights(g, arch)

    def test_json_dump_nonzero_only(self):
        arch = [nn.linear(2, 2)]
        g = mlp_to_graph(arch, {"0.weight": np.array([[1.0, 0.0], [0.0, 2.0]]), "0.bias": np.zeros(2)})
        d = json.loads(g.to_json())
        assert d["n"] == 4 and d["d_E"] == 1
        assert sorted((e["i"], e["j"], e["feat"][0]) for e in d["edges"]) == [(0, 2, 1.0), (1, 3, 2.0)]


class TestNormToGraph:
    def test_fragment(self):
        g = norm_to_graph([2.0, 3.0], [4.0, 5.0])
        assert g.n == 4
        assert g.V[:, 0].tolist() == [0.0, 0.0, 4.0, 5.0]
        assert g.E[0, 2, 0] == 2.0 and g.E[1, 3, 0] == 3.0
        off = g.E.copy()
        off[0, 2, 0] = off[1, 3, 0] = 0.0
        assert np.all(off == 0.0)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            norm_to_graph([1.0, 2.0], [1.0])

    def test_identity_norm_keeps_function(self):
        arch = [nn.linear(3, 2), nn.affine_norm(2)]
        r = np.random.default_rng(0)
        params = {"0.weight": r.normal(size=(2, 3)), "0.bias": r.normal(size=2),
                  "1.scale": np.ones(2), "1.shift": np.zeros(2)}
        back = graph_to_weights(to_graph(arch, params), arch)
        x = r.normal(size=(10, 3))
        assert np.array_equal(nn.forward(arch, back, x).data, nn.forward([arch[0]], params, x).data)

    def test_round_trip_mixed(self):
        arch = [nn.linear(3, 4), nn.affine_norm(4), nn.RELU, nn.linear(4, 2)]
        params = rand_params(arch, np.random.default_rng(1))
        back = graph_to_weights(to_graph(arch, params), arch)
        assert all(np.array_equal(back[k], params[k]) for k in params)

    def test_diag_stray_rejected(self):
        arch = [nn.affine_norm(2)]
        g = to_graph(arch, {"0.scale": np.ones(2), "0.shift": np.zeros(2)})
        g.E[0, 3, 0] = 0.5
        with pytest.raises(ValueError):
            graph_to_weights(g, arch)


class TestConvToGraph:
    def test_three_by_three(self):
        arch = [nn.conv(1, 1, 3)]
        k = np.arange(9.0).reshape(1, 1, 3, 3) + 1
        g = conv_to_graph(arch, {"0.weight": k, "0.bias": np.zeros(1)}, SpatialPad(3, 3))
        assert g.d_E == 9
        assert g.E[0, 1].tolist() == list(range(1, 10))

    def test_one_by_one_top_left(self):
        arch = [nn.conv(1, 1, 1)]
        g = conv_to_graph(arch, {"0.weight": np.full((1, 1, 1, 1), 2.5), "0.bias": np.zeros(1)}, SpatialPad(3, 3))
        assert g.E[0, 1].tolist() == [2.5] + [0.0] * 8

    def test_channel_counts(self):
        arch = [nn.conv(2, 4, 3)]
        params = rand_params(arch, np.random.default_rng(0))
        g = conv_to_graph(arch, params, SpatialPad(3, 3))
        assert g.n == 6
        brute = sum(1 for i in range(g.n) for j in range(g.n) if np.any(g.E[i, j] != 0))
        assert brute == 8 == 2 * 4

    def test_round_trip_with_padding(self):
        arch = [nn.conv(2, 3, 1), nn.RELU, nn.conv(3, 2, 3)]
        params = rand_params(arch, np.random.default_rng(2))
        pad = SpatialPad.for_arch(arch)
        g = conv_to_graph(arch, params, pad)
        assert g.d_E == 9
        back = graph_to_weights(g, arch, pad)
        assert all(np.array_equal(back[k], params[k]) for k in params)

    def test_kernel_exceeds_pad(self):
        arch = [nn.conv(1, 1, 5)]
        with pytest.raises(ValueError):
            conv_to_graph(arch, rand_params(arch, np.random.default_rng(0)), SpatialPad(3, 3))

    def test_padded_slot_nonzero_rejected(self):
        arch = [nn.conv(1, 1, 1)]
        g = conv_to_graph(arch, {"0.weight": np.ones((1, 1, 1, 1)), "0.bias": np.zeros(1)}, SpatialPad(3, 3))
        g.E[0, 1, 4] = 1.0
        with pytest.raises(ValueError):
            graph_to_weights(g, arch, SpatialPad(3, 3))

    def test_scalar_layers_padded_to_d_E(self):
        arch = [nn.conv(1, 2, 3), nn.RELU, nn.affine_norm(2)]
        params = rand_params(arch, np.random.default_rng(3))
        g = to_graph(arch, params)
        assert g.d_E == 9
        assert np.all(g.E[1, 3, 1:] == 0) and g.E[1, 3, 0] == params["2.scale"][0]


def relabel(g, arch, block, perm):
    """Oracle: explicitly relabel the nodes of ``block`` (and chained norm blocks)."""
    order = np.arange(g.n)
    for b in norm_blocks_after(arch, block):
        s = g.block(b)
        order[s] = order[s][perm]
    return g.V[order], g.E[np.ix_(order, order)]


class TestPermuteHidden:
    arch = mlp([5, 6, 4, 3])

    def test_identity(self):
        params = rand_params(self.arch, np.random.default_rng(0))
        out = permute_hidden(self.arch, params, 1, np.arange(6))
        assert all(np.array_equal(out[k], params[k]) for k in params)

    @pytest.mark.parametrize("block", [0, 3])
    def test_rejects_io(self, block):
        params = rand_params(self.arch, np.random.default_rng(0))
        with pytest.raises(ValueError):
            permute_hidden(self.arch, params, block, np.arange(3))

    def test_rejects_non_permutation(self):
        params = rand_params(self.arch, np.random.default_rng(0))
        with pytest.raises(ValueError):
            permute_hidden(self.arch, params, 1, np.array([0, 0, 1, 2, 3, 4]))

    @pytest.mark.parametrize("seed", range(10))
    def test_function_preserved(self, seed):
        r = np.random.default_rng(seed)
        params = rand_params(self.arch, r)
        block = int(r.integers(1, 3))
        perm = r.permutation([6, 4][block - 1])
        out = permute_hidden(self.arch, params, block, perm)
        x = r.normal(size=(100, 5))
        a = nn.forward(self.arch, params, x).data
        b = nn.forward(self.arch, out, x).data
        assert np.max(np.abs(a - b)) < 1e-10
        assert np.array_equal(a.argmax(1), b.argmax(1))

    @pytest.mark.parametrize("seed", range(10))
    def test_graph_is_relabelled(self, seed):
        r = np.random.default_rng(seed)
        params = rand_params(self.arch, r)
        perm = r.permutation(6)
        g = mlp_to_graph(self.arch, params)
        gp = mlp_to_graph(self.arch, permute_hidden(self.arch, params, 1, perm))
        V, E = relabel(g, self.arch, 1, perm)
        assert np.array_equal(gp.V, V) and np.array_equal(gp.E, E)

    def test_through_norm(self):
        arch = [nn.linear(3, 4), nn.affine_norm(4), nn.RELU, nn.linear(4, 2)]
        r = np.random.default_rng(5)
        params = rand_params(arch, r)
        perm = r.permutation(4)
        out = permute_hidden(arch, params, 1, perm)
        x = r.normal(size=(50, 3))
        assert np.max(np.abs(nn.forward(arch, params, x).data - nn.forward(arch, out, x).data)) < 1e-10
        V, E = relabel(to_graph(arch, params), arch, 1, perm)
        gp = to_graph(arch, out)
        assert np.array_equal(gp.V, V) and np.array_equal(gp.E, E)


class TestGnnEncode:
    arch = mlp([5, 6, 4, 3])

    def test_zero_graph_fixed(self):
        enc = encoder_for(self.arch)
        g = mlp_to_graph(self.arch, {k: np.zeros(s) for k, s in nn.param_layout(self.arch)})
        a = gnn_encode(g, enc)
        assert np.array_equal(a, gnn_encode(g, enc))
        # same as running every structural edge with all messages masked out
        from weightflow.graph.gnn import Structure
        _, edge = allowed_mask(self.arch)
        src, dst = np.nonzero(edge[..., 0])
        st_full = Structure(g.block_sizes, src, dst)
        b = enc(g.V[None], np.zeros((1, src.size, 1)), np.zeros((1, src.size, 1)), st_full).data[0]
        np.testing.assert_array_equal(a, b)
        assert a.shape == (4 * 8,)

    def test_permutation_invariance(self):
        r = np.random.default_rng(0)
        enc = encoder_for(self.arch)
        params = rand_params(self.arch, r)
        base = gnn_encode(mlp_to_graph(self.arch, params), enc)
        worst = 0.0
        for _ in range(60):
            block = int(r.integers(1, 3))
            perm = r.permutation([6, 4][block - 1])
            e = gnn_encode(mlp_to_graph(self.arch, permute_hidden(self.arch, params, block, perm)), enc)
            worst = max(worst, np.max(np.abs(e - base)))
        assert worst < 1e-8

    def test_non_degenerate(self):
        r = np.random.default_rng(1)
        enc = encoder_for(self.arch)
        names = [n for n, _ in nn.param_layout(self.arch)]
        for _ in range(100):
            params = rand_params(self.arch, r)
            other = {k: v.copy() for k, v in params.items()}
            name = names[r.integers(len(names))]
            idx = tuple(r.integers(0, s) for s in other[name].shape)
            other[name][idx] += 0.5
            a = gnn_encode(mlp_to_graph(self.arch, params), enc)
            b = gnn_encode(mlp_to_graph(self.arch, other), enc)
            assert np.max(np.abs(a - b)) > 1e-9

    def test_rounds_must_be_positive(self):
        with pytest.raises(ValueError):
            GnnEncoder(2, 2, 1, 1, GnnConfig(rounds=0), derive(0))


class TestGraphCodec:
    arch = nn.mlp_arch(8, [5], 3)

    def test_code_invariant_to_hidden_permutation(self):
        space = WeightSpace.for_arch(self.arch)
        codec = make_codec("graph", space, derive(0))
        r = np.random.default_rng(0)
        params = rand_params(self.arch, r)
        permuted = permute_hidden(self.arch, params, 1, r.permutation(5))
        from weightflow.codec import vectorize
        v = np.stack([vectorize(p, self.arch).vector for p in (params, permuted)])
        codes = codec.encode(v)
        assert codes.shape == (2, 64)
        assert np.max(np.abs(codes[0] - codes[1])) < 1e-8

    def test_fit_reduces_loss_and_round_trips(self, tmp_path):
        space = WeightSpace.for_arch(self.arch)
        from weightflow.codec import VaeConfig, VaeTrainConfig
        codec = make_codec("graph", space, derive(0), VaeConfig(latent_dim=8, hidden=(32,)))
        v = np.random.default_rng(1).normal(scale=0.3, size=(6, space.d))
        curve = codec.fit(v, derive(2), VaeTrainConfig(steps=150, batch_size=6, lr=3e-3))
        assert np.mean(curve.recon[-10:]) < np.mean(curve.recon[:10])
        save_codec(codec, tmp_path / "g.wck")
        back = load_codec(tmp_path / "g.wck")
        assert back.kind == "graph"
        np.testing.assert_allclose(back.encode(v), codec.encode(v), atol=1e-4)
