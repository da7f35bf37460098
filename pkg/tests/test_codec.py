import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from weightflow import nn
from weightflow.codec import (
    BETA_FEWSHOT,
    BETA_RETRIEVAL,
    FlatCode,
    VaeConfig,
    VaeModel,
    VaeTrainConfig,
    WeightSpace,
    chunk,
    devectorize,
    kl_to_standard,
    load_codec,
    make_codec,
    reconstruct,
    save_codec,
    train_vae,
    unchunk,
    vae_decode,
    vae_encode,
    vae_loss_terms,
    vectorize,
)
from weightflow.nn.tensor import NonFiniteError
from weightflow.rng import derive
from weightflow.zoo import evaluate


def random_arch(r: np.random.Generator) -> list:
    depth = int(r.integers(1, 4))
    dims = [int(d) for d in r.integers(1, 7, size=depth + 1)]
    arch = []
    for i, (a, b) in enumerate(zip(dims, dims[1:])):
        if r.random() < 0.3:
            arch.append(nn.affine_norm(a))
        arch.append(nn.linear(a, b))
        if i < depth - 1:
            arch.append(nn.RELU)
    return arch


def random_params(arch, r):
    out = {}
    for name, shape in nn.param_layout(arch):
        out[name] = r.normal(size=shape)
    return out


class TestVectorize:
    def test_row_major_layer_order(self):
        arch = [nn.linear(2, 2)]
        params = {"0.weight": np.array([[1.0, 2.0], [3.0, 4.0]]), "0.bias": np.array([5.0, 6.0])}
        assert vectorize(params, arch, 6).vector.tolist() == [1, 2, 3, 4, 5, 6]

    def test_all_zero(self):
        arch = [nn.linear(2, 3)]
        code = vectorize({"0.weight": np.zeros((3, 2)), "0.bias": np.zeros(3)}, arch, 9)
        assert code.vector.tolist() == [0.0] * 9

    def test_pad_to_max(self):
        small = [nn.linear(2, 1)]  # 3 params
        big = [nn.linear(2, 3)]  # 9 params
        assert nn.num_params(small) == 3
        d = max(nn.num_params(small), nn.num_params(big))
        a = vectorize(random_params(small, np.random.default_rng(0)), small, d)
        b = vectorize(random_params(big, np.random.default_rng(0)), big, d)
        assert a.vector.size == b.vector.size == 9
        assert a.pad_len == 6 and np.all(a.vector[3:] == 0)

    def test_d_too_small(self):
        with pytest.raises(ValueError):
            vectorize({"0.weight": np.zeros((3, 2)), "0.bias": np.zeros(3)}, [nn.linear(2, 3)], 8)

    def test_nonzero_pad_is_ignored_and_logged(self, caplog):
        arch = [nn.linear(1, 1)]
        code = vectorize({"0.weight": np.array([[2.0]]), "0.bias": np.array([3.0])}, arch, 5)
        code.vector[2:] = [7.0, 0.0, 8.0]
        with caplog.at_level(logging.WARNING, logger="weightflow.codec.flat"):
            params = devectorize(code)
        assert params["0.weight"].tolist() == [[2.0]] and params["0.bias"].tolist() == [3.0]
        assert "ignored 2 nonzero padding entries" in caplog.text

    def test_empty_layout(self):
        with pytest.raises(ValueError):
            devectorize(FlatCode(np.zeros(0), [], 0))

    def test_layout_length_mismatch(self):
        code = vectorize({"0.weight": np.zeros((1, 1)), "0.bias": np.zeros(1)}, [nn.linear(1, 1)], 3)
        with pytest.raises(ValueError):
            FlatCode(np.zeros(4), code.layout, 1)

    @settings(max_examples=100, deadline=None, derandomize=True)
    @given(seed=st.integers(0, 2**32 - 1), extra=st.integers(0, 20))
    def test_property_round_trip(self, seed, extra):
        r = np.random.default_rng(seed)
        arch = random_arch(r)
        params = random_params(arch, r)
        code = vectorize(params, arch, nn.num_params(arch) + extra)
        back = devectorize(code)
        assert set(back) == set(params)
        for k in params:
            assert np.array_equal(back[k], params[k])


class TestChunk:
    def test_arithmetic(self):
        code = FlatCode(np.arange(1.0, 11.0), [], 10)
        cc = chunk(code, 4)
        assert cc.chunks.shape == (3, 4)
        assert cc.chunks[-1].tolist() == [9.0, 10.0, 0.0, 0.0]

    def test_single_chunk(self):
        code = FlatCode(np.arange(5.0), [], 5)
        assert chunk(code, 5).chunks.shape == (1, 5)
        assert chunk(code, 50).chunks.shape == (1, 50)

    def test_bad_size(self):
        with pytest.raises(ValueError):
            chunk(FlatCode(np.arange(5.0), [], 5), 0)

    @settings(max_examples=100, deadline=None, derandomize=True)
    @given(seed=st.integers(0, 2**32 - 1), size=st.integers(1, 40))
    def test_property_round_trip(self, seed, size):
        r = np.random.default_rng(seed)
        arch = random_arch(r)
        code = vectorize(random_params(arch, r), arch, nn.num_params(arch) + int(r.integers(0, 5)))
        cc = chunk(code, size)
        assert cc.chunks.shape[0] * size >= code.vector.size > (cc.chunks.shape[0] - 1) * size
        back = unchunk(cc)
        assert np.array_equal(back.vector, code.vector)
        assert back.pad_len == code.pad_len


def tiny_vae(d=12, **kw):
    cfg = VaeConfig(latent_dim=kw.pop("latent_dim", 4), hidden=kw.pop("hidden", (32,)), **kw)
    return VaeModel(d, cfg, derive(0, "tiny"))


class TestVaeModes:
    def test_defaults(self):
        cfg = VaeConfig()
        assert (cfg.sigma_in, cfg.sigma_lat, cfg.beta, cfg.latent_dim) == (0.001, 0.5, 0.01, 64)
        assert BETA_RETRIEVAL == 1e-2 and BETA_FEWSHOT == 1e-6

    def test_eval_encode_deterministic(self):
        m = tiny_vae(sigma_in=0.0)
        w = np.random.default_rng(1).normal(size=12)
        a = vae_encode(m, w, derive(1))[2].data
        b = vae_encode(m, w, derive(2))[2].data
        assert np.array_equal(a, b)

    def test_train_mode_reparameterization(self):
        m = tiny_vae(sigma_in=0.0)
        w = np.random.default_rng(1).normal(size=12)
        m1, _, z1 = vae_encode(m, w, derive(1), train_mode=True)
        m2, _, z2 = vae_encode(m, w, derive(2), train_mode=True)
        assert np.array_equal(m1.data, m2.data)
        assert not np.array_equal(z1.data, z2.data)

    def test_input_noise_changes_mean(self):
        m = tiny_vae()
        w = np.random.default_rng(1).normal(size=12)
        m1 = vae_encode(m, w, derive(1), train_mode=True)[0].data
        m2 = vae_encode(m, w, derive(2), train_mode=True)[0].data
        assert not np.array_equal(m1, m2)
        assert np.max(np.abs(m1 - m2)) < 0.05

    def test_eval_decode_deterministic(self):
        m = tiny_vae()
        z = np.ones(4)
        assert np.array_equal(vae_decode(m, z, derive(1)).data, vae_decode(m, z, derive(2)).data)
        assert not np.array_equal(vae_decode(m, z, derive(1), True).data, vae_decode(m, z, derive(2), True).data)

    def test_non_finite(self):
        m = tiny_vae()
        with pytest.raises(NonFiniteError):
            vae_encode(m, np.full(12, np.nan))
        with pytest.raises(NonFiniteError):
            vae_decode(m, np.full(4, np.inf))

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            vae_encode(tiny_vae(), np.zeros(11))


class TestVaeLoss:
    def test_kl_zero_at_prior(self):
        kl = kl_to_standard(nn.Tensor(np.zeros((3, 5))), nn.Tensor(np.zeros((3, 5))))
        assert np.array_equal(kl.data, np.zeros(3))

    @pytest.mark.parametrize("seed", range(5))
    def test_kl_matches_monte_carlo(self, seed):
        r = np.random.default_rng(seed)
        mu = r.normal(size=6)
        logvar = r.normal(scale=0.5, size=6)
        closed = kl_to_standard(nn.Tensor(mu[None]), nn.Tensor(logvar[None])).item()
        sd = np.exp(0.5 * logvar)
        z = mu + sd * r.standard_normal((10_000, 6))
        log_q = -0.5 * (((z - mu) / sd) ** 2 + logvar + np.log(2 * np.pi)).sum(1)
        log_p = -0.5 * (z ** 2 + np.log(2 * np.pi)).sum(1)
        samples = log_q - log_p
        se = samples.std(ddof=1) / np.sqrt(samples.size)
        assert abs(samples.mean() - closed) < 3 * se

    def test_perfect_reconstruction_beta_zero(self):
        m = tiny_vae(d=3, latent_dim=2, sigma_in=0.0, sigma_lat=0.0, beta=0.0)
        # zero decoder weights: output is the decoder's last bias
        for layer in m.decoder.layers:
            layer.weight.data[:] = 0.0
        w = np.array([[0.5, -1.0, 2.0]])
        m.decoder.layers[-1].bias.data = w[0].copy()
        total, recon, _ = vae_loss_terms(m, w, derive(0))
        assert total.item() == 0.0 and recon.item() == 0.0

    def test_loss_parts(self):
        m = tiny_vae(beta=0.3)
        w = np.random.default_rng(0).normal(size=(4, 12))
        total, recon, kl = vae_loss_terms(m, w, derive(5))
        assert total.item() == pytest.approx(recon.item() + 0.3 * kl.item(), rel=1e-12)


class TestVaeTraining:
    def test_single_code_overfit(self):
        w = np.random.default_rng(3).normal(scale=0.2, size=(1, 300))
        m = VaeModel(300, VaeConfig(latent_dim=64, hidden=(128,)), derive(0, "one"))
        curve = train_vae(m, w, VaeTrainConfig(steps=2000, batch_size=1, lr=1e-2), derive(1, "one"))
        assert np.mean((reconstruct(m, w) - w) ** 2) < 1e-4
        # smoothed curve decreases block by block
        blocks = np.array(curve.recon).reshape(10, -1).mean(1)
        assert np.all(np.diff(blocks[:6]) < 0)
        assert blocks[-1] < blocks[0] * 0.1

    def test_large_beta_collapses_posterior(self):
        r = np.random.default_rng(4)
        w = r.normal(size=(16, 12))
        m = VaeModel(12, VaeConfig(latent_dim=4, hidden=(32,), beta=1e3), derive(0, "collapse"))
        train_vae(m, w, VaeTrainConfig(steps=1500, batch_size=16, lr=3e-3), derive(1))
        mean, logvar, _ = vae_encode(m, w)
        kl_per_dim = kl_to_standard(mean, logvar).data.mean() / 4
        assert kl_per_dim < 1e-2

    def test_zoo_decoded_accuracy(self, zoo_vae, zoo50, sinusoid_ds, base_arch):
        codec, _ = zoo_vae
        space = codec.space
        decoded = codec.decode_params(codec.encode(space.to_vectors(zoo50)))
        orig = np.mean([r.meta["val_acc"] for r in zoo50])
        recon = np.mean([evaluate(base_arch, p, sinusoid_ds) for p in decoded])
        assert orig - recon < 0.02


class TestCodecs:
    def test_flat_identity(self, zoo50, base_arch):
        space = WeightSpace.for_arch(base_arch, 1200)
        codec = make_codec("flat", space, derive(0))
        v = space.to_vectors(zoo50[:3])
        assert codec.code_dim == 1200
        assert np.array_equal(codec.decode(codec.encode(v)), v)
        back = codec.decode_params(codec.encode(v))
        assert np.array_equal(back[1]["3.bias"], zoo50[1].params["3.bias"])

    def test_chunk_codec_shapes(self, base_arch):
        space = WeightSpace.for_arch(base_arch)
        codec = make_codec("chunk", space, derive(0), VaeConfig(latent_dim=8, hidden=(32,)), chunk_size=256)
        assert codec.n_chunks == 5 and codec.code_dim == 40
        v = np.random.default_rng(0).normal(size=(2, space.d))
        codes = codec.encode(v)
        assert codes.shape == (2, 40)
        assert codec.decode(codes).shape == (2, space.d)

    def test_chunk_codec_matches_per_chunk_vae(self, base_arch):
        space = WeightSpace.for_arch(base_arch)
        codec = make_codec("chunk", space, derive(0), VaeConfig(latent_dim=8, hidden=(32,)), chunk_size=256)
        v = np.random.default_rng(0).normal(size=(1, space.d))
        cc = chunk(vectorize(space.to_params(v)[0], base_arch), 256)
        z = vae_encode(codec.model, cc.chunks)[2].data
        assert np.array_equal(codec.encode(v)[0], z.reshape(-1))

    @pytest.mark.parametrize("kind", ["flat", "vae", "chunk"])
    def test_save_load(self, kind, tmp_path, base_arch):
        space = WeightSpace.for_arch(base_arch)
        codec = make_codec(kind, space, derive(0), VaeConfig(latent_dim=8, hidden=(16,)), chunk_size=300)
        save_codec(codec, tmp_path / "c.wck")
        back = load_codec(tmp_path / "c.wck")
        assert back.kind == kind and back.code_dim == codec.code_dim
        v = np.random.default_rng(0).normal(size=(2, space.d))
        np.testing.assert_allclose(back.decode(back.encode(v)), codec.decode(codec.encode(v)), atol=1e-4)

    def test_unknown_kind(self, base_arch):
        with pytest.raises(ValueError):
            make_codec("jpeg", WeightSpace.for_arch(base_arch), derive(0))
