import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from weightflow import nn
from weightflow.nn import tensor as T
from weightflow.nn.layers import LayerSpec


def rng(seed=0):
    return np.random.default_rng(seed)


class TestKaiming:
    def test_normal_std(self):
        spec = nn.linear(100, 50)
        draws = np.concatenate([nn.kaiming_init(spec, "normal", rng(s))["weight"].ravel() for s in range(20)])
        assert draws.size == 100_000
        assert abs(draws.std() / math.sqrt(2 / 100) - 1) < 0.02

    def test_uniform_bound(self):
        spec = nn.linear(100, 50)
        bound = math.sqrt(6 / 100)
        draws = np.concatenate([nn.kaiming_init(spec, "uniform", rng(s))["weight"].ravel() for s in range(20)])
        assert draws.min() >= -bound and draws.max() <= bound
        # and actually fills the interval
        assert draws.max() > 0.99 * bound

    @pytest.mark.parametrize("spec", [nn.linear(3, 4), nn.conv(2, 5, 3)])
    def test_bias_zero(self, spec):
        assert np.all(nn.kaiming_init(spec, "normal", rng())["bias"] == 0)

    def test_conv_fan_in(self):
        spec = nn.conv(4, 8, 3)
        w = np.concatenate([nn.kaiming_init(spec, "normal", rng(s))["weight"].ravel() for s in range(400)])
        assert abs(w.std() / math.sqrt(2 / 36) - 1) < 0.02

    def test_zero_fan_in(self):
        # LayerSpec refuses non-positive dims up front
        with pytest.raises(ValueError):
            nn.kaiming_init(LayerSpec("linear", 0, 3), "normal", rng())


class TestForward:
    def test_identity_affine_norm(self):
        x = rng().normal(size=(5, 3))
        arch = [nn.affine_norm(3)]
        out = nn.forward(arch, {"0.scale": np.ones(3), "0.shift": np.zeros(3)}, x)
        assert np.array_equal(out.data, x)

    def test_zero_linear(self):
        arch = [nn.linear(4, 2)]
        out = nn.forward(arch, {"0.weight": np.zeros((2, 4)), "0.bias": np.zeros(2)}, rng().normal(size=(3, 4)))
        assert np.array_equal(out.data, np.zeros((3, 2)))

    def test_identity_conv(self):
        x = rng().normal(size=(2, 1, 5, 5))
        arch = [nn.conv(1, 1, 1)]
        out = nn.forward(arch, {"0.weight": np.ones((1, 1, 1, 1)), "0.bias": np.zeros(1)}, x)
        assert np.array_equal(out.data, x)

    def test_conv_matches_direct_sum(self):
        r = rng(3)
        x = r.normal(size=(2, 2, 4, 5))
        w = r.normal(size=(3, 2, 3, 3))
        b = r.normal(size=3)
        out = T.conv2d(x, w, b).data
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        ref = np.zeros_like(out)
        for n in range(2):
            for o in range(3):
                for i in range(4):
                    for j in range(5):
                        ref[n, o, i, j] = np.sum(xp[n, :, i:i + 3, j:j + 3] * w[o]) + b[o]
        np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)

    def test_shape_mismatch(self):
        arch = [nn.linear(4, 2)]
        params = nn.init_params(arch, rng())
        with pytest.raises(ValueError):
            nn.forward(arch, params, np.zeros((3, 5)))

    def test_non_finite(self):
        arch = [nn.linear(2, 2)]
        params = {"0.weight": np.array([[1e308, 1e308], [0, 0]]), "0.bias": np.zeros(2)}
        with pytest.raises(nn.NonFiniteError):
            nn.forward(arch, params, np.array([[1e10, 1e10]]))

    def test_deterministic(self):
        arch = nn.mlp_arch(6, [5], 3, flatten=False)
        params = nn.init_params(arch, rng(1))
        x = rng(2).normal(size=(7, 6))
        a = nn.forward(arch, params, x).data
        b = nn.forward(arch, params, x).data
        assert a.tobytes() == b.tobytes()

    def test_affine_norm_equals_diag_linear(self):
        r = rng(4)
        for _ in range(20):
            d = int(r.integers(1, 8))
            m, b = r.normal(size=d), r.normal(size=d)
            x = r.normal(size=(10, d))
            y_norm = nn.forward([nn.affine_norm(d)], {"0.scale": m, "0.shift": b}, x).data
            y_lin = nn.forward([nn.linear(d, d)], {"0.weight": np.diag(m), "0.bias": b}, x).data
            assert np.max(np.abs(y_norm - y_lin)) < 1e-12

    def test_argmax_tie_lowest_index(self):
        arch = [nn.linear(2, 3)]
        params = {"0.weight": np.zeros((3, 2)), "0.bias": np.zeros(3)}
        assert np.all(nn.predict(arch, params, rng().normal(size=(4, 2))) == 0)


class TestCrossEntropy:
    def test_uniform(self):
        assert T.cross_entropy(np.zeros((3, 4)), [0, 1, 3]).item() == pytest.approx(math.log(4), abs=1e-15)

    def test_margin_limit(self):
        losses = [T.cross_entropy(np.array([[m, 0.0, 0.0]]), [0]).item() for m in (1, 10, 50)]
        assert losses[0] > losses[1] > losses[2] and losses[2] < 1e-20

    def test_batch_mean_against_hand_rolled(self):
        logits = np.array([[1.0, 2.0, -0.5], [0.3, -1.2, 2.2]])
        labels = [2, 0]

        def one(row, y):
            z = sum(math.exp(v) for v in row)
            return -math.log(math.exp(row[y]) / z)

        expected = (one(logits[0], 2) + one(logits[1], 0)) / 2
        assert T.cross_entropy(logits, labels).item() == pytest.approx(expected, rel=1e-14)

    def test_errors(self):
        with pytest.raises(ValueError):
            T.cross_entropy(np.zeros((0, 3)), [])
        with pytest.raises(ValueError):
            T.cross_entropy(np.zeros((1, 3)), [3])


class TestBackward:
    def test_square(self):
        x = T.Tensor(3.0, requires_grad=True)
        T.mul(x, x).backward()
        assert x.grad == 6.0

    def test_inactive_relu(self):
        x = T.Tensor([-1.0, 2.0, -3.0], requires_grad=True)
        T.tsum(T.relu(x)).backward()
        assert np.array_equal(x.grad, [0.0, 1.0, 0.0])

    def test_twice_raises(self):
        x = T.Tensor(2.0, requires_grad=True)
        y = T.mul(x, x)
        y.backward()
        with pytest.raises(RuntimeError):
            y.backward()

    def test_off_path_leaf_zero(self):
        a = T.Tensor([1.0, 2.0], requires_grad=True)
        b = T.Tensor([3.0], requires_grad=True)
        a.zero_grad()
        b.zero_grad()
        T.tsum(T.square(a)).backward()
        assert np.array_equal(b.grad, [0.0])

    def test_three_layer_mlp_fd(self):
        r = rng(11)
        arch = nn.mlp_arch(5, [6, 4], 3, flatten=False)
        params = nn.init_params(arch, r)
        # non-zero biases keep pre-activations off the ReLU kink
        params = {k: v + r.normal(scale=0.1, size=v.shape) for k, v in params.items()}
        x, y = r.normal(size=(8, 5)), r.integers(0, 3, size=8)
        assert nn.grad_check(arch, params, x, y, h=1e-5, tol=1e-4).passed

    def test_fanout_accumulates(self):
        x = T.Tensor(np.array([1.5, -2.0]), requires_grad=True)
        y = T.tsum(T.add(T.mul(x, x), T.mul(x, 3.0)))
        y.backward()
        np.testing.assert_allclose(x.grad, 2 * x.data + 3)

    @pytest.mark.parametrize(
        "op",
        [
            lambda a: T.silu(a),
            lambda a: T.tanh(a),
            lambda a: T.sigmoid(a),
            lambda a: T.exp(T.mul(a, 0.3)),
            lambda a: T.log(T.add(T.square(a), 1.0)),
            lambda a: T.div(a, T.add(T.square(a), 2.0)),
            lambda a: T.log_softmax(a),
            lambda a: T.transpose(T.reshape(a, (2, 3)), (1, 0)),
            lambda a: T.concat([a[:, :1], T.mul(a[:, 1:], 2.0)], axis=1),
            lambda a: T.pad_to(a, 5),
            lambda a: T.tmean(a, axis=0, keepdims=True),
        ],
    )
    def test_elementwise_ops_fd(self, op):
        r = rng(5)
        base = r.normal(size=(2, 3))
        w = r.normal(size=op(T.Tensor(base)).shape)
        a = T.Tensor(base.copy(), requires_grad=True)
        T.tsum(T.mul(op(a), w)).backward()
        num = nn.numeric_grad(lambda: float(np.sum(op(T.Tensor(base)).data * w)), base, 1e-6)
        assert nn.rel_error(a.grad, num) < 1e-6


def _random_net(kind: str, r: np.random.Generator):
    if kind == "linear":
        arch = nn.mlp_arch(int(r.integers(2, 5)), [int(r.integers(2, 5))], 3, flatten=False)
        x = r.normal(size=(int(r.integers(1, 5)), arch[0].d_in))
    elif kind == "conv2d":
        c = int(r.integers(1, 3))
        k = int(r.integers(1, 4))
        arch = [nn.conv(c, 2, k), nn.RELU, nn.FLATTEN, nn.linear(2 * 9, 3)]
        x = r.normal(size=(2, c, 3, 3))
    else:  # affine_norm
        d = int(r.integers(2, 5))
        arch = [nn.linear(d, d), nn.affine_norm(d), nn.RELU, nn.linear(d, 3)]
        x = r.normal(size=(3, d))
    params = nn.init_params(arch, r)
    for name in params:  # non-trivial norm params and biases
        params[name] = params[name] + r.normal(scale=0.3, size=params[name].shape)
    y = r.integers(0, 3, size=x.shape[0])
    return arch, params, x, y


@pytest.mark.parametrize("kind", ["linear", "conv2d", "affine_norm"])
@settings(max_examples=100, deadline=None, derandomize=True)
@given(seed=st.integers(0, 2**31 - 1))
def test_layer_gradients_match_fd(kind, seed):
    arch, params, x, y = _random_net(kind, np.random.default_rng(seed))
    rep = nn.grad_check(arch, params, x, y, h=1e-5, tol=1e-4)
    assert rep.passed, rep.per_param


class TestGradCheck:
    def test_corrupted_fails(self):
        r = rng(2)
        arch = [nn.linear(3, 2)]
        params = nn.init_params(arch, r)
        x, y = r.normal(size=(4, 3)), r.integers(0, 2, size=4)
        assert nn.grad_check(arch, params, x, y).passed
        bad = nn.grad_check(arch, params, x, y, corrupt=lambda n, g: g * 1.1 + 0.01)
        assert not bad.passed

    def test_dead_relu_zero_grads(self):
        arch = nn.mlp_arch(3, [4], 2, flatten=False)
        params = {k: np.zeros_like(v) for k, v in nn.init_params(arch, rng()).items()}
        leaves = {k: T.Tensor(v, requires_grad=True) for k, v in params.items()}
        for leaf in leaves.values():
            leaf.zero_grad()
        T.cross_entropy(nn.forward(arch, leaves, np.zeros((2, 3))), [0, 1]).backward()
        # first layer feeds only dead ReLUs; so does the second layer's weight
        assert np.all(leaves["0.weight"].grad == 0)
        assert np.all(leaves["0.bias"].grad == 0)
        assert np.all(leaves["2.weight"].grad == 0)
        rep = nn.grad_check(arch, params, np.zeros((2, 3)), [0, 1])
        assert rep.per_param["0.weight"] == 0.0

    def test_bad_h(self):
        with pytest.raises(ValueError):
            nn.grad_check([nn.linear(1, 2)], {"0.weight": np.zeros((2, 1)), "0.bias": np.zeros(2)}, np.zeros((1, 1)), [0], h=0)


class TestOptim:
    def test_sgd(self):
        p = T.Tensor([1.0], requires_grad=True)
        p.grad = np.array([1.0])
        nn.SGD([p], lr=0.1).step()
        assert p.data[0] == pytest.approx(0.9)

    def test_adamw_zero_grad_identity(self):
        p = T.Tensor([1.0, -2.0], requires_grad=True)
        p.zero_grad()
        before = p.data.copy()
        opt = nn.AdamW([p], lr=0.1, weight_decay=0.0)
        for _ in range(3):
            opt.step()
        assert np.array_equal(p.data, before)

    def test_sgd_zero_grad_identity(self):
        p = T.Tensor([1.0, -2.0], requires_grad=True)
        p.zero_grad()
        nn.SGD([p], lr=0.5).step()
        assert np.array_equal(p.data, [1.0, -2.0])

    def test_adamw_single_step_magnitude(self):
        # bias correction makes the first step lr * g / (|g| + eps)
        g = np.array([0.3, -5.0, 2e-3])
        p = T.Tensor(np.zeros(3), requires_grad=True)
        p.grad = g
        opt = nn.AdamW([p], lr=1e-2)
        opt.step()
        expected = -1e-2 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(p.data, expected, rtol=1e-12)
        assert np.allclose(np.abs(p.data), 1e-2, rtol=1e-5)

    def test_adamw_decoupled_decay(self):
        p = T.Tensor([2.0], requires_grad=True)
        p.zero_grad()
        nn.AdamW([p], lr=0.1, weight_decay=0.5).step()
        assert p.data[0] == pytest.approx(2.0 * (1 - 0.05))

    def test_nonfinite_grad(self):
        p = T.Tensor([1.0], requires_grad=True)
        p.grad = np.array([np.nan])
        with pytest.raises(nn.NonFiniteError):
            nn.SGD([p], lr=0.1).step()

    def test_cosine(self):
        assert nn.cosine_anneal(1.0, 0.1, 0, 10) == 1.0
        assert nn.cosine_anneal(1.0, 0.1, 10, 10) == pytest.approx(0.1)
        assert nn.cosine_anneal(1.0, 0.0, 5, 10) == pytest.approx(0.5)
        with pytest.raises(ValueError):
            nn.cosine_anneal(1.0, 0.0, 0, 0)
