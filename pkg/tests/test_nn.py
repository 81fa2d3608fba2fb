import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from onebit_codec import nn


def scalar_forward(layers, x):
    """Loop-based reference evaluator for networks without batch norm."""
    out = []
    for row in x:
        a = list(row)
        for layer in layers:
            z = []
            for j in range(layer.n_out):
                s = layer.b[j, 0]
                for i in range(layer.n_in):
                    s += layer.W[j, i] * a[i]
                z.append(s)
            if layer.activation == "relu":
                a = [max(v, 0.0) for v in z]
            elif layer.activation == "softmax":
                m = max(z)
                e = [math.exp(v - m) for v in z]
                a = [v / sum(e) for v in e]
            elif layer.activation == "sign":
                a = [1.0 if v >= 0 else -1.0 for v in z]
            else:
                a = z
        out.append(a)
    return np.array(out)


class TestForward:
    def test_identity_network(self):
        layer = nn.Dense(3, 3, "linear", rng=0)
        layer.W[...] = np.eye(3)
        layer.b[...] = 0.0
        x = np.array([[1.0, -2.0, 0.5]])
        out, _ = nn.Network([layer]).forward(x)
        np.testing.assert_array_equal(out, x)

    def test_relu_values(self):
        np.testing.assert_array_equal(nn.relu(np.array([-2.0, 0.0, 3.0])), [0.0, 0.0, 3.0])

    def test_two_layer_matches_scalar_loop(self):
        rng = np.random.default_rng(7)
        layers = [nn.Dense(5, 6, "relu", rng=rng, bias_std=0.3),
                  nn.Dense(6, 4, "softmax", rng=rng, bias_std=0.3)]
        x = rng.standard_normal((9, 5))
        out, _ = nn.Network(layers).forward(x)
        np.testing.assert_allclose(out, scalar_forward(layers, x), rtol=1e-12, atol=1e-14)

    def test_shape_mismatch(self):
        net = nn.Network([nn.Dense(3, 2, rng=0)])
        with pytest.raises(nn.ShapeError):
            net.forward(np.zeros((2, 4)))

    def test_non_finite_input(self):
        net = nn.Network([nn.Dense(2, 2, rng=0)])
        with pytest.raises(nn.NonFiniteError):
            net.forward(np.array([[np.nan, 0.0]]))

    def test_layers_must_chain(self):
        with pytest.raises(nn.ShapeError):
            nn.Network([nn.Dense(2, 3, rng=0), nn.Dense(4, 1, rng=0)])

    def test_sign_tie_break(self):
        np.testing.assert_array_equal(nn.sign(np.array([0.0, -0.1, 2.0])), [1.0, -1.0, 1.0])

    def test_eval_mode_uses_running_stats(self):
        layer = nn.Dense(2, 2, "linear", batch_norm=True, rng=0)
        layer.bn.running_mean[:] = [1.0, -1.0]
        layer.bn.running_var[:] = [4.0, 4.0]
        layer.W[...] = np.eye(2)
        out = nn.Network([layer]).predict(np.array([[3.0, 1.0]]))
        np.testing.assert_allclose(out, [[2.0 / math.sqrt(4 + 1e-5)] * 2])


class TestLosses:
    def test_cross_entropy_uniform(self):
        p = np.full((3, 16), 1.0 / 16)
        t = nn.onehot([0, 5, 15], 16)
        assert nn.loss_cross_entropy(p, t) == pytest.approx(math.log(16))

    def test_cross_entropy_perfect(self):
        assert nn.loss_cross_entropy(np.eye(4), np.eye(4)) == 0.0

    def test_cross_entropy_value(self):
        p = np.array([[0.7, 0.2, 0.1]])
        assert nn.loss_cross_entropy(p, nn.onehot([0], 3)) == pytest.approx(-math.log(0.7))

    def test_cross_entropy_floor(self):
        p = np.array([[0.0, 1.0]])
        assert nn.loss_cross_entropy(p, nn.onehot([0], 2)) == pytest.approx(-math.log(1e-12))

    def test_mse_values(self):
        assert nn.loss_mse([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert nn.loss_mse([[1.0, 1.0]], [[-1.0, -1.0]]) == 4.0

    def test_mse_matches_scalar_loop(self):
        rng = np.random.default_rng(3)
        a, b = rng.standard_normal((2, 7, 5))
        ref = sum((a[i, j] - b[i, j]) ** 2 for i in range(7) for j in range(5)) / 35
        assert nn.loss_mse(a, b) == pytest.approx(ref, rel=1e-13)

    def test_mse_shape_mismatch(self):
        with pytest.raises(nn.ShapeError):
            nn.loss_mse(np.zeros(3), np.zeros(4))


class TestBackward:
    def test_linear_closed_form(self):
        rng = np.random.default_rng(1)
        net = nn.Network([nn.Dense(4, 3, rng=rng, bias_std=0.5)])
        x = rng.standard_normal((6, 4))
        y = rng.standard_normal((6, 3))
        out, cache = net.forward(x)
        grads, _ = net.backward(cache, nn.mse_grad(out, y))
        expected = 2.0 * (out - y).T @ x / out.size
        np.testing.assert_allclose(grads[0]["W"], expected, rtol=1e-12)

    def test_softmax_cross_entropy_output_gradient(self):
        rng = np.random.default_rng(2)
        net = nn.Network([nn.Dense(3, 5, "softmax", rng=rng)])
        x = rng.standard_normal((4, 3))
        t = nn.onehot([0, 1, 4, 2], 5)
        out, cache = net.forward(x)
        dz = nn._activation_backward("softmax", nn.cross_entropy_grad(out, t),
                                     cache.layer_caches[0]["z"], out, None)
        np.testing.assert_allclose(dz, (out - t) / 4, atol=1e-12)

    @pytest.mark.parametrize("activation,bn", [("linear", False), ("relu", False),
                                               ("softmax", False), ("relu", True),
                                               ("linear", True)])
    def test_gradient_check(self, activation, bn):
        rng = np.random.default_rng(11)
        net = nn.Network([nn.Dense(5, 7, "relu", batch_norm=bn, rng=rng, bias_std=0.2),
                          nn.Dense(7, 4, activation, rng=rng, bias_std=0.2)])
        x = rng.standard_normal((12, 5))
        y = rng.standard_normal((12, 4))
        if activation == "softmax":
            t = nn.onehot(rng.integers(0, 4, 12), 4)
            err = nn.gradient_check(net, x, lambda p: nn.loss_cross_entropy(p, t),
                                    lambda p: nn.cross_entropy_grad(p, t))
        else:
            err = nn.gradient_check(net, x, lambda p: nn.loss_mse(p, y),
                                    lambda p: nn.mse_grad(p, y))
        assert err < 1e-5

    @settings(max_examples=15, deadline=None)
    @given(n_in=st.integers(1, 8), n_hidden=st.integers(1, 8), n_out=st.integers(1, 8),
           batch=st.integers(2, 8), seed=st.integers(0, 2**31))
    def test_gradient_check_random_shapes(self, n_in, n_hidden, n_out, batch, seed):
        rng = np.random.default_rng(seed)
        net = nn.Network([nn.Dense(n_in, n_hidden, "linear", rng=rng, bias_std=0.1),
                          nn.Dense(n_hidden, n_out, "linear", rng=rng, bias_std=0.1)])
        x = rng.standard_normal((batch, n_in))
        y = rng.standard_normal((batch, n_out))
        assert nn.gradient_check(net, x, lambda p: nn.loss_mse(p, y),
                                 lambda p: nn.mse_grad(p, y)) < 1e-5

    def test_sign_gradient_modes(self):
        z = np.array([[-2.0, -0.5, 0.5, 2.0]])
        d = np.ones_like(z)
        a = nn.sign(z)
        np.testing.assert_array_equal(nn._activation_backward("sign", d, z, a, None), 0 * d)
        np.testing.assert_array_equal(nn._activation_backward("sign", d, z, a, "identity"), d)
        np.testing.assert_array_equal(nn._activation_backward("sign", d, z, a, "clipped"),
                                      [[0.0, 1.0, 1.0, 0.0]])

    def test_stale_cache(self):
        net = nn.Network([nn.Dense(2, 2, rng=0)])
        out, cache = net.forward(np.ones((3, 2)))
        grads, _ = net.backward(cache, np.ones_like(out))
        nn.Optimizer().step_network(net, grads)
        with pytest.raises(nn.StaleCacheError):
            net.backward(cache, np.ones_like(out))


class TestOptimizer:
    def test_zero_gradient(self):
        new, _ = nn.optimizer_step([np.array([1.0, 2.0])], [np.zeros(2)], nn.OptimizerConfig("sgd", 0.5))
        np.testing.assert_array_equal(new[0], [1.0, 2.0])
        new, _ = nn.optimizer_step([np.array([1.0, 2.0])], [np.zeros(2)], nn.OptimizerConfig("adam"))
        np.testing.assert_array_equal(new[0], [1.0, 2.0])

    def test_sgd_arithmetic(self):
        new, _ = nn.optimizer_step([np.array([1.0])], [np.array([2.0])], nn.OptimizerConfig("sgd", 0.1))
        assert new[0][0] == pytest.approx(0.8)

    def test_adam_first_step(self):
        # m_hat = 1, v_hat = 1 after bias correction, so the step is lr / (1 + eps)
        cfg = nn.OptimizerConfig("adam", 0.01)
        new, _ = nn.optimizer_step([np.array([1.0])], [np.array([1.0])], cfg)
        assert new[0][0] == pytest.approx(1.0 - 0.01 / (1.0 + 1e-8), abs=1e-15)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            nn.OptimizerConfig("sgd", 0.0)
        with pytest.raises(ValueError):
            nn.OptimizerConfig("rmsprop")


class TestInit:
    def test_zero_sigma(self):
        assert not np.any(nn.init_gaussian((4, 5), 0.0, 1))

    def test_moments(self):
        w = nn.init_gaussian(1_000_000, 1.0, 123)
        assert abs(w.mean()) < 0.01
        assert abs(w.var() - 1.0) < 0.01

    def test_deterministic(self):
        np.testing.assert_array_equal(nn.init_gaussian((3, 3), 1.0, 5), nn.init_gaussian((3, 3), 1.0, 5))

    def test_negative_sigma(self):
        with pytest.raises(ValueError):
            nn.InitSpec(sigma_theta=-1.0)


class TestInvariants:
    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=10), st.integers(1, 5))
    def test_softmax_rows(self, row, reps):
        p = nn.softmax(np.tile(row, (reps, 1)))
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
        assert np.all((p >= 0) & (p <= 1))

    def test_softmax_strictly_inside(self):
        p = nn.softmax(np.random.default_rng(0).standard_normal((50, 6)) * 3)
        assert np.all((p > 0) & (p < 1))

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20))
    def test_relu_nonneg_idempotent(self, v):
        r = nn.relu(np.array(v))
        assert np.all(r >= 0)
        np.testing.assert_array_equal(nn.relu(r), r)

    @pytest.mark.parametrize("batch", [32, 100])
    def test_batchnorm_train_statistics(self, batch):
        rng = np.random.default_rng(4)
        layer = nn.Dense(6, 10, "linear", batch_norm=True, rng=rng, bias_std=2.0)
        out, _ = layer.forward(rng.standard_normal((batch, 6)) * 5 + 3)
        assert np.max(np.abs(out.mean(axis=0))) < 1e-6
        assert np.all(np.abs(out.var(axis=0) - 1) < 1e-4)
        assert np.all(layer.bn.running_var >= 0)

    def test_deterministic_training_replay(self):
        def run():
            rng = np.random.default_rng(99)
            net = nn.Network([nn.Dense(4, 8, "relu", batch_norm=True, rng=rng),
                              nn.Dense(8, 2, rng=rng)])
            opt = nn.Optimizer()
            data = np.random.default_rng(1).standard_normal((20, 32, 4))
            for x in data:
                out, cache = net.forward(x)
                grads, _ = net.backward(cache, nn.mse_grad(out, x[:, :2]))
                opt.step_network(net, grads)
            return np.concatenate([p.ravel() for _, _, p in net.parameters()])

        np.testing.assert_array_equal(run(), run())


class TestCheckpoint:
    def test_round_trip(self):
        rng = np.random.default_rng(5)
        net = nn.Network([nn.Dense(3, 4, "relu", batch_norm=True, rng=rng),
                          nn.Dense(4, 2, "sign", ste="clipped", rng=rng)])
        net.forward(rng.standard_normal((16, 3)))
        blob = nn.dump_networks({"enc": net}, meta={"seed": 5})
        nets, meta = nn.load_networks(blob)
        assert meta == {"seed": 5}
        x = rng.standard_normal((5, 3))
        np.testing.assert_array_equal(nets["enc"].predict(x), net.predict(x))
        assert nets["enc"].layers[1].ste == "clipped"

    def test_several_networks_any_order(self):
        rng = np.random.default_rng(6)
        nets = {"zeta": nn.Network([nn.Dense(3, 5, rng=rng)]),
                "alpha": nn.Network([nn.Dense(5, 2, "relu", batch_norm=True, rng=rng)])}
        back, _ = nn.load_networks(nn.dump_networks(nets))
        for name, net in nets.items():
            assert back[name].checksum() == net.checksum()

    def test_bad_magic(self):
        with pytest.raises(ValueError):
            nn.load_networks(b"garbage-bytes-here")
