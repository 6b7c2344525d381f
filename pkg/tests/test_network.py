"""Network contracts: forward caching, losses, output error, serialization."""

import math

import numpy as np
import pytest

from conftest import f64_forward_loss, rel_err
from sparsebp.network import (
    Activation,
    Layer,
    Loss,
    Network,
    activation_apply,
    activation_prime,
    apply_weights,
    load_weights,
    loss_from_forward,
    loss_value,
    output_error,
    save_weights,
    softmax,
)

F32 = np.float32


def single_layer_net(w, b, activation, loss):
    return Network([Layer(w=np.asarray(w, dtype=F32), b=np.asarray(b, dtype=F32),
                          activation=activation)], loss)


class TestForward:
    def test_identity_layer_passthrough(self):
        net = single_layer_net(np.eye(3), np.zeros(3), Activation.IDENTITY, Loss.MSE)
        x = np.array([0.3, -1.0, 2.0], dtype=F32)
        assert np.array_equal(net.forward(x), x)

    def test_relu_clamps_negative(self):
        net = single_layer_net(-np.eye(2), np.zeros(2), Activation.RELU, Loss.MSE)
        out = net.forward(np.array([1.0, 2.0], dtype=F32))
        assert np.array_equal(out, np.zeros(2, dtype=F32))

    def test_two_layer_hand_computation(self):
        # layer 1: z = [[1,0],[1,1]]@x + [0.5,0], ReLU; layer 2: identity 2x2 of ones
        w1 = np.array([[1, 0], [1, 1]], dtype=F32)
        b1 = np.array([0.5, 0], dtype=F32)
        w2 = np.ones((2, 2), dtype=F32)
        net = Network(
            [Layer(w1, b1, Activation.RELU),
             Layer(w2, np.zeros(2, dtype=F32), Activation.IDENTITY)],
            Loss.MSE,
        )
        x = np.array([1.0, -2.0], dtype=F32)
        # z1 = [1.5, -1] -> a1 = [1.5, 0]; z2 = [1.5, 1.5]
        out = net.forward(x)
        assert np.array_equal(out, np.array([1.5, 1.5], dtype=F32))
        assert np.array_equal(net.layers[0].a, np.array([1.5, 0.0], dtype=F32))

    def test_forward_populates_caches(self):
        net = Network.build([3, 4, 2], seed=3)
        assert not net.caches_ready()
        net.forward(np.zeros(3, dtype=F32))
        assert net.caches_ready()
        net.reset_caches()
        assert not net.caches_ready()

    def test_dimension_mismatch(self):
        net = Network.build([3, 2], seed=0)
        with pytest.raises(ValueError, match="input width"):
            net.forward(np.zeros(4, dtype=F32))

    def test_forward_deterministic(self):
        net = Network.build([5, 4, 3], seed=9)
        x = np.linspace(0, 1, 5).astype(F32)
        a = net.forward(x).copy()
        b = net.forward(x).copy()
        assert np.array_equal(a.view(np.uint32), b.view(np.uint32))

    def test_invalid_layer_chain(self):
        layers = [Layer(np.zeros((3, 2), dtype=F32), np.zeros(3, dtype=F32), Activation.RELU),
                  Layer(np.zeros((2, 4), dtype=F32), np.zeros(2, dtype=F32), Activation.SOFTMAX_CE)]
        with pytest.raises(ValueError, match="width mismatch"):
            Network(layers, Loss.CROSS_ENTROPY)

    def test_loss_activation_pairing_enforced(self):
        layer = Layer(np.zeros((2, 2), dtype=F32), np.zeros(2, dtype=F32), Activation.SOFTMAX_CE)
        with pytest.raises(ValueError, match="cross_entropy"):
            Network([layer], Loss.MSE)
        layer2 = Layer(np.zeros((2, 2), dtype=F32), np.zeros(2, dtype=F32), Activation.SIGMOID)
        with pytest.raises(ValueError, match="softmax_ce"):
            Network([layer2], Loss.CROSS_ENTROPY)


class TestActivations:
    def test_relu_derivative_zero_at_kink(self):
        z = np.array([-1.0, 0.0, 1.0], dtype=F32)
        a = activation_apply(Activation.RELU, z)
        assert np.array_equal(activation_prime(Activation.RELU, z, a),
                              np.array([0, 0, 1], dtype=F32))

    def test_sigmoid_extremes_stable(self):
        z = np.array([-500.0, 500.0], dtype=F32)
        a = activation_apply(Activation.SIGMOID, z)
        assert np.all(np.isfinite(a))
        assert a[0] == pytest.approx(0.0, abs=1e-30)
        assert a[1] == pytest.approx(1.0)

    @pytest.mark.parametrize("kind", [Activation.SIGMOID, Activation.IDENTITY])
    def test_prime_matches_central_difference(self, kind, rng):
        # independent f64 definitions of f; the FD of these is the oracle
        z = rng.uniform(-4, 4, 100).astype(np.float64)
        h = 1e-5
        f = (lambda zz: 1.0 / (1.0 + np.exp(-zz))) if kind is Activation.SIGMOID \
            else (lambda zz: zz)
        numeric = (f(z + h) - f(z - h)) / (2 * h)
        z32 = z.astype(F32)
        analytic = activation_prime(kind, z32, activation_apply(kind, z32)).astype(np.float64)
        assert np.max(rel_err(analytic, numeric)) < 1e-3

    def test_relu_prime_matches_away_from_kink(self, rng):
        z = rng.uniform(0.01, 4, 50).astype(np.float64)
        z = np.concatenate([z, -z])
        h = 1e-5
        numeric = (np.maximum(z + h, 0) - np.maximum(z - h, 0)) / (2 * h)
        z32 = z.astype(F32)
        analytic = activation_prime(Activation.RELU, z32,
                                    activation_apply(Activation.RELU, z32))
        assert np.max(rel_err(analytic.astype(np.float64), numeric)) < 1e-3

    def test_softmax_is_a_distribution(self, rng):
        for _ in range(20):
            z = rng.uniform(-30, 30, 10).astype(F32)
            p = softmax(z)
            assert abs(float(p.sum()) - 1.0) < 1e-6
            assert np.all(p >= 0)


class TestLoss:
    def test_mse_zero_when_equal(self):
        p = np.array([0.2, 0.8], dtype=F32)
        assert loss_value(p, p, Loss.MSE) == 0.0

    def test_mse_single_term_averaged(self):
        p = np.array([1.0, 0.0], dtype=F32)
        y = np.array([0.0, 0.0], dtype=F32)
        assert loss_value(p, y, Loss.MSE) == pytest.approx(0.5)

    def test_cross_entropy_uniform_logits(self):
        # softmax of a constant vector is uniform: CE = ln(10)
        z = np.full(10, 3.7, dtype=F32)
        y = np.zeros(10, dtype=F32)
        y[4] = 1.0
        assert loss_value(z, y, Loss.CROSS_ENTROPY) == pytest.approx(math.log(10), rel=1e-6)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            loss_value(np.zeros(2, dtype=F32), np.zeros(3, dtype=F32), Loss.MSE)

    def test_log_zero_guarded(self):
        z = np.array([1000.0, -1000.0], dtype=F32)
        y = np.array([0.0, 1.0], dtype=F32)
        v = loss_value(z, y, Loss.CROSS_ENTROPY)
        assert np.isfinite(v)


class TestOutputError:
    def test_fused_perfect_prediction_is_zero(self):
        net = Network.build([3, 2], seed=5)
        x = np.array([0.1, 0.2, 0.3], dtype=F32)
        out = net.forward(x)
        err = output_error(net, out)  # target equals the prediction
        assert np.array_equal(err, np.zeros(2, dtype=F32))

    def test_identity_mse_closed_form(self):
        net = single_layer_net([[1.0, 0.0], [0.0, 1.0]], [0, 0], Activation.IDENTITY, Loss.MSE)
        x = np.array([0.5, -0.5], dtype=F32)
        y = np.array([1.0, 1.0], dtype=F32)
        p = net.forward(x)
        err = output_error(net, y)
        expect = (2.0 / 2) * (p - y)
        assert np.allclose(err, expect, rtol=1e-6)

    def test_sigmoid_mse_matches_finite_difference(self):
        net = single_layer_net([[0.7]], [0.1], Activation.SIGMOID, Loss.MSE)
        x = np.array([0.4], dtype=F32)
        y = np.array([0.9], dtype=F32)
        net.forward(x)
        analytic = float(output_error(net, y)[0])
        z0 = float(net.layers[0].z[0])
        h = 1e-5

        def loss_of_z(z):
            a = 1.0 / (1.0 + math.exp(-z))
            return (a - 0.9) ** 2

        numeric = (loss_of_z(z0 + h) - loss_of_z(z0 - h)) / (2 * h)
        assert abs(analytic - numeric) / max(abs(numeric), 1e-3) < 1e-3

    def test_requires_forward(self):
        net = Network.build([2, 2], seed=0)
        with pytest.raises(RuntimeError, match="forward"):
            output_error(net, np.zeros(2, dtype=F32))

    def test_matches_f64_fd_on_random_nets(self, rng):
        # central differences of loss w.r.t. z^L via the f64 replica
        from conftest import random_net
        for _ in range(10):
            net, x, y = random_net(rng, max_width=6, n_layers=1, relu_margin=1e-2)
            net.forward(x)
            analytic = output_error(net, y).astype(np.float64)
            h = 1e-4
            out_layer = net.layers[-1]
            zs = out_layer.z.astype(np.float64)
            numeric = np.zeros_like(zs)
            for i in range(zs.size):
                for sgn in (+1, -1):
                    zp = zs.copy()
                    zp[i] += sgn * h
                    if out_layer.activation is Activation.SOFTMAX_CE:
                        e = np.exp(zp - zp.max())
                        a = e / e.sum()
                        lv = -np.sum(y * np.log(np.maximum(a, 1e-300)))
                    else:
                        if out_layer.activation is Activation.RELU:
                            a = np.maximum(zp, 0)
                        elif out_layer.activation is Activation.SIGMOID:
                            a = 1 / (1 + np.exp(-zp))
                        else:
                            a = zp
                        lv = np.mean((a - y.astype(np.float64)) ** 2)
                    numeric[i] += sgn * lv
                numeric[i] /= 2 * h
            assert np.max(rel_err(analytic, numeric)) < 1e-3


class TestLossFromForward:
    def test_matches_loss_value_for_mse(self, rng):
        net = Network.build([3, 2], hidden=Activation.RELU, output=Activation.SIGMOID,
                            loss=Loss.MSE, seed=8)
        x = rng.uniform(0, 1, 3).astype(F32)
        y = rng.uniform(0, 1, 2).astype(F32)
        p = net.forward(x)
        assert loss_from_forward(net, y) == pytest.approx(loss_value(p, y, Loss.MSE))

    def test_ce_consistent_with_logit_form(self, rng):
        net = Network.build([3, 4, 2], seed=8)
        x = rng.uniform(0, 1, 3).astype(F32)
        y = np.array([1.0, 0.0], dtype=F32)
        net.forward(x)
        from_cache = loss_from_forward(net, y)
        from_logits = loss_value(net.layers[-1].z, y, Loss.CROSS_ENTROPY)
        assert from_cache == pytest.approx(from_logits, rel=1e-5)


class TestSerialization:
    def test_round_trip_bitwise(self, tmp_path, rng):
        net = Network.build([5, 4, 3], seed=11)
        path = tmp_path / "w.bin"
        save_weights(path, net)
        pairs = load_weights(path)
        assert len(pairs) == 2
        for layer, (w, b) in zip(net.layers, pairs):
            assert np.array_equal(layer.w, w)
            assert np.array_equal(layer.b, b)

    def test_save_load_apply_preserves_outputs(self, tmp_path):
        net = Network.build([4, 3, 2], seed=2)
        x = np.array([0.1, 0.9, 0.5, 0.3], dtype=F32)
        want = net.forward(x).copy()
        path = tmp_path / "w.bin"
        save_weights(path, net)
        other = Network.build([4, 3, 2], seed=99)
        apply_weights(other, load_weights(path))
        assert np.array_equal(other.forward(x), want)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValueError, match="magic"):
            load_weights(path)

    def test_shape_mismatch_on_apply(self, tmp_path):
        net = Network.build([4, 3], seed=0)
        path = tmp_path / "w.bin"
        save_weights(path, net)
        other = Network.build([4, 2], seed=0)
        with pytest.raises(ValueError, match="shape"):
            apply_weights(other, load_weights(path))


class TestF64OracleAgreement:
    def test_f64_replica_tracks_f32_forward(self, rng):
        # the test oracle itself must agree with production to ~f32 precision
        from conftest import random_net
        for _ in range(10):
            net, x, y = random_net(rng, max_width=6)
            net.forward(x)
            f32_loss = loss_from_forward(net, y)
            f64_loss = f64_forward_loss([l.w for l in net.layers],
                                        [l.b for l in net.layers],
                                        [l.activation for l in net.layers],
                                        net.loss, x, y)
            assert f32_loss == pytest.approx(f64_loss, rel=1e-4, abs=1e-5)
