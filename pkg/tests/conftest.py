"""Shared test oracles, independent of the library's kernel implementations.

The f32 oracles below accumulate with numpy scalar arithmetic (each multiply
and add rounds to float32) in ascending index order; they define the
bit-level reference the kernels must match.  The f64 oracle replicates
forward + loss in float64 numpy for finite-difference gradient checks.
"""

import numpy as np
import pytest
from hypothesis import settings

from sparsebp.network import Activation, Loss, Network

settings.register_profile("kernels", deadline=None, max_examples=60)
settings.load_profile("kernels")

F32 = np.float32


def oracle_matvec(w, x):
    n, m = w.shape
    out = np.empty(n, dtype=F32)
    for i in range(n):
        acc = F32(0.0)
        for j in range(m):
            acc = F32(acc + F32(w[i, j] * x[j]))
        out[i] = acc
    return out


def oracle_matvec_t(w, d):
    """out[j] = sum_i w[i,j]*d[i], ascending i, f32 throughout."""
    n, m = w.shape
    out = np.zeros(m, dtype=F32)
    for i in range(n):
        for j in range(m):
            out[j] = F32(out[j] + F32(w[i, j] * d[i]))
    return out


def oracle_top_k(v, k):
    """Full-sort selection: k largest |v[i]|, lower index wins ties."""
    order = sorted(range(len(v)), key=lambda i: (-abs(float(v[i])), i))
    return sorted(order[:k])


def bit_equal(a, b):
    a = np.asarray(a, dtype=F32)
    b = np.asarray(b, dtype=F32)
    return a.shape == b.shape and np.array_equal(a.view(np.uint32), b.view(np.uint32))


def exact_equal(a, b):
    """Exact numeric equality (zero tolerance; -0.0 == +0.0)."""
    a = np.asarray(a)
    b = np.asarray(b)
    return a.shape == b.shape and np.array_equal(a, b)


# ---------------------------------------------------------------------------
# float64 replica of forward + loss, for finite-difference oracles
# ---------------------------------------------------------------------------


def f64_forward_loss(weights, biases, activations, loss, x, y):
    a = x.astype(np.float64)
    for w, b, act in zip(weights, biases, activations):
        z = w.astype(np.float64) @ a + b.astype(np.float64)
        if act is Activation.RELU:
            a = np.maximum(z, 0.0)
        elif act is Activation.SIGMOID:
            a = 1.0 / (1.0 + np.exp(-z))
        elif act is Activation.IDENTITY:
            a = z
        elif act is Activation.SOFTMAX_CE:
            e = np.exp(z - z.max())
            a = e / e.sum()
        else:
            raise ValueError(act)
    y64 = y.astype(np.float64)
    if loss is Loss.MSE:
        return float(np.mean((a - y64) ** 2))
    return float(-np.sum(y64 * np.log(np.maximum(a, 1e-300))))


def fd_gradients(net: Network, x, y, h=1e-3):
    """Central finite differences of the f64 replica, per parameter."""
    weights = [l.w.copy() for l in net.layers]
    biases = [l.b.copy() for l in net.layers]
    acts = [l.activation for l in net.layers]

    def loss_at():
        return f64_forward_loss(weights, biases, acts, net.loss, x, y)

    grads_w, grads_b = [], []
    for li in range(len(weights)):
        gw = np.zeros_like(weights[li], dtype=np.float64)
        for i in range(weights[li].shape[0]):
            for j in range(weights[li].shape[1]):
                orig = weights[li][i, j]
                weights[li][i, j] = orig + h
                lp = loss_at()
                weights[li][i, j] = orig - h
                lm = loss_at()
                weights[li][i, j] = orig
                gw[i, j] = (lp - lm) / (2 * h)
        gb = np.zeros_like(biases[li], dtype=np.float64)
        for i in range(biases[li].shape[0]):
            orig = biases[li][i]
            biases[li][i] = orig + h
            lp = loss_at()
            biases[li][i] = orig - h
            lm = loss_at()
            biases[li][i] = orig
            gb[i] = (lp - lm) / (2 * h)
        grads_w.append(gw)
        grads_b.append(gb)
    return grads_w, grads_b


def rel_err(a, b, floor=1e-3):
    """|a-b| / max(|a|, |b|, floor); the floor guards near-zero gradients."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def random_net(rng, max_width=8, n_layers=None, losses=(Loss.MSE, Loss.CROSS_ENTROPY),
               relu_margin=0.0):
    """A small random net (and input/target) for oracle comparisons.

    With relu_margin > 0, nets whose hidden ReLU pre-activations fall within
    the margin of the kink are resampled, so finite differences stay on one
    side of it.
    """
    from sparsebp.network import Layer, glorot_uniform

    hidden_kinds = [Activation.RELU, Activation.SIGMOID, Activation.IDENTITY]
    for _ in range(200):
        n_l = n_layers if n_layers is not None else int(rng.integers(1, 4))
        widths = [int(rng.integers(2, max_width + 1)) for _ in range(n_l + 1)]
        loss = losses[int(rng.integers(len(losses)))]
        layers_acts = [hidden_kinds[int(rng.integers(3))] for _ in range(n_l - 1)]
        if loss is Loss.CROSS_ENTROPY:
            layers_acts.append(Activation.SOFTMAX_CE)
        else:
            layers_acts.append(hidden_kinds[int(rng.integers(3))])
        init_rng = np.random.default_rng(int(rng.integers(2**31)))
        layers = [
            Layer(w=glorot_uniform(init_rng, n_out, n_in),
                  b=init_rng.uniform(-0.2, 0.2, n_out).astype(np.float32),
                  activation=act)
            for (n_in, n_out), act in zip(zip(widths, widths[1:]), layers_acts)
        ]
        net = Network(layers, loss)
        x = rng.uniform(-1, 1, widths[0]).astype(np.float32)
        if loss is Loss.CROSS_ENTROPY:
            y = np.zeros(widths[-1], dtype=np.float32)
            y[int(rng.integers(widths[-1]))] = 1.0
        else:
            y = rng.uniform(-1, 1, widths[-1]).astype(np.float32)
        net.forward(x)
        if relu_margin > 0.0:
            ok = True
            for layer in net.layers:
                if layer.activation is Activation.RELU:
                    if np.abs(layer.z).min() < relu_margin:
                        ok = False
                        break
            if not ok:
                continue
        return net, x, y
    raise AssertionError("could not sample a net clear of the ReLU kink")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
