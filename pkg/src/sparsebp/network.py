"""Dense feed-forward networks: forward pass with caching, losses, output error.

A layer computes z = W·a_in + b and a_out = f(z).  The forward pass caches
a_in, z, and a_out on each layer because every backward engine needs them.
The output layer may use the fused softmax + cross-entropy pairing, in which
case the output error is softmax(z) - y computed directly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import kernels

LOG_EPS = 1e-7  # clamp for log() in cross-entropy


class Activation(Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"
    SOFTMAX_CE = "softmax_ce"  # output layer only, fused with cross-entropy


class Loss(Enum):
    MSE = "mse"
    CROSS_ENTROPY = "cross_entropy"


def softmax(z: np.ndarray) -> np.ndarray:
    """Numerically stable softmax in f32."""
    e = np.exp(z - z.max())
    return e / e.sum()


def activation_apply(kind: Activation, z: np.ndarray) -> np.ndarray:
    if kind is Activation.RELU:
        return np.maximum(z, np.float32(0.0))
    if kind is Activation.SIGMOID:
        # branch on sign to avoid exp overflow
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if kind is Activation.IDENTITY:
        return z.copy()
    if kind is Activation.SOFTMAX_CE:
        return softmax(z)
    raise ValueError(f"unknown activation {kind}")


def activation_prime(kind: Activation, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """f'(z); the cached activation ``a`` is used where it makes f' exact and cheap.

    ReLU's derivative at exactly 0 is defined as 0.
    """
    if kind is Activation.RELU:
        return (z > 0).astype(np.float32)
    if kind is Activation.SIGMOID:
        return a * (np.float32(1.0) - a)
    if kind is Activation.IDENTITY:
        return np.ones_like(z)
    raise ValueError(f"activation_prime undefined for {kind}")


@dataclass
class Layer:
    """One dense layer: weights, bias, activation, and forward-pass caches."""

    w: np.ndarray  # (n_out, n_in)
    b: np.ndarray  # (n_out,)
    activation: Activation
    a_prev: np.ndarray | None = field(default=None, repr=False)
    z: np.ndarray | None = field(default=None, repr=False)
    a: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_out(self) -> int:
        return self.w.shape[0]

    @property
    def n_in(self) -> int:
        return self.w.shape[1]


class Network:
    """An ordered stack of dense layers plus a loss kind."""

    def __init__(self, layers: list[Layer], loss: Loss):
        if not layers:
            raise ValueError("network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.n_in != prev.n_out:
                raise ValueError(
                    f"layer width mismatch: {prev.n_out} -> {nxt.n_in}"
                )
        for layer in layers[:-1]:
            if layer.activation is Activation.SOFTMAX_CE:
                raise ValueError("softmax_ce is an output-layer activation")
        out_act = layers[-1].activation
        if loss is Loss.CROSS_ENTROPY and out_act is not Activation.SOFTMAX_CE:
            raise ValueError("cross_entropy loss requires the softmax_ce output activation")
        if loss is Loss.MSE and out_act is Activation.SOFTMAX_CE:
            raise ValueError("softmax_ce output requires the cross_entropy loss")
        self.layers = layers
        self.loss = loss

    @classmethod
    def build(
        cls,
        widths: list[int],
        hidden: Activation = Activation.RELU,
        output: Activation = Activation.SOFTMAX_CE,
        loss: Loss = Loss.CROSS_ENTROPY,
        seed: int = 0,
    ) -> "Network":
        """Glorot-uniform initialized network; ``widths`` includes the input width."""
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        rng = np.random.default_rng([seed, 0])
        layers = []
        for i, (n_in, n_out) in enumerate(zip(widths, widths[1:])):
            act = output if i == len(widths) - 2 else hidden
            layers.append(Layer(w=glorot_uniform(rng, n_out, n_in),
                                b=np.zeros(n_out, dtype=np.float32),
                                activation=act))
        return cls(layers, loss)

    @property
    def widths(self) -> list[int]:
        """Layer widths N^0..N^L (input width first)."""
        return [self.layers[0].n_in] + [l.n_out for l in self.layers]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[0] != self.layers[0].n_in:
            raise ValueError(
                f"input width {x.shape[0]} != first layer width {self.layers[0].n_in}"
            )
        a = x
        for layer in self.layers:
            z = kernels.matvec(layer.w, a) + layer.b
            layer.a_prev = a
            layer.z = z
            layer.a = activation_apply(layer.activation, z)
            a = layer.a
        return a

    def reset_caches(self) -> None:
        for layer in self.layers:
            layer.a_prev = layer.z = layer.a = None

    def caches_ready(self) -> bool:
        return all(l.z is not None for l in self.layers)

    def weight_pairs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(l.w.copy(), l.b.copy()) for l in self.layers]

    def clone(self) -> "Network":
        net = Network(
            [Layer(l.w.copy(), l.b.copy(), l.activation) for l in self.layers],
            self.loss,
        )
        return net


def glorot_uniform(rng: np.random.Generator, n_out: int, n_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in)).astype(np.float32)


# --------------------------------------------------------------------------
# losses and output error
# --------------------------------------------------------------------------


def loss_value(pred: np.ndarray, y: np.ndarray, kind: Loss) -> float:
    """MSE of predictions, or cross-entropy of raw scores (softmax applied here)."""
    if pred.shape != y.shape:
        raise ValueError(f"loss shape mismatch: {pred.shape} vs {y.shape}")
    if kind is Loss.MSE:
        d = pred.astype(np.float64) - y.astype(np.float64)
        return float(np.mean(d * d))
    if kind is Loss.CROSS_ENTROPY:
        z = pred.astype(np.float64)
        e = np.exp(z - z.max())
        p = np.maximum(e / e.sum(), LOG_EPS)
        return float(-np.sum(y.astype(np.float64) * np.log(p)))
    raise ValueError(f"unknown loss {kind}")


def loss_from_forward(net: Network, y: np.ndarray) -> float:
    """Training-step loss from the cached forward pass."""
    out = net.layers[-1]
    if out.a is None:
        raise RuntimeError("forward pass has not run")
    if net.loss is Loss.MSE:
        d = out.a.astype(np.float64) - y.astype(np.float64)
        return float(np.mean(d * d))
    p = np.maximum(out.a.astype(np.float64), LOG_EPS)
    return float(-np.sum(y.astype(np.float64) * np.log(p)))


def loss_grad_wrt_activation(a: np.ndarray, y: np.ndarray, kind: Loss) -> np.ndarray:
    """∇_a of the loss; only MSE is exposed here (cross-entropy is fused)."""
    if kind is not Loss.MSE:
        raise ValueError("cross_entropy gradients go through the fused output path")
    n = np.float32(a.shape[0])
    return (np.float32(2.0) / n) * (a - y)


def output_error(net: Network, y: np.ndarray) -> np.ndarray:
    """δ_z at the output layer, from the cached forward pass.

    Fused softmax+cross-entropy returns softmax(z) - y directly; otherwise
    f'(z) ⊙ ∇_a(loss).
    """
    out = net.layers[-1]
    if out.z is None or out.a is None:
        raise RuntimeError("forward pass has not run")
    if y.shape[0] != out.n_out:
        raise ValueError(f"target width {y.shape[0]} != output width {out.n_out}")
    if out.activation is Activation.SOFTMAX_CE:
        return out.a - y
    da = loss_grad_wrt_activation(out.a, y, net.loss)
    return da * activation_prime(out.activation, out.z, out.a)


# --------------------------------------------------------------------------
# weight serialization: flat little-endian f32 with a small header
# --------------------------------------------------------------------------

WEIGHTS_MAGIC = b"SBW1"


def save_weights(path, net: Network) -> None:
    """Write magic, layer count, per-layer dims, then per-layer W (row-major) and b."""
    with open(path, "wb") as f:
        f.write(WEIGHTS_MAGIC)
        f.write(struct.pack("<I", net.n_layers))
        for layer in net.layers:
            f.write(struct.pack("<II", layer.n_out, layer.n_in))
        for layer in net.layers:
            f.write(np.ascontiguousarray(layer.w, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(layer.b, dtype="<f4").tobytes())


def load_weights(path) -> list[tuple[np.ndarray, np.ndarray]]:
    """Read a weights file back into (W, b) pairs, validating the header."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != WEIGHTS_MAGIC:
            raise ValueError(f"bad weights magic {magic!r}, expected {WEIGHTS_MAGIC!r}")
        (n_layers,) = struct.unpack("<I", f.read(4))
        dims = [struct.unpack("<II", f.read(8)) for _ in range(n_layers)]
        pairs = []
        for n_out, n_in in dims:
            w = np.frombuffer(f.read(4 * n_out * n_in), dtype="<f4").reshape(n_out, n_in)
            b = np.frombuffer(f.read(4 * n_out), dtype="<f4")
            if w.size != n_out * n_in or b.size != n_out:
                raise ValueError("truncated weights file")
            pairs.append((kernels.as_matrix(w), kernels.as_vector(b)))
        if f.read(1):
            raise ValueError("trailing bytes in weights file")
    return pairs


def apply_weights(net: Network, pairs: list[tuple[np.ndarray, np.ndarray]]) -> None:
    if len(pairs) != net.n_layers:
        raise ValueError(f"weights file has {len(pairs)} layers, network has {net.n_layers}")
    for layer, (w, b) in zip(net.layers, pairs):
        if w.shape != layer.w.shape or b.shape != layer.b.shape:
            raise ValueError(
                f"weights shape {w.shape} does not match layer shape {layer.w.shape}"
            )
        layer.w = w.copy()
        layer.b = b.copy()
