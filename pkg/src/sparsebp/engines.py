"""The three backward-pass engines over one gradient-propagation skeleton.

Per layer, walking from the output toward the input, the skeleton:

  1. takes the layer's local error (the loss gradient w.r.t. the layer's
     activations; for a fused softmax+cross-entropy output it is the
     pre-activation error directly),
  2. asks the engine's selection policy which components survive,
  3. multiplies the survivors by f'(z) (fused output skips this),
  4. forms the row-sparse weight gradient, the bias gradient on the same
     rows, and the *dense* previous-layer error via the masked transposed
     matvec, so sparsity never compounds across layers.

The full engine selects everything and runs the dense kernels; because all
kernels share one accumulation order, a sparse pass with full selection is
bit-identical to the dense pass.

MAC accounting covers the two backward matrix products per layer (weight
gradient and error propagation), the quantities the savings model is about:
a layer that keeps k of its N components costs 2·k·N_prev of the dense
2·N·N_prev.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .controller import AdaptiveConfig, AdaptiveState, layer_rate, rate_to_k
from .kernels import IndexSet
from .network import Activation, Loss, Network, activation_prime, loss_grad_wrt_activation


# --------------------------------------------------------------------------
# engine kinds
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Full:
    name = "full"


@dataclass(frozen=True)
class FixedTopK:
    ratio: float
    name = "topk"

    def __post_init__(self):
        if not 0.0 < self.ratio <= 1.0:
            raise ValueError(f"ratio must be in (0, 1], got {self.ratio}")


@dataclass(frozen=True)
class Adaptive:
    config: AdaptiveConfig
    name = "adaptive"


EngineKind = Full | FixedTopK | Adaptive


def engine_label(engine: EngineKind) -> str:
    if isinstance(engine, FixedTopK):
        return f"topk:{engine.ratio:g}"
    if isinstance(engine, Adaptive):
        c = engine.config
        return f"adaptive:{c.s_min:g},{c.s_max:g},{c.zeta:g}"
    return "full"


# --------------------------------------------------------------------------
# gradients
# --------------------------------------------------------------------------


@dataclass
class LayerGrad:
    """One layer's gradient: selected rows of δW, δb on the same rows, MACs.

    ``sel is None`` means a full (dense) selection: ``dw`` holds all rows.
    ``da_prev`` is the dense error propagated to the layer below (for the
    first layer, the gradient w.r.t. the network input).
    """

    sel: IndexSet | None
    dw: np.ndarray  # (k, n_in)
    db: np.ndarray  # (k,)
    macs: int
    n_out: int
    da_prev: np.ndarray | None = None

    @property
    def k(self) -> int:
        return self.n_out if self.sel is None else self.sel.size

    def dense_dw(self) -> np.ndarray:
        if self.sel is None:
            return self.dw
        out = np.zeros((self.n_out, self.dw.shape[1]), dtype=np.float32)
        out[self.sel.indices] = self.dw
        return out

    def dense_db(self) -> np.ndarray:
        if self.sel is None:
            return self.db
        out = np.zeros(self.n_out, dtype=np.float32)
        out[self.sel.indices] = self.db
        return out


@dataclass
class GradientSet:
    layers: list[LayerGrad]

    @property
    def macs(self) -> int:
        return sum(g.macs for g in self.layers)

    @property
    def k_per_layer(self) -> list[int]:
        return [g.k for g in self.layers]


def dense_backward_macs(net: Network) -> int:
    """Analytic dense cost of the two backward matmuls, summed over layers."""
    return sum(2 * l.n_out * l.n_in for l in net.layers)


# --------------------------------------------------------------------------
# the shared skeleton
# --------------------------------------------------------------------------


def _output_local_error(net: Network, y: np.ndarray) -> tuple[np.ndarray, bool]:
    """Local error entering the output layer and whether f' is already folded in."""
    out = net.layers[-1]
    if out.activation is Activation.SOFTMAX_CE:
        return out.a - y, True
    return loss_grad_wrt_activation(out.a, y, net.loss), False


def _backward(net: Network, y: np.ndarray, select) -> tuple[GradientSet, list[float]]:
    """Walk layers output-to-input, applying ``select(layer_1based, local_error)``.

    ``select`` returns (S, IndexSet | None); None keeps the layer dense.
    Returns the gradients and the per-layer rates actually used.
    """
    if not net.caches_ready():
        raise RuntimeError("backward requires a forward pass first")
    if y.shape[0] != net.layers[-1].n_out:
        raise ValueError(f"target width {y.shape[0]} != output width {net.layers[-1].n_out}")

    n_layers = net.n_layers
    grads: list[LayerGrad | None] = [None] * n_layers
    rates = [0.0] * n_layers

    local, fused = _output_local_error(net, y)
    for i in range(n_layers - 1, -1, -1):
        layer = net.layers[i]
        fold_fprime = not (fused and i == n_layers - 1)
        s, sel = select(i + 1, local)
        rates[i] = s
        if sel is None:
            dz = local * activation_prime(layer.activation, layer.z, layer.a) if fold_fprime else local
            dw, m1 = kernels._outer_rows(dz, layer.a_prev)
            da_prev = kernels.matvec_t(layer.w, dz)
            macs = m1 + layer.n_out * layer.n_in
            grads[i] = LayerGrad(sel=None, dw=dw, db=dz, macs=macs,
                                 n_out=layer.n_out, da_prev=da_prev)
        else:
            idx = sel.indices
            vals = local[idx]
            if fold_fprime:
                vals = vals * _prime_at(layer, idx)
            dw, m1 = kernels.outer_rows(vals, layer.a_prev, sel)
            da_prev, m2 = kernels.matvec_t_rows(layer.w, vals, sel)
            grads[i] = LayerGrad(sel=sel, dw=dw, db=vals, macs=m1 + m2,
                                 n_out=layer.n_out, da_prev=da_prev)
        local = da_prev
    return GradientSet(layers=grads), rates


def _prime_at(layer, idx: np.ndarray) -> np.ndarray:
    """f'(z) evaluated only at the selected components."""
    kind = layer.activation
    if kind is Activation.RELU:
        return (layer.z[idx] > 0).astype(np.float32)
    if kind is Activation.SIGMOID:
        a = layer.a[idx]
        return a * (np.float32(1.0) - a)
    if kind is Activation.IDENTITY:
        return np.ones(idx.size, dtype=np.float32)
    raise ValueError(f"activation_prime undefined for {kind}")


# --------------------------------------------------------------------------
# the three engines
# --------------------------------------------------------------------------


def backward_full(net: Network, y: np.ndarray) -> GradientSet:
    """Dense gradients for every layer; MACs equal the analytic dense count."""
    grads, _ = _backward(net, y, lambda l, local: (1.0, None))
    return grads


def backward_sparse(net: Network, y: np.ndarray, k_per_layer) -> GradientSet:
    """Fixed per-layer top-k backward pass.

    ``k_per_layer`` is ordered input-to-output, one count per layer.
    """
    k_per_layer = list(k_per_layer)
    if len(k_per_layer) != net.n_layers:
        raise ValueError(f"need {net.n_layers} k values, got {len(k_per_layer)}")
    for k, layer in zip(k_per_layer, net.layers):
        if not 1 <= k <= layer.n_out:
            raise ValueError(f"k={k} out of range [1, {layer.n_out}]")

    def select(l: int, local: np.ndarray):
        k = k_per_layer[l - 1]
        n = local.shape[0]
        return k / n, kernels.top_k(local, k)

    grads, _ = _backward(net, y, select)
    return grads


def backward_adaptive(
    net: Network, y: np.ndarray, state: AdaptiveState
) -> tuple[GradientSet, list[float], list[int]]:
    """Adaptive backward pass; returns (gradients, per-layer S, per-layer k).

    Mutates ``state``'s running maxima.  A layer whose rate resolves to a
    full selection still runs the dense kernels (bit-identical, cheaper).
    """
    if state.n_layers != net.n_layers:
        raise ValueError("controller state sized for a different network")

    def select(l: int, local: np.ndarray):
        s, k = layer_rate(state, l, local)
        if k == local.shape[0]:
            return s, None
        return s, kernels.top_k(local, k)

    grads, rates = _backward(net, y, select)
    return grads, rates, grads.k_per_layer


def fixed_k_for(net: Network, ratio: float) -> list[int]:
    """Per-layer k for a fixed backpropagation ratio, floor-rounded, clamped to [1, N]."""
    return [rate_to_k(ratio, layer.n_out) for layer in net.layers]


def backward(net: Network, y: np.ndarray, engine: EngineKind,
             state: AdaptiveState | None = None,
             fixed_k: list[int] | None = None) -> tuple[GradientSet, list[float], list[int]]:
    """Dispatch one backward pass; returns (gradients, per-layer S, per-layer k)."""
    if isinstance(engine, Full):
        grads = backward_full(net, y)
        return grads, [1.0] * net.n_layers, grads.k_per_layer
    if isinstance(engine, FixedTopK):
        ks = fixed_k if fixed_k is not None else fixed_k_for(net, engine.ratio)
        grads = backward_sparse(net, y, ks)
        return grads, [k / l.n_out for k, l in zip(ks, net.layers)], ks
    if isinstance(engine, Adaptive):
        if state is None:
            raise ValueError("adaptive engine needs an AdaptiveState")
        return backward_adaptive(net, y, state)
    raise TypeError(f"unknown engine {engine!r}")
