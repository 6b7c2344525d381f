"""SGD training loop over any backward engine, with per-step computation metrics.

Scratch mode trains cfg.engine from the given initialization.  Fine-tune mode
first pretrains with the full (dense) engine until the held-out accuracy gate
is met, then switches to cfg.engine; the sparse engine never runs before the
gate.  Metric conventions:

  backprop ratio   weight-gradient elements computed / weight-gradient
                   elements of a dense pass, summed over steps and layers
                   (bias gradients excluded from the denominator)
  acceleration     dense-equivalent backward MACs / counted backward MACs
                   (analytic); wall-clock ratios are measured separately
                   by the compare front end
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .controller import AdaptiveState
from .data import Dataset, one_hot
from .engines import (
    Adaptive,
    EngineKind,
    FixedTopK,
    Full,
    GradientSet,
    backward,
    dense_backward_macs,
    engine_label,
    fixed_k_for,
)
from .kernels import IndexSet
from .network import Network, loss_from_forward

GATE_SUBSET = 2000  # held-out prefix used for pretrain gate checks


class TrainingDiverged(RuntimeError):
    """Raised when the training loss becomes non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    engine: EngineKind
    epochs: int
    learning_rate: float = 0.01
    batch_size: int = 1
    seed: int = 0
    mode: str = "scratch"  # or "fine-tune"
    pretrain_target_accuracy: float = 0.85
    pretrain_max_epochs: int = 20
    gate_check_interval: int = 1000

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.mode not in ("scratch", "fine-tune"):
            raise ValueError(f"mode must be scratch or fine-tune, got {self.mode!r}")
        if not 0.0 < self.pretrain_target_accuracy < 1.0:
            raise ValueError("pretrain_target_accuracy must be in (0, 1)")


@dataclass
class StepMetrics:
    step: int
    loss: float
    k: tuple[int, ...]
    s: tuple[float, ...]
    macs_sparse: int
    macs_dense: int
    elapsed_s: float
    phase: str  # "pretrain" or "main"


@dataclass
class RunReport:
    engine: str
    mode: str
    seed: int
    layer_widths: list[int]  # N^0..N^L
    final_accuracy: float
    mean_backprop_ratio: float
    acceleration_analytic: float
    epoch_times_s: list[float]
    steps: list[StepMetrics]
    pretrain_steps: int = 0
    final_loss: float = float("nan")
    s_mean_per_epoch: list[list[float]] = field(default_factory=list)

    @property
    def epoch_time_mean_s(self) -> float:
        return float(np.mean(self.epoch_times_s)) if self.epoch_times_s else 0.0


def sgd_step(net: Network, grads: GradientSet, lr: float) -> None:
    """W -= lr·δW, b -= lr·δb; rows outside a sparse selection are untouched."""
    if len(grads.layers) != net.n_layers:
        raise ValueError("gradient layer count does not match the network")
    lr32 = np.float32(lr)
    for layer, g in zip(net.layers, grads.layers):
        if g.dw.shape[1] != layer.n_in or g.n_out != layer.n_out:
            raise ValueError("gradient shape does not match the layer")
        if g.sel is None:
            kernels._sgd_dense(layer.w, layer.b, g.dw, g.db, lr32)
        else:
            kernels._sgd_rows(layer.w, layer.b, g.sel.indices, g.dw, g.db, lr32)


def evaluate(net: Network, data: Dataset) -> float:
    """Fraction of samples whose argmax output matches the label."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    correct = 0
    for i in range(len(data)):
        out = net.forward(data.x[i])
        if int(np.argmax(out)) == int(data.y[i]):
            correct += 1
    return correct / len(data)


def backprop_ratio(steps: list[StepMetrics], layer_widths: list[int]) -> float:
    """Weight-gradient elements computed over elements of a dense pass.

    ``layer_widths`` is N^0..N^L; each step contributes sum_l k^l · N^{l-1}
    against sum_l N^l · N^{l-1}.
    """
    if not steps:
        raise ValueError("empty trace")
    n_prev = layer_widths[:-1]
    n_out = layer_widths[1:]
    dense_per_step = sum(o * p for o, p in zip(n_out, n_prev))
    num = 0
    for sm in steps:
        num += sum(k * p for k, p in zip(sm.k, n_prev))
    return num / (dense_per_step * len(steps))


def _epoch_perm(seed: int, stream: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, stream, epoch]).permutation(n)


class _BatchAccumulator:
    """Accumulates per-sample gradients; applies the mean over the batch.

    Selections differ per sample, so the touched rows are the union of the
    batch's selections.
    """

    def __init__(self, net: Network):
        self.acc_w = [np.zeros_like(l.w) for l in net.layers]
        self.acc_b = [np.zeros_like(l.b) for l in net.layers]
        self.rows = [np.zeros(l.n_out, dtype=np.bool_) for l in net.layers]
        self.count = 0

    def add(self, grads: GradientSet) -> None:
        for i, g in enumerate(grads.layers):
            if g.sel is None:
                self.acc_w[i] += g.dw
                self.acc_b[i] += g.db
                self.rows[i][:] = True
            else:
                kernels._accum_rows(self.acc_w[i], self.acc_b[i],
                                    g.sel.indices, g.dw, g.db)
                self.rows[i][g.sel.indices] = True
        self.count += 1

    def flush(self, net: Network, lr: float) -> None:
        if self.count == 0:
            return
        scale = np.float32(1.0 / self.count)
        lr32 = np.float32(lr)
        for i, layer in enumerate(net.layers):
            idx = np.flatnonzero(self.rows[i]).astype(np.int64)
            if idx.size:
                kernels._sgd_rows(layer.w, layer.b, idx,
                                  self.acc_w[i][idx] * scale,
                                  self.acc_b[i][idx] * scale, lr32)
            self.acc_w[i][:] = 0.0
            self.acc_b[i][:] = 0.0
            self.rows[i][:] = False
        self.count = 0


def pretrain(net: Network, train_data: Dataset, test_data: Dataset,
             cfg: TrainConfig, metrics: list[StepMetrics],
             trace_writer=None, step0: int = 0) -> int:
    """Dense pretraining until the held-out accuracy gate; returns steps taken."""
    targets = one_hot(train_data.y, train_data.num_classes)
    dense_macs = dense_backward_macs(net)
    gate_n = min(GATE_SUBSET, len(test_data))
    gate_x, gate_y = test_data.x[:gate_n], test_data.y[:gate_n]
    step = step0
    for epoch in range(cfg.pretrain_max_epochs):
        perm = _epoch_perm(cfg.seed, 1, epoch, len(train_data))
        for j, idx in enumerate(perm):
            t0 = time.perf_counter()
            net.forward(train_data.x[idx])
            loss = loss_from_forward(net, targets[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss {loss} at pretrain step {step}")
            grads, svals, kvals = backward(net, targets[idx], Full())
            sgd_step(net, grads, cfg.learning_rate)
            sm = StepMetrics(step=step, loss=loss, k=tuple(kvals), s=tuple(svals),
                             macs_sparse=grads.macs, macs_dense=dense_macs,
                             elapsed_s=time.perf_counter() - t0, phase="pretrain")
            metrics.append(sm)
            if trace_writer is not None:
                trace_writer(sm)
            step += 1
            if (j + 1) % cfg.gate_check_interval == 0 or j + 1 == len(perm):
                correct = sum(
                    int(np.argmax(net.forward(gate_x[i]))) == int(gate_y[i])
                    for i in range(gate_n)
                )
                if correct / gate_n >= cfg.pretrain_target_accuracy:
                    return step - step0
    raise TrainingDiverged(
        f"pretraining did not reach {cfg.pretrain_target_accuracy:.0%} "
        f"within {cfg.pretrain_max_epochs} epochs"
    )


def train(net: Network, train_data: Dataset, test_data: Dataset, cfg: TrainConfig,
          trace_writer=None, skip_pretrain: bool = False) -> RunReport:
    """Run the configured engine for cfg.epochs over train_data.

    ``skip_pretrain`` lets a caller hand in an already-pretrained network in
    fine-tune mode (weights-file handoff); the caller attests the gate.
    """
    if len(train_data) == 0:
        raise ValueError("empty training set")
    if train_data.input_dim != net.layers[0].n_in:
        raise ValueError(
            f"data dim {train_data.input_dim} != network input {net.layers[0].n_in}"
        )
    if train_data.num_classes != net.layers[-1].n_out:
        raise ValueError("class count does not match the output width")

    metrics: list[StepMetrics] = []
    pretrain_steps = 0
    if cfg.mode == "fine-tune" and not skip_pretrain:
        pretrain_steps = pretrain(net, train_data, test_data, cfg, metrics, trace_writer)

    engine = cfg.engine
    state = AdaptiveState.fresh(engine.config, net.n_layers) if isinstance(engine, Adaptive) else None
    fixed_k = fixed_k_for(net, engine.ratio) if isinstance(engine, FixedTopK) else None

    targets = one_hot(train_data.y, train_data.num_classes)
    dense_macs = dense_backward_macs(net)
    widths = net.widths
    accum = _BatchAccumulator(net) if cfg.batch_size > 1 else None

    epoch_times: list[float] = []
    s_mean_per_epoch: list[list[float]] = []
    step = pretrain_steps
    loss = float("nan")
    for epoch in range(cfg.epochs):
        t_epoch = time.perf_counter()
        s_sums = np.zeros(net.n_layers)
        perm = _epoch_perm(cfg.seed, 2, epoch, len(train_data))
        for idx in perm:
            t0 = time.perf_counter()
            net.forward(train_data.x[idx])
            loss = loss_from_forward(net, targets[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss {loss} at step {step}")
            grads, svals, kvals = backward(net, targets[idx], engine,
                                           state=state, fixed_k=fixed_k)
            if accum is None:
                sgd_step(net, grads, cfg.learning_rate)
            else:
                accum.add(grads)
                if accum.count == cfg.batch_size:
                    accum.flush(net, cfg.learning_rate)
            sm = StepMetrics(step=step, loss=loss, k=tuple(kvals), s=tuple(svals),
                             macs_sparse=grads.macs, macs_dense=dense_macs,
                             elapsed_s=time.perf_counter() - t0, phase="main")
            metrics.append(sm)
            if trace_writer is not None:
                trace_writer(sm)
            s_sums += svals
            step += 1
        if accum is not None:
            accum.flush(net, cfg.learning_rate)
        epoch_times.append(time.perf_counter() - t_epoch)
        s_mean_per_epoch.append(list(s_sums / len(perm)))

    main_steps = [m for m in metrics if m.phase == "main"]
    total_sparse = sum(m.macs_sparse for m in main_steps)
    total_dense = sum(m.macs_dense for m in main_steps)
    return RunReport(
        engine=engine_label(engine),
        mode=cfg.mode,
        seed=cfg.seed,
        layer_widths=widths,
        final_accuracy=evaluate(net, test_data),
        mean_backprop_ratio=backprop_ratio(main_steps, widths),
        acceleration_analytic=total_dense / total_sparse,
        epoch_times_s=epoch_times,
        steps=metrics,
        pretrain_steps=pretrain_steps,
        final_loss=loss,
        s_mean_per_epoch=s_mean_per_epoch,
    )
