"""Adaptive error-propagation-rate controller.

Per layer and per training sample, the controller turns the magnitude of the
local error vector into a fraction S of gradient components to compute:

  1. Y = sum of |local error components| for the layer,
  2. the running maximum of Y over the run normalizes it,
  3. S_hat interpolates linearly between s_min and s_max by Y / Y_max,
  4. S = S_hat * zeta^(L - l) damps layers far from the output,
  5. k = clamp(floor(S * N), 1, N).

y_max is raised *before* interpolating, which pins S_hat into
[s_min, s_max] without an explicit clamp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Recommended presets (see README): scratch training and fine-tuning.
SCRATCH_PRESET = (0.1, 0.8, 0.9)  # s_min, s_max, zeta
FINETUNE_PRESET = (0.1, 0.4, 0.9)


@dataclass(frozen=True)
class AdaptiveConfig:
    s_min: float
    s_max: float
    zeta: float

    def __post_init__(self):
        if not 0.0 <= self.s_min <= self.s_max <= 1.0:
            raise ValueError(
                f"need 0 <= s_min <= s_max <= 1, got s_min={self.s_min} s_max={self.s_max}"
            )
        if not 0.0 < self.zeta <= 1.0:
            raise ValueError(f"need 0 < zeta <= 1, got {self.zeta}")

    @classmethod
    def scratch(cls) -> "AdaptiveConfig":
        return cls(*SCRATCH_PRESET)

    @classmethod
    def finetune(cls) -> "AdaptiveConfig":
        return cls(*FINETUNE_PRESET)


@dataclass
class AdaptiveState:
    """Per-layer running maxima of the layer error, owned by one training loop."""

    config: AdaptiveConfig
    n_layers: int
    y_max: np.ndarray  # float64, NaN = not yet observed

    @classmethod
    def fresh(cls, config: AdaptiveConfig, n_layers: int) -> "AdaptiveState":
        if n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        return cls(config=config, n_layers=n_layers,
                   y_max=np.full(n_layers, np.nan, dtype=np.float64))

    def _check_layer(self, layer: int) -> None:
        if not 1 <= layer <= self.n_layers:
            raise ValueError(f"layer must be in [1, {self.n_layers}], got {layer}")


def layer_error_sum(delta: np.ndarray) -> float:
    """Y: the sum of absolute local-error components."""
    return float(np.abs(delta).sum())


def update_and_rate(state: AdaptiveState, layer: int, y: float) -> float:
    """Raise the layer's y_max to at least ``y``, then interpolate the rate.

    Returns S_hat in [s_min, s_max].  A layer whose error has always been
    zero gets s_min.
    """
    state._check_layer(layer)
    cfg = state.config
    i = layer - 1
    ym = state.y_max[i]
    if math.isnan(ym) or y > ym:
        ym = y
        state.y_max[i] = ym
    if ym == 0.0:
        return cfg.s_min
    # y/ym <= 1 exactly in IEEE once y_max is raised first; forming the ratio
    # before scaling keeps the rate inside the band even for denormal errors.
    return min(cfg.s_max, cfg.s_min + (y / ym) * (cfg.s_max - cfg.s_min))


def damp(s_hat: float, layer: int, n_layers: int, zeta: float) -> float:
    """Geometric attenuation by distance from the output layer (1-based ``layer``)."""
    if not 1 <= layer <= n_layers:
        raise ValueError(f"layer must be in [1, {n_layers}], got {layer}")
    return s_hat * zeta ** (n_layers - layer)


def rate_to_k(s: float, n: int) -> int:
    """k = floor(S·N), clamped into [1, N] so every layer makes progress."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if s < 0.0:
        raise ValueError("rate must be >= 0")
    return min(n, max(1, int(math.floor(s * n))))


def layer_rate(state: AdaptiveState, layer: int, delta: np.ndarray) -> tuple[float, int]:
    """One controller step for a layer: (damped rate S, component count k)."""
    y = layer_error_sum(delta)
    s_hat = update_and_rate(state, layer, y)
    s = damp(s_hat, layer, state.n_layers, state.config.zeta)
    return s, rate_to_k(s, delta.shape[0])
