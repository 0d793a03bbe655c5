"""Bias-corrected Adam with weight clipping.

The per-step scale ``lr_t = lr * sqrt(1 - beta2^t) / (1 - beta1^t)`` is
computed in double precision (it is a scalar; float32 evaluation would cost
~1e-5 relative accuracy for no benefit), while the per-parameter state and
updates run in float32 like the rest of the engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import DerivedDims, NumericPolicy, TrainConfig
from .errors import NumericFault
from .weightstore import PARAM_FIELDS, WeightSet


@dataclass
class AdamState:
    """First/second moment arrays parallel to the weight arrays, plus the
    global step counter (monotone across epochs and batches)."""

    m: WeightSet
    v: WeightSet
    step: int = 0

    @classmethod
    def allocate(cls, dims: DerivedDims) -> "AdamState":
        return cls(m=WeightSet.zeros(dims), v=WeightSet.zeros(dims))


def bias_corrected_lr(cfg: TrainConfig, step: int) -> float:
    """Effective learning rate after Adam's zero-init bias correction."""
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    return (cfg.learning_rate
            * math.sqrt(1.0 - cfg.beta2 ** step) / (1.0 - cfg.beta1 ** step))


def adam_step(weights: WeightSet, grads, state: AdamState, cfg: TrainConfig,
              policy: NumericPolicy) -> None:
    """One Adam update over every parameter array, in place.

    ``grads`` is any object exposing gradient arrays under the same field
    names as :class:`WeightSet` (the trainer hands in its batch-averaged
    accumulators).  Increments ``state.step`` before use.
    """
    state.step += 1
    lr_t = bias_corrected_lr(cfg, state.step)
    b1, b2, eps = cfg.beta1, cfg.beta2, cfg.epsilon
    for name in PARAM_FIELDS:
        w = getattr(weights, name)
        g = getattr(grads, name)
        m = getattr(state.m, name)
        v = getattr(state.v, name)
        m[...] = b1 * m + (1.0 - b1) * g
        v[...] = b2 * v + (1.0 - b2) * g * g
        w -= lr_t * m / (np.sqrt(v) + eps)
        np.clip(w, -policy.weight_clip, policy.weight_clip, out=w)
        if not np.isfinite(w).all():
            raise NumericFault(f"non-finite weight after Adam update in {name}")
