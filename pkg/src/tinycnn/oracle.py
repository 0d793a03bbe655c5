"""Independent reference implementations used as ground truth by the tests.

Three deliberately separate code paths live here:

* :func:`reference_forward` / :func:`reference_loss`: the whole pipeline in
  float64 with brute-force per-window evaluation and plain summation;
* :func:`reference_backward`: the layer adjoints in float64 with the same
  brute-force structure, so formula errors can be separated from float32
  rounding when comparing against finite differences;
* :func:`finite_diff_grads`: central-difference gradients of the float64
  loss, with branch-change masking (finite differences are meaningless
  across a ReLU kink, a clip boundary, or a pool argmax switch);
* :func:`conv_forward_scalar`: the per-pixel scalar float32 convolution
  loop, kept for bit-identity checks against the production kernel.

None of these share inner-loop code with the production modules.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import NetConfig, NumericPolicy, derive_dims
from .numcore import F32, LOSS_FLOOR, clip, leaky_relu
from .weightstore import PARAM_FIELDS, WeightSet

F64 = np.float64


def promote_weights(weights: WeightSet) -> dict[str, np.ndarray]:
    return {name: arr.astype(F64) for name, arr in weights.arrays()}


def _leaky64(x: np.ndarray, alpha: float) -> np.ndarray:
    return np.where(x >= 0, x, alpha * x)


@dataclass
class ReferenceActivations:
    """Float64 intermediates plus the branch data the kink mask needs."""

    conv1_pre: np.ndarray
    conv1_act: np.ndarray
    pool_out: np.ndarray
    pool_argmax: np.ndarray
    conv2_pre: np.ndarray
    conv2_act: np.ndarray
    flat: np.ndarray
    logits: np.ndarray
    probs: np.ndarray

    def branch_signature(self, policy: NumericPolicy) -> tuple[np.ndarray, ...]:
        bound = policy.preact_clip
        return (
            self.conv1_pre >= 0, np.abs(self.conv1_pre) >= bound,
            self.conv2_pre >= 0, np.abs(self.conv2_pre) >= bound,
            self.pool_argmax.copy(),
        )


def reference_forward(weights64: dict[str, np.ndarray], image64: np.ndarray,
                      cfg: NetConfig, policy: NumericPolicy) -> ReferenceActivations:
    """Brute-force float64 forward pass; window-by-window direct evaluation."""
    k1, k2 = cfg.conv1_kernel, cfg.conv2_kernel
    f1, f2 = cfg.conv1_filters, cfg.conv2_filters
    side = image64.shape[0]
    o = side - (k1 - 1)
    p = o // 2
    q = p - (k2 - 1)
    bound = policy.preact_clip

    taps1 = weights64["conv1_w"].reshape(f1, k1, k1, cfg.input_channels)
    conv1_pre = np.empty((f1, o, o), dtype=F64)
    for f in range(f1):
        for y in range(o):
            for x in range(o):
                window = image64[y:y + k1, x:x + k1, :]
                conv1_pre[f, y, x] = np.sum(window * taps1[f]) + weights64["conv1_b"][f]
    conv1_act = _leaky64(np.clip(conv1_pre, -bound, bound), policy.leaky_alpha)

    pool_out = np.empty((f1, p, p), dtype=F64)
    pool_argmax = np.empty((f1, p, p), dtype=np.int64)
    for f in range(f1):
        for py in range(p):
            for px in range(p):
                window = conv1_act[f, 2 * py:2 * py + 2, 2 * px:2 * px + 2].reshape(4)
                winner = int(np.argmax(window))  # first max wins ties
                pool_argmax[f, py, px] = winner
                pool_out[f, py, px] = window[winner]

    taps2 = weights64["conv2_w"].reshape(f2, k2, k2, f1)
    conv2_pre = np.empty((f2, q, q), dtype=F64)
    for g in range(f2):
        for y in range(q):
            for x in range(q):
                window = pool_out[:, y:y + k2, x:x + k2].transpose(1, 2, 0)
                conv2_pre[g, y, x] = np.sum(window * taps2[g]) + weights64["conv2_b"][g]
    conv2_act = _leaky64(np.clip(conv2_pre, -bound, bound), policy.leaky_alpha)

    flat = conv2_act.reshape(-1)
    dense = weights64["output_w"].reshape(cfg.num_classes, flat.size)
    logits = dense @ flat + weights64["output_b"]
    shifted = np.exp(logits - logits.max())
    probs = shifted / shifted.sum()
    return ReferenceActivations(conv1_pre, conv1_act, pool_out, pool_argmax,
                                conv2_pre, conv2_act, flat, logits, probs)


def reference_loss(weights64: dict[str, np.ndarray], image64: np.ndarray,
                   true_class: int, cfg: NetConfig, policy: NumericPolicy,
                   ) -> tuple[float, tuple[np.ndarray, ...]]:
    acts = reference_forward(weights64, image64, cfg, policy)
    loss = -np.log(max(acts.probs[true_class], LOSS_FLOOR))
    return float(loss), acts.branch_signature(policy)


def reference_backward(weights64: dict[str, np.ndarray], image64: np.ndarray,
                       true_class: int, cfg: NetConfig, policy: NumericPolicy,
                       ) -> dict[str, np.ndarray]:
    """Float64 analytic gradients with brute-force per-tap loops.

    Mirrors the production formulas (clip treated as identity, leaky slope
    from the pre-activation sign, per-contribution gradient clipping) but
    shares no code with them.
    """
    k1, k2 = cfg.conv1_kernel, cfg.conv2_kernel
    f1, f2 = cfg.conv1_filters, cfg.conv2_filters
    bound = policy.grad_clip
    alpha = policy.leaky_alpha
    acts = reference_forward(weights64, image64, cfg, policy)
    q = acts.conv2_pre.shape[1]
    p = acts.pool_out.shape[1]
    o = acts.conv1_pre.shape[1]

    delta = acts.probs.copy()
    delta[true_class] -= 1.0
    out_w = np.clip(np.outer(delta, acts.flat), -bound, bound)
    out_b = np.clip(delta, -bound, bound)

    dense = weights64["output_w"].reshape(cfg.num_classes, acts.flat.size)
    dsignal = dense.T @ delta
    dsignal *= np.where(acts.conv2_pre.reshape(-1) >= 0, 1.0, alpha)
    dsignal = np.clip(dsignal, -bound, bound)
    sig2 = dsignal.reshape(f2, q, q)

    taps2 = weights64["conv2_w"].reshape(f2, k2, k2, f1)
    conv2_w = np.empty((f2, k2, k2, f1), dtype=F64)
    for g in range(f2):
        for ky in range(k2):
            for kx in range(k2):
                for f in range(f1):
                    conv2_w[g, ky, kx, f] = np.sum(
                        sig2[g] * acts.pool_out[f, ky:ky + q, kx:kx + q])
    conv2_w = np.clip(conv2_w.reshape(-1), -bound, bound)
    conv2_b = np.clip(sig2.sum(axis=(1, 2)), -bound, bound)

    pool_signal = np.zeros((f1, p, p), dtype=F64)
    for g in range(f2):
        for ky in range(k2):
            for kx in range(k2):
                pool_signal[:, ky:ky + q, kx:kx + q] += np.multiply.outer(
                    taps2[g, ky, kx, :], sig2[g])
    pool_signal = np.clip(pool_signal, -bound, bound)

    routed = np.zeros((f1, o, o), dtype=F64)
    for f in range(f1):
        for py in range(p):
            for px in range(p):
                winner = acts.pool_argmax[f, py, px]
                routed[f, 2 * py + winner // 2, 2 * px + winner % 2] = \
                    pool_signal[f, py, px]
    sig1 = routed * np.where(acts.conv1_pre >= 0, 1.0, alpha)
    sig1 = np.clip(sig1, -bound, bound)

    conv1_w = np.empty((f1, k1, k1, cfg.input_channels), dtype=F64)
    for f in range(f1):
        for ky in range(k1):
            for kx in range(k1):
                for c in range(cfg.input_channels):
                    conv1_w[f, ky, kx, c] = np.sum(
                        sig1[f] * image64[ky:ky + o, kx:kx + o, c])
    conv1_w = np.clip(conv1_w.reshape(-1), -bound, bound)
    conv1_b = np.clip(sig1.sum(axis=(1, 2)), -bound, bound)

    return {"conv1_w": conv1_w, "conv1_b": conv1_b,
            "conv2_w": conv2_w, "conv2_b": conv2_b,
            "output_w": out_w.reshape(-1), "output_b": out_b}


def _signatures_differ(a: tuple[np.ndarray, ...], b: tuple[np.ndarray, ...]) -> bool:
    return any(not np.array_equal(x, y) for x, y in zip(a, b))


def finite_diff_grads(weights: WeightSet, image: np.ndarray, true_class: int,
                      cfg: NetConfig, policy: NumericPolicy, h: float = 1e-3,
                      ) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Central-difference gradients of the float64 loss per parameter.

    Returns ``(grads, masks)``: ``masks[name][i]`` is True when the +/-h
    evaluations landed on different activation branches, making the
    difference quotient unusable for parameter ``i``.
    """
    weights64 = promote_weights(weights)
    image64 = np.asarray(image, dtype=F64)
    grads: dict[str, np.ndarray] = {}
    masks: dict[str, np.ndarray] = {}
    for name in PARAM_FIELDS:
        arr = weights64[name]
        grad = np.zeros(arr.size, dtype=F64)
        mask = np.zeros(arr.size, dtype=bool)
        for i in range(arr.size):
            saved = arr[i]
            arr[i] = saved + h
            loss_plus, sig_plus = reference_loss(weights64, image64, true_class,
                                                 cfg, policy)
            arr[i] = saved - h
            loss_minus, sig_minus = reference_loss(weights64, image64, true_class,
                                                   cfg, policy)
            arr[i] = saved
            grad[i] = (loss_plus - loss_minus) / (2.0 * h)
            mask[i] = _signatures_differ(sig_plus, sig_minus)
        grads[name] = grad
        masks[name] = mask
    return grads, masks


@dataclass
class GradCheckResult:
    max_rel_error: float         # float64 analytic vs finite differences
    production_rel_error: float  # float32 production vs float64 analytic
    checked: int
    masked: int
    draws: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return (self.max_rel_error < self.tolerance
                and self.production_rel_error < self.tolerance)


def gradient_check(cfg: NetConfig, policy: NumericPolicy, draws: int = 20,
                   seed: int = 0, h: float = 1e-3, tolerance: float = 1e-3,
                   ) -> GradCheckResult:
    """Two-stage gradient check over random (weights, input, label) draws.

    Stage 1 compares the float64 analytic gradients against central finite
    differences (both in the double-precision oracle, isolating formula
    errors from rounding).  Stage 2 compares the production float32 backward
    pass against the float64 analytic gradients; its denominator floor is
    wider because float32 rounding dominates tiny entries.
    """
    from .backward import GradientSet, backward_image, zero_batch_grads
    from .forward import ActivationSet, forward_pass
    from .weightstore import he_init

    dims = derive_dims(cfg)
    rng = np.random.default_rng(seed)
    acts = ActivationSet.allocate(cfg, dims)
    grads = GradientSet.allocate(cfg, dims)
    worst_formula = 0.0
    worst_production = 0.0
    checked = 0
    masked_total = 0
    for draw in range(draws):
        weights = he_init(cfg, int(rng.integers(0, 2 ** 63)), policy)
        image = rng.random((cfg.input_size, cfg.input_size, 3), dtype=F32)
        label = int(rng.integers(0, cfg.num_classes))
        weights64 = promote_weights(weights)
        image64 = image.astype(F64)

        forward_pass(image, weights, acts, cfg, policy)
        zero_batch_grads(grads)
        backward_image(acts, image, label, weights, grads, cfg, policy)

        analytic = reference_backward(weights64, image64, label, cfg, policy)
        numeric, masks = finite_diff_grads(weights, image, label, cfg, policy, h)
        for name in PARAM_FIELDS:
            keep = ~masks[name]
            masked_total += int(masks[name].sum())
            checked += int(keep.sum())
            denom = np.maximum(np.abs(numeric[name][keep]), 1e-6)
            rel = np.abs(analytic[name][keep] - numeric[name][keep]) / denom
            if rel.size:
                worst_formula = max(worst_formula, float(rel.max()))
            produced = getattr(grads, name).astype(F64)
            bridge = (np.abs(produced - analytic[name])
                      / np.maximum(np.abs(analytic[name]), 1e-3))
            worst_production = max(worst_production, float(bridge.max()))
    return GradCheckResult(max_rel_error=worst_formula,
                           production_rel_error=worst_production,
                           checked=checked, masked=masked_total, draws=draws,
                           tolerance=tolerance)


def conv_forward_scalar(image_hwc: np.ndarray, weights_flat: np.ndarray,
                        biases: np.ndarray, kernel: int, filters: int,
                        policy: NumericPolicy) -> np.ndarray:
    """Per-pixel scalar float32 convolution, one tap at a time.

    Same accumulation order as the production kernel (ky, then kx, then
    channel), so results must match it bit for bit.
    """
    height, width, channels = image_hwc.shape
    out_side = height - (kernel - 1)
    taps = weights_flat.reshape(filters, kernel, kernel, channels)
    out = np.empty((filters, out_side, out_side), dtype=F32)
    for f in range(filters):
        for y in range(out_side):
            for x in range(out_side):
                total = F32(0.0)
                for ky in range(kernel):
                    for kx in range(kernel):
                        for c in range(channels):
                            total = F32(total + F32(image_hwc[y + ky, x + kx, c]
                                                    * taps[f, ky, kx, c]))
                pre = clip(F32(total + biases[f]), policy.preact_clip)
                out[f, y, x] = leaky_relu(pre, policy.leaky_alpha)
    return out
