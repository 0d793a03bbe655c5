"""Backpropagation with batch-level gradient accumulation.

Two kinds of buffer live in :class:`GradientSet`, with different zeroing
disciplines:

* weight-gradient accumulators: summed with ``+=`` across every image of a
  mini-batch, zeroed only at batch boundaries by :func:`zero_batch_grads`;
* propagation buffers (``dense_grad``, ``pool1_grad``, ``conv1_grad``):
  carry the per-image error signal between layers and are rewritten for
  every image.

Every gradient contribution is validated finite and clipped to the policy's
gradient bound before it is written.  Pre-activation clipping in the forward
pass is treated as identity here (its slope is 1 inside the band), and the
leaky-ReLU slope is recovered from the stored activation's sign, which
matches the pre-activation's sign for a positive slope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import DerivedDims, NetConfig, NumericPolicy
from .errors import NumericFault
from .forward import ActivationSet
from .numcore import F32, clip, leaky_relu_grad, require_finite
from .weightstore import PARAM_FIELDS, WeightSet

ACCUMULATOR_FIELDS = PARAM_FIELDS
PROPAGATION_FIELDS = ("dense_grad", "pool1_grad", "conv1_grad")


@dataclass
class GradientSet:
    """Batch accumulators plus per-image propagation buffers."""

    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    output_w: np.ndarray
    output_b: np.ndarray
    dense_grad: np.ndarray  # (flattened,)
    pool1_grad: np.ndarray  # (F1, P, P)
    conv1_grad: np.ndarray  # (F1, O, O)

    @classmethod
    def allocate(cls, cfg: NetConfig, dims: DerivedDims) -> "GradientSet":
        sizes = WeightSet.sizes(dims)
        return cls(
            **{name: np.zeros(size, dtype=F32) for name, size in sizes.items()},
            dense_grad=np.zeros(dims.flattened, dtype=F32),
            pool1_grad=np.zeros((cfg.conv1_filters, dims.pool1_out, dims.pool1_out),
                                dtype=F32),
            conv1_grad=np.zeros((cfg.conv1_filters, dims.conv1_out, dims.conv1_out),
                                dtype=F32),
        )

    def accumulators(self):
        for name in ACCUMULATOR_FIELDS:
            yield name, getattr(self, name)


def zero_batch_grads(grads: GradientSet) -> None:
    """Zero the six weight-gradient accumulators; propagation buffers keep
    whatever the last image left in them."""
    for _, arr in grads.accumulators():
        arr.fill(0.0)


def _checked_clip(values: np.ndarray, bound: float, context: str) -> np.ndarray:
    require_finite(values, context)
    return clip(values, bound)


def backward_image(acts: ActivationSet, image: np.ndarray, true_class: int,
                   weights: WeightSet, grads: GradientSet, cfg: NetConfig,
                   policy: NumericPolicy) -> None:
    """Accumulate one image's weight gradients into ``grads``.

    ``acts`` must hold the buffers of a completed forward pass on exactly
    ``image``; the propagation buffers are overwritten, the accumulators
    are added to.
    """
    num_classes = cfg.num_classes
    if not 0 <= true_class < num_classes:
        raise IndexError(f"true_class {true_class} out of range for {num_classes} classes")
    bound = policy.grad_clip
    flat = acts.flattened()
    flat_size = flat.shape[0]

    # output layer: softmax + cross-entropy delta
    delta = acts.probs.copy()
    delta[true_class] -= F32(1.0)
    require_finite(delta, "output delta")

    out_w_view = grads.output_w.reshape(num_classes, flat_size)
    out_w_view += _checked_clip(np.outer(delta, flat), bound, "dense weight gradient")
    grads.output_b += _checked_clip(delta, bound, "dense bias gradient")

    # error signal into the flattened conv2 output
    signal = np.zeros(flat_size, dtype=F32)
    dense_w = weights.output_w.reshape(num_classes, flat_size)
    for c in range(num_classes):
        signal += delta[c] * dense_w[c]
    signal *= leaky_relu_grad(flat, policy.leaky_alpha)
    grads.dense_grad[...] = _checked_clip(signal, bound, "dense propagation buffer")

    conv2_signal = grads.dense_grad.reshape(acts.conv2_out.shape)  # (F2, Q, Q)
    k2 = cfg.conv2_kernel
    q = conv2_signal.shape[1]
    taps2 = weights.conv2_w.reshape(cfg.conv2_filters, k2, k2, cfg.conv1_filters)

    # conv2 weight/bias adjoints against the pool output
    contrib2 = np.empty((cfg.conv2_filters, k2, k2, cfg.conv1_filters), dtype=F32)
    for ky in range(k2):
        for kx in range(k2):
            window = acts.pool1_out[:, ky:ky + q, kx:kx + q]
            contrib2[:, ky, kx, :] = np.einsum("gyx,fyx->gf", conv2_signal, window)
    grads.conv2_w += _checked_clip(contrib2.reshape(-1), bound, "conv2 weight gradient")
    grads.conv2_b += _checked_clip(conv2_signal.sum(axis=(1, 2)), bound,
                                   "conv2 bias gradient")

    # conv2 input gradient (full-correlation adjoint) into the pool output
    pool_signal = np.zeros_like(acts.pool1_out)
    for ky in range(k2):
        for kx in range(k2):
            pool_signal[:, ky:ky + q, kx:kx + q] += np.einsum(
                "gyx,gf->fyx", conv2_signal, taps2[:, ky, kx, :])
    grads.pool1_grad[...] = _checked_clip(pool_signal, bound, "pool propagation buffer")

    # route each pooled gradient to its window's recorded argmax cell
    filters1, pool_side, _ = acts.pool1_out.shape
    conv1_side = acts.conv1_out.shape[1]
    routed_windows = np.zeros((filters1, pool_side, pool_side, 4), dtype=F32)
    np.put_along_axis(routed_windows,
                      acts.pool1_argmax[..., None].astype(np.intp),
                      grads.pool1_grad[..., None], axis=3)
    routed = (routed_windows.reshape(filters1, pool_side, pool_side, 2, 2)
              .transpose(0, 1, 3, 2, 4)
              .reshape(filters1, conv1_side, conv1_side))

    conv1_signal = routed * leaky_relu_grad(acts.conv1_out, policy.leaky_alpha)
    grads.conv1_grad[...] = _checked_clip(conv1_signal, bound,
                                          "conv1 propagation buffer")

    # conv1 weight/bias adjoints against the input tensor
    k1 = cfg.conv1_kernel
    contrib1 = np.empty((cfg.conv1_filters, k1, k1, cfg.input_channels), dtype=F32)
    for ky in range(k1):
        for kx in range(k1):
            window = image[ky:ky + conv1_side, kx:kx + conv1_side, :]
            contrib1[:, ky, kx, :] = np.einsum("fyx,yxc->fc",
                                               grads.conv1_grad, window)
    grads.conv1_w += _checked_clip(contrib1.reshape(-1), bound, "conv1 weight gradient")
    grads.conv1_b += _checked_clip(grads.conv1_grad.sum(axis=(1, 2)), bound,
                                   "conv1 bias gradient")

    for name, arr in grads.accumulators():
        if not np.isfinite(arr).all():
            raise NumericFault(f"non-finite accumulated gradient in {name}")
