"""Inference pipeline: lookup-table resize, pixel normalization, and the
conv -> pool -> conv -> dense -> softmax forward pass.

Buffer layouts (these are load-bearing: the weight files and the backward
pass depend on them):

* network input: ``(S, S, 3)`` float32, row-major with interleaved RGB
* conv outputs:  ``(filters, side, side)`` float32, filter-major planar
* conv weights:  flat, indexed ``f*(K*K*Cin) + ky*(K*Cin) + kx*Cin + c``
* dense weights: flat, class-major ``w[class*flattened + i]``
* flatten order: the conv2 output's own planar storage order, no permutation

Convolution accumulates filter taps for every output pixel at once, one
``(ky, kx, c)`` tap per step; each pixel therefore sees the exact float32
operation sequence of the plain per-pixel triple loop, so the two forms are
bit-identical (verified against the scalar reference in the oracle module).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import DerivedDims, NetConfig, NumericPolicy
from .errors import ConfigError, DatasetError
from .numcore import F32, clip, compensated_sum, leaky_relu, require_finite, softmax
from .weightstore import WeightSet

DEFAULT_SOURCE_SIDE = 240  # device camera frame side


@dataclass(frozen=True)
class ResizePlan:
    """Precomputed source coordinates for one (input_size, source_side) pair."""

    sy: np.ndarray  # int32, length input_size
    sx: np.ndarray  # int32, length input_size
    input_size: int
    source_side: int


def build_resize_plan(input_size: int, source_side: int = DEFAULT_SOURCE_SIDE) -> ResizePlan:
    """Center-sampling nearest-neighbor lookup tables, computed once.

    lookup[i] = min(floor((i + 0.5) * source / input), source - 1), evaluated
    in float32 like the device does.
    """
    if source_side < input_size:
        raise ConfigError(
            f"source side {source_side} smaller than network input {input_size}")
    lookup = np.empty(input_size, dtype=np.int32)
    for i in range(input_size):
        scaled = F32(F32(i + 0.5) * F32(source_side)) / F32(input_size)
        lookup[i] = min(int(scaled), source_side - 1)
    return ResizePlan(sy=lookup, sx=lookup.copy(), input_size=input_size,
                      source_side=source_side)


def resize_normalize(rgb: np.ndarray, plan: ResizePlan, policy: NumericPolicy) -> np.ndarray:
    """Map a square uint8 RGB frame to the normalized (S, S, 3) input tensor.

    Normalization multiplies by the reciprocal-of-255 constant rather than
    dividing, so outputs can land a hair above 1.0.
    """
    side = plan.source_side
    if rgb.shape != (side, side, 3):
        raise DatasetError(
            f"frame shape {rgb.shape} does not match resize plan "
            f"({side}x{side}x3)")
    sampled = rgb[plan.sy[:, None], plan.sx[None, :], :]
    return sampled.astype(F32) * F32(policy.pixel_scale)


@dataclass
class ActivationSet:
    """Per-image forward buffers; one set per concurrent worker."""

    input: np.ndarray        # (S, S, 3)
    conv1_out: np.ndarray    # (F1, O, O)
    pool1_out: np.ndarray    # (F1, P, P)
    pool1_argmax: np.ndarray  # (F1, P, P) int8 in {0,1,2,3}, row-major window
    conv2_out: np.ndarray    # (F2, Q, Q)
    logits: np.ndarray       # (C,)
    probs: np.ndarray        # (C,)

    @classmethod
    def allocate(cls, cfg: NetConfig, dims: DerivedDims) -> "ActivationSet":
        return cls(
            input=np.zeros((cfg.input_size, cfg.input_size, 3), dtype=F32),
            conv1_out=np.zeros((cfg.conv1_filters, dims.conv1_out, dims.conv1_out),
                               dtype=F32),
            pool1_out=np.zeros((cfg.conv1_filters, dims.pool1_out, dims.pool1_out),
                               dtype=F32),
            pool1_argmax=np.zeros((cfg.conv1_filters, dims.pool1_out, dims.pool1_out),
                                  dtype=np.int8),
            conv2_out=np.zeros((cfg.conv2_filters, dims.conv2_out, dims.conv2_out),
                               dtype=F32),
            logits=np.zeros(cfg.num_classes, dtype=F32),
            probs=np.zeros(cfg.num_classes, dtype=F32),
        )

    def flattened(self) -> np.ndarray:
        """Dense-layer input: conv2 output in its native planar order."""
        return self.conv2_out.reshape(-1)


def conv_forward(image_hwc: np.ndarray, weights_flat: np.ndarray,
                 biases: np.ndarray, kernel: int, filters: int,
                 policy: NumericPolicy) -> np.ndarray:
    """Valid convolution (stride 1), pre-activation clip, then leaky ReLU.

    ``image_hwc`` is channel-last ``(H, W, Cin)``; a planar input is passed
    as a transposed view.  Returns the planar ``(filters, out, out)`` map.
    """
    height, width, channels = image_hwc.shape
    if height != width:
        raise ConfigError(f"convolution input must be square, got {height}x{width}")
    out_side = height - (kernel - 1)
    if out_side < 1:
        raise ConfigError(f"kernel {kernel} larger than input side {height}")
    taps = weights_flat.reshape(filters, kernel, kernel, channels)
    out = np.empty((filters, out_side, out_side), dtype=F32)
    for f in range(filters):
        acc = np.zeros((out_side, out_side), dtype=F32)
        for ky in range(kernel):
            for kx in range(kernel):
                for c in range(channels):
                    acc += image_hwc[ky:ky + out_side, kx:kx + out_side, c] * taps[f, ky, kx, c]
        pre = clip(acc + biases[f], policy.preact_clip)
        out[f] = leaky_relu(pre, policy.leaky_alpha)
    return out


def maxpool_forward(conv1_out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping 2x2 max pool; keeps each window's argmax for backprop.

    Ties resolve to the lowest index (row-major within the window), so
    gradient routing is deterministic.
    """
    filters, side, _ = conv1_out.shape
    if side % 2 != 0:
        raise ConfigError(f"pool input side {side} is odd")
    half = side // 2
    windows = (conv1_out.reshape(filters, half, 2, half, 2)
               .transpose(0, 1, 3, 2, 4)
               .reshape(filters, half, half, 4))
    argmax = windows.argmax(axis=3).astype(np.int8)
    pooled = np.take_along_axis(windows, argmax[..., None].astype(np.intp),
                                axis=3)[..., 0]
    return pooled, argmax


def dense_forward(flat: np.ndarray, weights_flat: np.ndarray,
                  biases: np.ndarray, num_classes: int) -> np.ndarray:
    """Compensated-summation dot products, one per class, plus bias."""
    per_class = weights_flat.reshape(num_classes, flat.shape[0])
    products = per_class * flat
    return compensated_sum(products, axis=1) + biases


def forward_pass(image: np.ndarray, weights: WeightSet, acts: ActivationSet,
                 cfg: NetConfig, policy: NumericPolicy) -> np.ndarray:
    """Run the full pipeline, filling every ActivationSet buffer.

    Pure function of (image, weights): identical inputs give bit-identical
    outputs.
    """
    acts.input[...] = image
    acts.conv1_out[...] = conv_forward(acts.input, weights.conv1_w, weights.conv1_b,
                                       cfg.conv1_kernel, cfg.conv1_filters, policy)
    pooled, argmax = maxpool_forward(acts.conv1_out)
    acts.pool1_out[...] = pooled
    acts.pool1_argmax[...] = argmax
    # conv2 reads the planar pool output through a channel-last view
    acts.conv2_out[...] = conv_forward(acts.pool1_out.transpose(1, 2, 0),
                                       weights.conv2_w, weights.conv2_b,
                                       cfg.conv2_kernel, cfg.conv2_filters, policy)
    acts.logits[...] = dense_forward(acts.flattened(), weights.output_w,
                                     weights.output_b, cfg.num_classes)
    require_finite(acts.logits, "dense logits")
    acts.probs[...] = softmax(acts.logits)
    return acts.probs
