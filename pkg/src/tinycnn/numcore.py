"""Numeric safety kernel: compensated summation, activations, clipping,
softmax, and cross-entropy.

Everything here runs in 32-bit float arithmetic.  Python float scalars mixed
into float32 array expressions stay float32 under NumPy's promotion rules;
``np.float64`` scalars would silently upcast, so they are never used.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericFault

F32 = np.float32

LOSS_FLOOR = 1e-12  # probability floor keeping cross-entropy finite


class KahanAccumulator:
    """Compensated running sum in float32.

    Uses the improved Kahan-Babuska (Neumaier) update: the compensation is
    kept in its own accumulator until read-out.  Folding it into the next
    term (the textbook variant) loses the correction entirely when a large
    term follows a small one, e.g. summing [1e8, 1, -1e8].
    """

    __slots__ = ("total", "compensation")

    def __init__(self):
        self.total = F32(0.0)
        self.compensation = F32(0.0)

    def add(self, term) -> "KahanAccumulator":
        term = F32(term)
        updated = F32(self.total + term)
        if abs(self.total) >= abs(term):
            lost = F32(F32(self.total - updated) + term)
        else:
            lost = F32(F32(term - updated) + self.total)
        self.compensation = F32(self.compensation + lost)
        self.total = updated
        return self

    def result(self) -> np.float32:
        return F32(self.total + self.compensation)


def kahan_add(acc: KahanAccumulator, term) -> KahanAccumulator:
    """Add one finite term to a compensated accumulator."""
    return acc.add(term)


def kahan_sum(terms) -> np.float32:
    """Compensated float32 sum of an iterable of finite terms."""
    acc = KahanAccumulator()
    for term in terms:
        acc.add(term)
    return acc.result()


_FOLD = 8
_TAIL = 16


def compensated_sum(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """Compensated float32 sum along ``axis``, vectorized.

    Lane-blocked form of the same Neumaier update as
    :class:`KahanAccumulator`: terms are folded ``_FOLD`` sequential steps at
    a time across parallel lanes, and lane sums together with their
    compensations are folded again until a short sequential tail remains.
    Deterministic for a fixed input shape.
    """
    current = np.moveaxis(np.asarray(values, dtype=F32), axis, -1)
    while current.shape[-1] > _TAIL:
        count = current.shape[-1]
        lanes = -(-count // _FOLD)
        pad = lanes * _FOLD - count
        if pad:
            padding = np.zeros(current.shape[:-1] + (pad,), dtype=F32)
            current = np.concatenate([current, padding], axis=-1)
        stacked = current.reshape(current.shape[:-1] + (_FOLD, lanes))
        sums = np.zeros(current.shape[:-1] + (lanes,), dtype=F32)
        comps = np.zeros_like(sums)
        for step in range(_FOLD):
            term = stacked[..., step, :]
            updated = sums + term
            bigger = np.abs(sums) >= np.abs(term)
            comps = comps + np.where(bigger, (sums - updated) + term,
                                     (term - updated) + sums)
            sums = updated
        current = np.concatenate([sums, comps], axis=-1)
    sums = np.zeros(current.shape[:-1], dtype=F32)
    comps = np.zeros_like(sums)
    for step in range(current.shape[-1]):
        term = current[..., step]
        updated = sums + term
        bigger = np.abs(sums) >= np.abs(term)
        comps = comps + np.where(bigger, (sums - updated) + term,
                                 (term - updated) + sums)
        sums = updated
    return sums + comps


def leaky_relu(x, alpha: float = 0.1):
    """x for x >= 0, alpha*x otherwise.  Works on scalars and arrays."""
    x = np.asarray(x, dtype=F32)
    out = np.where(x >= 0, x, F32(alpha) * x)
    return out[()] if out.ndim == 0 else out


def leaky_relu_grad(x, alpha: float = 0.1):
    """Slope of leaky_relu; the x == 0 point takes the positive branch (1.0)."""
    x = np.asarray(x, dtype=F32)
    out = np.where(x >= 0, F32(1.0), F32(alpha))
    return out[()] if out.ndim == 0 else out


def clip(x, bound: float):
    """Clamp to [-bound, bound].  NaN anywhere raises :class:`NumericFault`.

    Infinities clamp to the bound like any other out-of-range value; NaN has
    no ordering and would silently poison downstream sums, so it is treated
    as a numeric fault instead.
    """
    x = np.asarray(x, dtype=F32)
    if np.isnan(x).any():
        raise NumericFault(f"NaN passed to clip(bound={bound})")
    bound = F32(bound)
    out = np.minimum(np.maximum(x, -bound), bound)
    return out[()] if out.ndim == 0 else out


def require_finite(values: np.ndarray, context: str) -> None:
    """Raise :class:`NumericFault` unless every entry is finite."""
    if not np.isfinite(values).all():
        raise NumericFault(f"non-finite value in {context}")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax over a 1-D float32 logit vector."""
    logits = np.asarray(logits, dtype=F32)
    if logits.ndim != 1 or logits.size < 1:
        raise ValueError(f"softmax expects a non-empty vector, got shape {logits.shape}")
    require_finite(logits, "softmax logits")
    shifted = logits - logits.max()
    exps = np.exp(shifted)
    # Plain sequential denominator: the class count is tiny, compensation is
    # reserved for the long dense-layer dot products.
    denom = F32(0.0)
    for value in exps:
        denom = F32(denom + value)
    return exps / denom


def cross_entropy(probs: np.ndarray, true_class: int) -> np.float32:
    """Negative log-likelihood with a probability floor of ``LOSS_FLOOR``."""
    probs = np.asarray(probs, dtype=F32)
    if not 0 <= true_class < probs.shape[0]:
        raise IndexError(
            f"true_class {true_class} out of range for {probs.shape[0]} classes")
    p = max(F32(probs[true_class]), F32(LOSS_FLOOR))
    return F32(-np.log(F32(p)))
