import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tinycnn.errors import NumericFault
from tinycnn.numcore import (F32, KahanAccumulator, clip, compensated_sum,
                             cross_entropy, kahan_add, kahan_sum, leaky_relu,
                             leaky_relu_grad, softmax)

finite_f32 = st.floats(min_value=-1e8, max_value=1e8, allow_nan=False,
                       allow_infinity=False, width=32)


def naive_f32_sum(values):
    total = F32(0.0)
    for v in values:
        total = F32(total + F32(v))
    return total


class TestKahan:
    def test_cancellation_stress_case(self):
        # the compensated fold keeps the unit that a plain float32 fold loses
        assert kahan_sum([1e8, 1.0, -1e8]) == F32(1.0)
        assert naive_f32_sum([1e8, 1.0, -1e8]) == F32(0.0)

    def test_empty_and_single(self):
        assert kahan_sum([]) == F32(0.0)
        assert kahan_sum([2.5]) == F32(2.5)

    def test_accumulator_api(self):
        acc = KahanAccumulator()
        for term in (1e8, 1.0, -1e8):
            acc = kahan_add(acc, term)
        assert acc.result() == F32(1.0)

    def test_acceptance_corpus_within_one_ulp(self):
        # random vectors across magnitudes, up to 1e4 terms: the fold must
        # land within one ulp of the correctly rounded float64 sum
        rng = np.random.default_rng(7)
        for scale_exp in range(0, 9):
            for length in (10, 1000, 10000):
                values = (rng.random(length, dtype=np.float32) - 0.5) * (10.0 ** scale_exp)
                exact = F32(values.astype(np.float64).sum())
                for perm_seed in range(3):
                    permuted = np.random.default_rng(perm_seed).permutation(values)
                    got = kahan_sum(permuted) if length == 10 else compensated_sum(permuted)
                    assert abs(float(got) - float(exact)) <= np.spacing(abs(exact))

    @given(st.lists(finite_f32, max_size=60))
    @settings(deadline=None, max_examples=60)
    def test_error_bounded_by_magnitude_sum(self, values):
        # Neumaier bound: error is a few eps of the sum of magnitudes
        got = float(kahan_sum(values))
        exact = float(np.sum(np.array(values, dtype=np.float64)))
        magnitude = float(np.sum(np.abs(np.array(values, dtype=np.float64))))
        assert abs(got - exact) <= 4 * np.finfo(np.float32).eps * magnitude + 1e-30

    @given(st.lists(finite_f32, max_size=40))
    @settings(deadline=None, max_examples=40)
    def test_vectorized_matches_scalar_fold_when_short(self, values):
        # below the lane threshold the vectorized fold is the sequential one
        if len(values) <= 16:
            assert compensated_sum(np.array(values, dtype=F32)) == kahan_sum(values)

    def test_compensated_sum_axis(self):
        data = np.arange(24, dtype=F32).reshape(2, 12)
        out = compensated_sum(data, axis=1)
        assert out.shape == (2,)
        assert np.allclose(out, data.sum(axis=1))


class TestLeakyRelu:
    def test_values(self):
        assert leaky_relu(2.0) == F32(2.0)
        assert leaky_relu(-2.0) == F32(-0.2)
        assert leaky_relu(0.0) == F32(0.0)

    def test_grad_values(self):
        assert leaky_relu_grad(-5.0) == F32(0.1)
        assert leaky_relu_grad(3.0) == F32(1.0)
        assert leaky_relu_grad(0.0) == F32(1.0)  # zero takes the positive branch

    @given(st.tuples(finite_f32, finite_f32))
    @settings(deadline=None)
    def test_monotone(self, pair):
        a, b = sorted(pair)
        assert leaky_relu(a) <= leaky_relu(b)

    @given(st.floats(min_value=-50.0, max_value=50.0).filter(lambda x: abs(x) > 0.01))
    @settings(deadline=None)
    def test_grad_matches_finite_difference(self, x):
        # double-precision central difference of the same mathematical map
        h = 1e-3
        leaky64 = lambda v: v if v >= 0 else 0.1 * v
        numeric = (leaky64(x + h) - leaky64(x - h)) / (2 * h)
        if abs(x) > h:  # difference quotient is invalid across the kink
            assert abs(float(leaky_relu_grad(x)) - numeric) < 1e-3

    def test_array_form(self):
        x = np.array([-1.0, 0.0, 2.0], dtype=F32)
        assert np.array_equal(leaky_relu(x), np.array([-0.1, 0.0, 2.0], dtype=F32))
        assert np.array_equal(leaky_relu_grad(x), np.array([0.1, 1.0, 1.0], dtype=F32))


class TestClip:
    def test_saturation(self):
        assert clip(150.0, 100.0) == F32(100.0)
        assert clip(-150.0, 100.0) == F32(-100.0)
        assert clip(-3.0, 10.0) == F32(-3.0)

    def test_nan_is_numeric_fault(self):
        with pytest.raises(NumericFault):
            clip(float("nan"), 100.0)
        with pytest.raises(NumericFault):
            clip(np.array([1.0, np.nan], dtype=F32), 100.0)

    def test_infinity_saturates(self):
        assert clip(float("inf"), 10.0) == F32(10.0)

    @given(finite_f32, st.floats(min_value=1e-3, max_value=1e6))
    @settings(deadline=None)
    def test_idempotent(self, x, bound):
        once = clip(x, bound)
        assert clip(once, bound) == once
        assert abs(once) <= F32(bound)


class TestSoftmax:
    def test_uniform_for_equal_logits(self):
        assert np.allclose(softmax(np.zeros(3, dtype=F32)), [1 / 3] * 3)

    def test_large_equal_logits_do_not_overflow(self):
        probs = softmax(np.full(3, 1000.0, dtype=F32))
        assert np.isfinite(probs).all()
        assert np.allclose(probs, [1 / 3] * 3)

    def test_analytic_point(self):
        probs = softmax(np.array([math.log(2.0), 0.0, 0.0], dtype=F32))
        assert np.allclose(probs, [0.5, 0.25, 0.25], atol=1e-6)

    def test_normalization(self):
        probs = softmax(np.array([0.3, -1.2, 2.5, 0.0], dtype=F32))
        assert abs(float(probs.sum()) - 1.0) <= 1e-6
        assert ((probs >= 0) & (probs <= 1)).all()

    @given(st.lists(st.floats(min_value=-30, max_value=30), min_size=2, max_size=8),
           st.floats(min_value=-100, max_value=100))
    @settings(deadline=None)
    def test_shift_invariance(self, logits, shift):
        base = softmax(np.array(logits, dtype=F32))
        shifted = softmax(np.array(logits, dtype=F32) + F32(shift))
        assert np.abs(base - shifted).max() <= 1e-6

    def test_nonfinite_logit_faults(self):
        with pytest.raises(NumericFault):
            softmax(np.array([1.0, np.inf], dtype=F32))


class TestCrossEntropy:
    def test_perfect_prediction(self):
        assert cross_entropy(np.array([0.0, 1.0, 0.0], dtype=F32), 1) == F32(0.0)

    def test_uniform(self):
        loss = cross_entropy(np.full(3, 1 / 3, dtype=F32), 0)
        assert abs(float(loss) - math.log(3.0)) < 1e-6

    def test_zero_probability_is_floored(self):
        loss = cross_entropy(np.array([0.0, 1.0], dtype=F32), 0)
        assert abs(float(loss) - math.log(1e12)) < 1e-3
        assert np.isfinite(loss)

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            cross_entropy(np.array([0.5, 0.5], dtype=F32), 2)
