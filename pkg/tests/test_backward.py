import numpy as np
import pytest

from tinycnn.backward import GradientSet, backward_image, zero_batch_grads
from tinycnn.config import NetConfig, NumericPolicy, derive_dims
from tinycnn.errors import NumericFault
from tinycnn.forward import ActivationSet, forward_pass
from tinycnn.numcore import F32
from tinycnn.oracle import gradient_check
from tinycnn.weightstore import PARAM_FIELDS, he_init


def run_backward(cfg, dims, policy, weights, image, label, grads=None):
    acts = ActivationSet.allocate(cfg, dims)
    forward_pass(image, weights, acts, cfg, policy)
    if grads is None:
        grads = GradientSet.allocate(cfg, dims)
        zero_batch_grads(grads)
    backward_image(acts, image, label, weights, grads, cfg, policy)
    return grads


class TestZeroing:
    def test_zeroes_accumulators_only(self, tiny_cfg, tiny_dims, policy):
        grads = GradientSet.allocate(tiny_cfg, tiny_dims)
        for _, arr in grads.accumulators():
            arr.fill(3.5)
        grads.dense_grad.fill(1.25)
        grads.pool1_grad.fill(-2.0)
        grads.conv1_grad.fill(0.5)
        zero_batch_grads(grads)
        for _, arr in grads.accumulators():
            assert (arr == 0.0).all()
        assert (grads.dense_grad == 1.25).all()
        assert (grads.pool1_grad == -2.0).all()
        assert (grads.conv1_grad == 0.5).all()

    def test_idempotent(self, tiny_cfg, tiny_dims, policy):
        grads = GradientSet.allocate(tiny_cfg, tiny_dims)
        zero_batch_grads(grads)
        snapshot = {name: arr.copy() for name, arr in grads.accumulators()}
        zero_batch_grads(grads)
        for name, arr in grads.accumulators():
            assert np.array_equal(arr, snapshot[name])


class TestBackwardImage:
    def test_perfect_prediction_leaves_accumulators_untouched(
            self, tiny_cfg, tiny_dims, policy):
        # exact one-hot probabilities give a zero output delta everywhere
        acts = ActivationSet.allocate(tiny_cfg, tiny_dims)
        acts.conv2_out[...] = 0.5
        acts.probs[...] = np.array([0.0, 1.0, 0.0], dtype=F32)
        weights = he_init(tiny_cfg, 0)
        grads = GradientSet.allocate(tiny_cfg, tiny_dims)
        zero_batch_grads(grads)
        image = np.full((8, 8, 3), 0.5, dtype=F32)
        backward_image(acts, image, 1, weights, grads, tiny_cfg, policy)
        for _, arr in grads.accumulators():
            assert (arr == 0.0).all()

    def test_accumulation_is_additive(self, tiny_cfg, tiny_dims, policy, rng):
        weights = he_init(tiny_cfg, 9)
        image_a = rng.random((8, 8, 3), dtype=F32)
        image_b = rng.random((8, 8, 3), dtype=F32)

        only_a = run_backward(tiny_cfg, tiny_dims, policy, weights, image_a, 0)
        only_b = run_backward(tiny_cfg, tiny_dims, policy, weights, image_b, 2)
        both = run_backward(tiny_cfg, tiny_dims, policy, weights, image_a, 0)
        backward_image_acts = ActivationSet.allocate(tiny_cfg, tiny_dims)
        forward_pass(image_b, weights, backward_image_acts, tiny_cfg, policy)
        backward_image(backward_image_acts, image_b, 2, weights, both,
                       tiny_cfg, policy)

        for name in PARAM_FIELDS:
            combined = getattr(both, name)
            summed = getattr(only_a, name) + getattr(only_b, name)
            assert np.array_equal(combined, summed)

    def test_propagation_buffers_carry_only_last_image(
            self, tiny_cfg, tiny_dims, policy, rng):
        weights = he_init(tiny_cfg, 9)
        image_a = rng.random((8, 8, 3), dtype=F32)
        image_b = rng.random((8, 8, 3), dtype=F32)

        fresh = run_backward(tiny_cfg, tiny_dims, policy, weights, image_b, 1)
        stacked = run_backward(tiny_cfg, tiny_dims, policy, weights, image_a, 0)
        acts = ActivationSet.allocate(tiny_cfg, tiny_dims)
        forward_pass(image_b, weights, acts, tiny_cfg, policy)
        backward_image(acts, image_b, 1, weights, stacked, tiny_cfg, policy)

        assert np.array_equal(stacked.dense_grad, fresh.dense_grad)
        assert np.array_equal(stacked.pool1_grad, fresh.pool1_grad)
        assert np.array_equal(stacked.conv1_grad, fresh.conv1_grad)

    def test_pool_routing_conservation(self, tiny_cfg, tiny_dims, policy, rng):
        weights = he_init(tiny_cfg, 21)
        image = rng.random((8, 8, 3), dtype=F32)
        acts = ActivationSet.allocate(tiny_cfg, tiny_dims)
        forward_pass(image, weights, acts, tiny_cfg, policy)
        grads = GradientSet.allocate(tiny_cfg, tiny_dims)
        zero_batch_grads(grads)
        backward_image(acts, image, 0, weights, grads, tiny_cfg, policy)

        slope = np.where(acts.conv1_out >= 0, F32(1.0), F32(policy.leaky_alpha))
        routed = grads.conv1_grad / slope  # undo the activation slope
        filters, pool_side, _ = grads.pool1_grad.shape
        for f in range(filters):
            for py in range(pool_side):
                for px in range(pool_side):
                    window = routed[f, 2 * py:2 * py + 2, 2 * px:2 * px + 2]
                    incoming = grads.pool1_grad[f, py, px]
                    assert np.isclose(window.sum(), incoming, atol=1e-6)
                    nonzero = int(np.count_nonzero(window))
                    assert nonzero == (1 if incoming != 0 else 0)

    def test_contributions_are_clipped(self, tiny_cfg, tiny_dims, policy):
        # hand-built activations with huge values must clip at the bound
        acts = ActivationSet.allocate(tiny_cfg, tiny_dims)
        acts.conv2_out[...] = 1e6
        acts.probs[...] = np.array([1.0, 0.0, 0.0], dtype=F32)
        weights = he_init(tiny_cfg, 2)
        grads = GradientSet.allocate(tiny_cfg, tiny_dims)
        zero_batch_grads(grads)
        image = np.full((8, 8, 3), 0.5, dtype=F32)
        backward_image(acts, image, 1, weights, grads, tiny_cfg, policy)
        assert np.abs(grads.output_w).max() == F32(policy.grad_clip)
        for _, arr in grads.accumulators():
            assert np.abs(arr).max() <= policy.grad_clip

    def test_nan_probability_is_numeric_fault(self, tiny_cfg, tiny_dims, policy):
        acts = ActivationSet.allocate(tiny_cfg, tiny_dims)
        acts.probs[...] = np.array([np.nan, 0.5, 0.5], dtype=F32)
        weights = he_init(tiny_cfg, 2)
        grads = GradientSet.allocate(tiny_cfg, tiny_dims)
        image = np.zeros((8, 8, 3), dtype=F32)
        with pytest.raises(NumericFault):
            backward_image(acts, image, 0, weights, grads, tiny_cfg, policy)

    def test_label_out_of_range(self, tiny_cfg, tiny_dims, policy, rng):
        weights = he_init(tiny_cfg, 2)
        image = rng.random((8, 8, 3), dtype=F32)
        acts = ActivationSet.allocate(tiny_cfg, tiny_dims)
        forward_pass(image, weights, acts, tiny_cfg, policy)
        grads = GradientSet.allocate(tiny_cfg, tiny_dims)
        with pytest.raises(IndexError):
            backward_image(acts, image, 3, weights, grads, tiny_cfg, policy)


class TestGradientCheck:
    def test_small_random_draws(self, tiny_cfg, policy):
        result = gradient_check(tiny_cfg, policy, draws=4, seed=99)
        assert result.passed, (f"formula rel {result.max_rel_error:.2e}, "
                               f"float32 rel {result.production_rel_error:.2e}")
        assert result.max_rel_error < 1e-3
        assert result.production_rel_error < 1e-3
        # kink masking should only remove a small fraction of parameters
        assert result.masked < 0.05 * (result.checked + result.masked)
