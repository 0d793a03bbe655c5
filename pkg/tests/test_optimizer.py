import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tinycnn.backward import GradientSet
from tinycnn.config import NetConfig, NumericPolicy, TrainConfig, derive_dims
from tinycnn.errors import NumericFault
from tinycnn.numcore import F32
from tinycnn.optimizer import AdamState, adam_step, bias_corrected_lr
from tinycnn.weightstore import PARAM_FIELDS, WeightSet, he_init


def make_state(dims):
    return AdamState.allocate(dims)


def grads_filled(cfg, dims, value):
    grads = GradientSet.allocate(cfg, dims)
    for _, arr in grads.accumulators():
        arr.fill(value)
    return grads


class TestBiasCorrectedRate:
    def test_first_step_value(self):
        cfg = TrainConfig()
        lr_t = bias_corrected_lr(cfg, 1)
        expected = 0.0003 * math.sqrt(1.0 - 0.999) / (1.0 - 0.9)
        assert abs(lr_t - expected) / expected < 1e-9
        # six-significant-digit print of the same number
        assert f"{lr_t:.6g}" == "9.48683e-05"

    def test_approaches_nominal_rate(self):
        cfg = TrainConfig()
        assert abs(bias_corrected_lr(cfg, 100000) - cfg.learning_rate) < 1e-8

    def test_requires_positive_step(self):
        with pytest.raises(ValueError):
            bias_corrected_lr(TrainConfig(), 0)


class TestAdamStep:
    def test_zero_gradient_leaves_weights(self, tiny_cfg, tiny_dims, policy):
        weights = he_init(tiny_cfg, 4)
        snapshot = weights.copy()
        state = make_state(tiny_dims)
        adam_step(weights, grads_filled(tiny_cfg, tiny_dims, 0.0), state,
                  TrainConfig(), policy)
        for name in PARAM_FIELDS:
            assert np.array_equal(getattr(weights, name), getattr(snapshot, name))
        assert state.step == 1

    def test_first_step_magnitude_for_unit_gradient(self, tiny_cfg, tiny_dims, policy):
        cfg = TrainConfig()
        weights = WeightSet.zeros(tiny_dims)
        state = make_state(tiny_dims)
        adam_step(weights, grads_filled(tiny_cfg, tiny_dims, 1.0), state, cfg, policy)
        # hand evaluation: lr_t * 0.1 / (sqrt(0.001) + 1e-6) ~ -3.0e-4
        expected = -bias_corrected_lr(cfg, 1) * 0.1 / (math.sqrt(0.001) + 1e-6)
        assert abs(expected - (-2.9999e-4)) / 2.9999e-4 < 1e-4
        got = float(weights.conv1_w[0])
        assert abs(got - expected) / abs(expected) < 1e-5

    @given(st.floats(min_value=1e-3, max_value=1e3),
           st.sampled_from([-1.0, 1.0]))
    @settings(deadline=None, max_examples=40)
    def test_first_step_size_is_classic_adam_magnitude(self, magnitude, sign):
        # first-step displacement is ~lr regardless of the gradient size
        # (epsilon only bites below ~3e-4, hence the magnitude floor)
        cfg = TrainConfig()
        policy = NumericPolicy()
        net = NetConfig(input_size=8)
        dims = derive_dims(net)
        weights = WeightSet.zeros(dims)
        state = make_state(dims)
        adam_step(weights, grads_filled(net, dims, sign * magnitude), state,
                  cfg, policy)
        step_size = abs(float(weights.conv1_w[0]))
        assert 0.9 * cfg.learning_rate <= step_size <= 1.0 * cfg.learning_rate
        assert math.copysign(1.0, float(weights.conv1_w[0])) == -sign

    def test_weights_clip_at_bound(self, tiny_cfg, tiny_dims, policy):
        weights = WeightSet.zeros(tiny_dims)
        weights.conv1_w.fill(9.9999999)
        state = make_state(tiny_dims)
        grads = grads_filled(tiny_cfg, tiny_dims, -5.0)  # pushes weights upward
        for _ in range(200):
            adam_step(weights, grads, state, TrainConfig(learning_rate=0.5), policy)
        assert weights.conv1_w.max() <= policy.weight_clip
        assert weights.conv1_w.max() == F32(policy.weight_clip)

    def test_constant_gradient_moves_monotonically(self, tiny_cfg, tiny_dims, policy):
        weights = WeightSet.zeros(tiny_dims)
        state = make_state(tiny_dims)
        grads = grads_filled(tiny_cfg, tiny_dims, 2.0)
        previous = 0.0
        for _ in range(50):
            adam_step(weights, grads, state, TrainConfig(), policy)
            current = float(weights.conv1_w[0])
            assert current <= previous  # moving against the gradient sign
            previous = current

    def test_second_moment_nonnegative_and_finite(self, tiny_cfg, tiny_dims,
                                                  policy, rng):
        weights = he_init(tiny_cfg, 8)
        state = make_state(tiny_dims)
        grads = GradientSet.allocate(tiny_cfg, tiny_dims)
        for step in range(20):
            for _, arr in grads.accumulators():
                arr[...] = rng.standard_normal(arr.shape).astype(F32) * 10
            adam_step(weights, grads, state, TrainConfig(), policy)
            for name in PARAM_FIELDS:
                assert (getattr(state.v, name) >= 0).all()
                assert np.isfinite(getattr(state.m, name)).all()
                assert np.isfinite(getattr(weights, name)).all()

    def test_deterministic(self, tiny_cfg, tiny_dims, policy):
        results = []
        for _ in range(2):
            weights = he_init(tiny_cfg, 77)
            state = make_state(tiny_dims)
            grads = grads_filled(tiny_cfg, tiny_dims, 0.25)
            for _ in range(5):
                adam_step(weights, grads, state, TrainConfig(), policy)
            results.append(weights)
        for name in PARAM_FIELDS:
            assert np.array_equal(getattr(results[0], name),
                                  getattr(results[1], name))

    def test_nonfinite_gradient_faults(self, tiny_cfg, tiny_dims, policy):
        weights = he_init(tiny_cfg, 1)
        state = make_state(tiny_dims)
        grads = grads_filled(tiny_cfg, tiny_dims, np.inf)
        with pytest.raises(NumericFault):
            adam_step(weights, grads, state, TrainConfig(), policy)

    def test_global_step_monotone(self, tiny_cfg, tiny_dims, policy):
        weights = he_init(tiny_cfg, 1)
        state = make_state(tiny_dims)
        grads = grads_filled(tiny_cfg, tiny_dims, 0.0)
        for expected in range(1, 8):
            adam_step(weights, grads, state, TrainConfig(), policy)
            assert state.step == expected
