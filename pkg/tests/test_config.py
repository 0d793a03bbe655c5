import pytest
from hypothesis import given, strategies as st

from tinycnn.config import (ClassMap, EngineConfig, NetConfig, NumericPolicy,
                            TrainConfig, apply_settings, derive_dims,
                            load_config_file, parse_settings_text)
from tinycnn.errors import ConfigError


class TestDeriveDims:
    def test_paper_default_dimensions(self):
        dims = derive_dims(NetConfig(input_size=64))
        assert dims.conv1_out == 62
        assert dims.pool1_out == 31
        assert dims.conv2_out == 29
        assert dims.flattened == 6728
        assert (dims.conv1_w, dims.conv1_b) == (108, 4)
        assert (dims.conv2_w, dims.conv2_b) == (288, 8)
        assert (dims.dense_w, dims.dense_b) == (20184, 3)
        assert dims.total == 20595

    def test_input_48(self):
        dims = derive_dims(NetConfig(input_size=48))
        assert (dims.conv1_out, dims.pool1_out, dims.conv2_out) == (46, 23, 21)
        assert dims.flattened == 3528
        assert dims.total == 10995

    def test_input_8_small_instance(self):
        dims = derive_dims(NetConfig(input_size=8))
        assert (dims.conv1_out, dims.pool1_out, dims.conv2_out) == (6, 3, 1)
        assert dims.flattened == 8
        assert dims.total == 435

    def test_scaling_exact_formula_values(self):
        # exact results of the dimension arithmetic at the larger sizes
        assert derive_dims(NetConfig(input_size=96)).total == 49011
        assert derive_dims(NetConfig(input_size=128)).total == 89715

    def test_odd_conv1_output_rejected(self):
        with pytest.raises(ConfigError, match="odd"):
            derive_dims(NetConfig(input_size=5))

    def test_too_small_rejected(self):
        with pytest.raises(ConfigError):
            derive_dims(NetConfig(input_size=2))
        with pytest.raises(ConfigError):
            derive_dims(NetConfig(input_size=6, conv2_kernel=5))

    def test_pure_function(self):
        cfg = NetConfig(input_size=32)
        assert derive_dims(cfg) == derive_dims(cfg)

    @given(st.sampled_from([8, 10, 16, 32, 48, 64, 96, 128]))
    def test_total_equals_component_sum(self, size):
        dims = derive_dims(NetConfig(input_size=size))
        component_sum = (dims.conv1_w + dims.conv1_b + dims.conv2_w
                         + dims.conv2_b + dims.dense_w + dims.dense_b)
        assert dims.total == component_sum
        # independent re-derivation of the counts
        cfg = NetConfig(input_size=size)
        assert dims.conv1_w == 3 * 3 * 3 * 4
        assert dims.dense_w == dims.conv2_out ** 2 * cfg.conv2_filters * 3


class TestValidation:
    def test_net_config_rejects_nonpositive(self):
        with pytest.raises(ConfigError):
            NetConfig(input_size=0)
        with pytest.raises(ConfigError):
            NetConfig(conv1_filters=-1)
        with pytest.raises(ConfigError):
            NetConfig(num_classes=1)

    def test_train_config_bounds(self):
        with pytest.raises(ConfigError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ConfigError):
            TrainConfig(beta1=1.0)
        with pytest.raises(ConfigError):
            TrainConfig(beta2=0.0)
        with pytest.raises(ConfigError):
            TrainConfig(epsilon=-1e-6)
        with pytest.raises(ConfigError):
            TrainConfig(validation_images=-1)

    def test_policy_bounds_positive(self):
        with pytest.raises(ConfigError):
            NumericPolicy(grad_clip=0.0)

    def test_class_map_unique_labels(self):
        with pytest.raises(ConfigError):
            ClassMap(("a", "a"))
        with pytest.raises(ConfigError):
            ClassMap(("only",))

    def test_engine_config_label_count_must_match(self):
        with pytest.raises(ConfigError):
            EngineConfig(NetConfig(num_classes=4), TrainConfig(), NumericPolicy(),
                         ClassMap(("a", "b", "c")))


class TestSettingsFile:
    def test_parse_and_apply(self, tmp_path):
        text = "\n".join([
            "# comment",
            "input_size = 48",
            "learning_rate = 0.001",
            "labels = cat, dog",
            "shuffle_enabled = false",
            "validation_images = 0",
        ])
        path = tmp_path / "engine.cfg"
        path.write_text(text)
        cfg = load_config_file(path)
        assert cfg.net.input_size == 48
        assert cfg.net.num_classes == 2
        assert cfg.classes.labels == ("cat", "dog")
        assert cfg.train.learning_rate == 0.001
        assert cfg.train.shuffle_enabled is False
        assert cfg.train.validation_images == 0

    def test_unknown_key_is_error(self):
        with pytest.raises(ConfigError, match="unknown"):
            apply_settings(EngineConfig.defaults(), {"momentum": "0.9"})

    def test_bad_value_types(self):
        with pytest.raises(ConfigError):
            apply_settings(EngineConfig.defaults(), {"epochs": "three"})
        with pytest.raises(ConfigError):
            apply_settings(EngineConfig.defaults(), {"shuffle_enabled": "maybe"})

    def test_duplicate_key_is_error(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_settings_text("epochs=1\nepochs=2")

    def test_labels_conflict_with_num_classes(self):
        with pytest.raises(ConfigError, match="conflicts"):
            apply_settings(EngineConfig.defaults(),
                           {"labels": "a,b", "num_classes": "3"})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config_file(tmp_path / "nope.cfg")

    def test_flags_layer_over_file(self, tmp_path):
        path = tmp_path / "engine.cfg"
        path.write_text("epochs=5\nbatch_size=4\n")
        cfg = load_config_file(path)
        cfg = apply_settings(cfg, {"epochs": "9"})  # flag-style override
        assert cfg.train.epochs == 9
        assert cfg.train.batch_size == 4
