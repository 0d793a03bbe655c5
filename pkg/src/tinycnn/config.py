"""Network, training, and numeric-safety configuration.

Every buffer size in the engine derives from a handful of integers in
:class:`NetConfig`.  ``derive_dims`` performs that arithmetic once, validates
it, and hands the rest of the code a :class:`DerivedDims` it can trust.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Mapping

from .errors import ConfigError

DEFAULT_LABELS = ("0Blank", "1Cup", "2Pen")


@dataclass(frozen=True)
class NetConfig:
    """Architecture constants; all layer dimensions follow from these."""

    input_size: int = 64
    conv1_kernel: int = 3
    conv1_filters: int = 4
    conv2_kernel: int = 3
    conv2_filters: int = 8
    num_classes: int = 3
    input_channels: int = 3  # RGB, fixed

    def __post_init__(self):
        for name in ("input_size", "conv1_kernel", "conv1_filters",
                     "conv2_kernel", "conv2_filters", "num_classes"):
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.input_channels != 3:
            raise ConfigError("input_channels is fixed at 3 (RGB)")


@dataclass(frozen=True)
class DerivedDims:
    """Integer sizes of every layer output and parameter array."""

    conv1_out: int
    pool1_out: int
    conv2_out: int
    flattened: int
    conv1_w: int
    conv1_b: int
    conv2_w: int
    conv2_b: int
    dense_w: int
    dense_b: int
    total: int


def derive_dims(cfg: NetConfig) -> DerivedDims:
    """Derive all layer dimensions and parameter counts from ``cfg``.

    Pure function: raises :class:`ConfigError` when any derived size is
    invalid (input too small, or an odd conv1 output that the 2x2 pool
    cannot halve).
    """
    conv1_out = cfg.input_size - (cfg.conv1_kernel - 1)
    if conv1_out < 2:
        raise ConfigError(
            f"input_size {cfg.input_size} too small: conv1 output would be {conv1_out}")
    if conv1_out % 2 != 0:
        raise ConfigError(
            f"conv1 output {conv1_out} is odd; 2x2 pooling requires an even size "
            f"(input_size {cfg.input_size})")
    pool1_out = conv1_out // 2
    conv2_out = pool1_out - (cfg.conv2_kernel - 1)
    if conv2_out < 1:
        raise ConfigError(
            f"pool output {pool1_out} too small for a {cfg.conv2_kernel}x"
            f"{cfg.conv2_kernel} second convolution")
    flattened = conv2_out * conv2_out * cfg.conv2_filters

    conv1_w = cfg.conv1_kernel * cfg.conv1_kernel * cfg.input_channels * cfg.conv1_filters
    conv1_b = cfg.conv1_filters
    conv2_w = cfg.conv2_kernel * cfg.conv2_kernel * cfg.conv1_filters * cfg.conv2_filters
    conv2_b = cfg.conv2_filters
    dense_w = flattened * cfg.num_classes
    dense_b = cfg.num_classes
    total = conv1_w + conv1_b + conv2_w + conv2_b + dense_w + dense_b
    return DerivedDims(conv1_out, pool1_out, conv2_out, flattened,
                       conv1_w, conv1_b, conv2_w, conv2_b, dense_w, dense_b, total)


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and training-loop settings."""

    learning_rate: float = 0.0003
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-6
    batch_size: int = 6
    epochs: int = 20
    validation_images: int = 3  # last N per class held out; 0 disables
    shuffle_seed: int = 42
    shuffle_enabled: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 < self.beta1 < 1:
            raise ConfigError(f"beta1 must be in (0, 1), got {self.beta1}")
        if not 0 < self.beta2 < 1:
            raise ConfigError(f"beta2 must be in (0, 1), got {self.beta2}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.validation_images < 0:
            raise ConfigError(
                f"validation_images must be >= 0, got {self.validation_images}")
        if self.shuffle_seed < 0:
            raise ConfigError(f"shuffle_seed must be >= 0, got {self.shuffle_seed}")


@dataclass(frozen=True)
class NumericPolicy:
    """Clipping bounds and numeric constants applied throughout the engine."""

    grad_clip: float = 100.0
    weight_clip: float = 10.0
    # Pre-activation sums share the gradient bound so one safety scale
    # governs every intermediate magnitude.
    preact_clip: float = 100.0
    leaky_alpha: float = 0.1
    pixel_scale: float = 0.003921569  # reciprocal-of-255 multiplier

    def __post_init__(self):
        for name in ("grad_clip", "weight_clip", "preact_clip", "leaky_alpha",
                     "pixel_scale"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")


@dataclass(frozen=True)
class ClassMap:
    """Ordered class labels; position defines the class index."""

    labels: tuple[str, ...] = DEFAULT_LABELS

    def __post_init__(self):
        if len(self.labels) < 2:
            raise ConfigError("at least two class labels are required")
        if len(set(self.labels)) != len(self.labels):
            raise ConfigError(f"class labels must be unique: {self.labels}")
        for label in self.labels:
            if not label or "/" in label or "\\" in label:
                raise ConfigError(f"invalid class label {label!r}")

    def __len__(self) -> int:
        return len(self.labels)

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ConfigError(f"unknown class label {label!r}") from None


@dataclass(frozen=True)
class EngineConfig:
    """Bundle of all four configuration groups used by the CLI and service."""

    net: NetConfig
    train: TrainConfig
    policy: NumericPolicy
    classes: ClassMap

    @classmethod
    def defaults(cls) -> "EngineConfig":
        return cls(NetConfig(), TrainConfig(), NumericPolicy(), ClassMap())

    def __post_init__(self):
        if len(self.classes) != self.net.num_classes:
            raise ConfigError(
                f"num_classes {self.net.num_classes} does not match "
                f"{len(self.classes)} labels {self.classes.labels}")


# KEY=VALUE settings file: one key per configuration field, labels
# comma-separated.  Unknown keys are errors.
_INT_KEYS = {
    "input_size", "conv1_kernel", "conv1_filters", "conv2_kernel",
    "conv2_filters", "num_classes", "batch_size", "epochs",
    "validation_images", "shuffle_seed",
}
_FLOAT_KEYS = {
    "learning_rate", "beta1", "beta2", "epsilon",
    "grad_clip", "weight_clip", "preact_clip", "leaky_alpha", "pixel_scale",
}
_BOOL_KEYS = {"shuffle_enabled"}
_NET_FIELDS = {f.name for f in fields(NetConfig)}
_TRAIN_FIELDS = {f.name for f in fields(TrainConfig)}
_POLICY_FIELDS = {f.name for f in fields(NumericPolicy)}


def _parse_bool(key: str, raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key} must be a boolean, got {raw!r}")


def parse_settings_text(text: str) -> dict[str, str]:
    """Parse KEY=VALUE lines; blank lines and '#' comments are skipped."""
    settings: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected KEY=VALUE, got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key in settings:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        settings[key] = value.strip()
    return settings


def apply_settings(base: EngineConfig, settings: Mapping[str, str]) -> EngineConfig:
    """Overlay raw string settings on ``base``; unknown keys are errors."""
    net_kv: dict[str, object] = {}
    train_kv: dict[str, object] = {}
    policy_kv: dict[str, object] = {}
    labels: tuple[str, ...] | None = None

    for key, raw in settings.items():
        if key == "labels":
            labels = tuple(part.strip() for part in raw.split(",") if part.strip())
            continue
        if key in _INT_KEYS:
            try:
                value: object = int(raw)
            except ValueError:
                raise ConfigError(f"{key} must be an integer, got {raw!r}") from None
        elif key in _FLOAT_KEYS:
            try:
                value = float(raw)
            except ValueError:
                raise ConfigError(f"{key} must be a number, got {raw!r}") from None
        elif key in _BOOL_KEYS:
            value = _parse_bool(key, raw)
        else:
            raise ConfigError(f"unknown configuration key {key!r}")
        if key in _NET_FIELDS:
            net_kv[key] = value
        elif key in _TRAIN_FIELDS:
            train_kv[key] = value
        elif key in _POLICY_FIELDS:
            policy_kv[key] = value

    classes = base.classes
    if labels is not None:
        classes = ClassMap(labels)
        if "num_classes" in net_kv and net_kv["num_classes"] != len(labels):
            raise ConfigError(
                f"num_classes {net_kv['num_classes']} conflicts with "
                f"{len(labels)} labels")
        net_kv["num_classes"] = len(labels)

    net = replace(base.net, **net_kv) if net_kv else base.net
    train = replace(base.train, **train_kv) if train_kv else base.train
    policy = replace(base.policy, **policy_kv) if policy_kv else base.policy
    return EngineConfig(net, train, policy, classes)


def load_config_file(path: str | Path, base: EngineConfig | None = None) -> EngineConfig:
    """Read a KEY=VALUE configuration file on top of ``base`` (or defaults)."""
    base = base or EngineConfig.defaults()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"configuration file not found: {path}") from None
    return apply_settings(base, parse_settings_text(text))
