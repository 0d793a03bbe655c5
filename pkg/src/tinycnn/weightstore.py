"""Weight containers, He initialization, dual-format persistence, and the
three-tier boot priority (saved binary > baked-in header > fresh He init).

Binary format: the six arrays concatenated in ``PARAM_FIELDS`` order as
little-endian IEEE-754 binary32, no header, no padding.  Header format: a C
source fragment with one ``const float`` array per parameter block, values
printed with 9 significant digits (enough to round-trip binary32 exactly).
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ClassMap, DerivedDims, NetConfig, NumericPolicy, derive_dims
from .errors import NumericFault, StoreError

F32 = np.float32

PARAM_FIELDS = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "output_w", "output_b")

BINARY_FILENAME = "myWeights.bin"
HEADER_FILENAME = "myWeights.h"
HEADER_ARRAY_PREFIX = "myModel_"
_VALUES_PER_LINE = 8


@dataclass
class WeightSet:
    """The six flat float32 parameter arrays of the network."""

    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    output_w: np.ndarray
    output_b: np.ndarray

    @staticmethod
    def sizes(dims: DerivedDims) -> dict[str, int]:
        return {
            "conv1_w": dims.conv1_w, "conv1_b": dims.conv1_b,
            "conv2_w": dims.conv2_w, "conv2_b": dims.conv2_b,
            "output_w": dims.dense_w, "output_b": dims.dense_b,
        }

    @classmethod
    def zeros(cls, dims: DerivedDims) -> "WeightSet":
        return cls(**{name: np.zeros(size, dtype=F32)
                      for name, size in cls.sizes(dims).items()})

    def arrays(self):
        """Yield (name, array) pairs in serialization order."""
        for name in PARAM_FIELDS:
            yield name, getattr(self, name)

    def copy(self) -> "WeightSet":
        return WeightSet(**{name: arr.copy() for name, arr in self.arrays()})

    def total_params(self) -> int:
        return sum(arr.size for _, arr in self.arrays())

    def validate_shapes(self, dims: DerivedDims) -> None:
        for name, expected in self.sizes(dims).items():
            arr = getattr(self, name)
            if arr.shape != (expected,):
                raise StoreError(
                    f"{name} has shape {arr.shape}, expected ({expected},)")
            if arr.dtype != F32:
                raise StoreError(f"{name} has dtype {arr.dtype}, expected float32")


class OriginKind(enum.Enum):
    FROM_BINARY = "binary"
    FROM_BAKED = "baked"
    FROM_HE_INIT = "he-init"


@dataclass(frozen=True)
class WeightOrigin:
    kind: OriginKind
    source: str

    @property
    def is_pretrained(self) -> bool:
        return self.kind is not OriginKind.FROM_HE_INIT


def he_init(cfg: NetConfig, seed: int, policy: NumericPolicy | None = None) -> WeightSet:
    """He-initialized weights: Normal(0, sqrt(2/fan_in)) per layer, zero biases.

    Deterministic for a fixed seed; draws happen in serialization order.
    """
    policy = policy or NumericPolicy()
    dims = derive_dims(cfg)
    rng = np.random.default_rng(seed)

    def draw(count: int, fan_in: int) -> np.ndarray:
        weights = rng.standard_normal(count, dtype=F32)
        weights *= math.sqrt(2.0 / fan_in)
        np.clip(weights, -policy.weight_clip, policy.weight_clip, out=weights)
        return weights

    return WeightSet(
        conv1_w=draw(dims.conv1_w, cfg.conv1_kernel ** 2 * cfg.input_channels),
        conv1_b=np.zeros(dims.conv1_b, dtype=F32),
        conv2_w=draw(dims.conv2_w, cfg.conv2_kernel ** 2 * cfg.conv1_filters),
        conv2_b=np.zeros(dims.conv2_b, dtype=F32),
        output_w=draw(dims.dense_w, dims.flattened),
        output_b=np.zeros(dims.dense_b, dtype=F32),
    )


def save_binary(weights: WeightSet, path: str | Path) -> None:
    """Write the raw little-endian float32 blob."""
    blobs = []
    for name, arr in weights.arrays():
        if not np.isfinite(arr).all():
            raise NumericFault(f"refusing to save non-finite values in {name}")
        blobs.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(blobs))


def load_binary(path: str | Path, cfg: NetConfig) -> WeightSet:
    """Read a weight blob, validating the exact byte size for ``cfg``."""
    dims = derive_dims(cfg)
    data = Path(path).read_bytes()
    expected = dims.total * 4
    if len(data) != expected:
        raise StoreError(
            f"{path}: {len(data)} bytes but configuration needs {expected} "
            f"({dims.total} float32 parameters)")
    flat = np.frombuffer(data, dtype="<f4")
    weights = {}
    offset = 0
    for name, size in WeightSet.sizes(dims).items():
        weights[name] = flat[offset:offset + size].astype(F32)
        offset += size
    return WeightSet(**weights)


def _format_value(value: float) -> str:
    # 9 significant digits round-trip binary32 exactly.
    return format(float(value), ".9g")


def _format_array(values: np.ndarray) -> str:
    parts = [_format_value(v) for v in values]
    lines = []
    for start in range(0, len(parts), _VALUES_PER_LINE):
        lines.append("  " + ", ".join(parts[start:start + _VALUES_PER_LINE]) + ",")
    return "\n".join(lines)


def render_header(weights: WeightSet, cfg: NetConfig, labels: ClassMap) -> str:
    """Render the C header text (deterministic: no timestamps)."""
    if len(labels) != cfg.num_classes:
        raise StoreError(
            f"{len(labels)} labels but configuration has {cfg.num_classes} classes")
    for name, arr in weights.arrays():
        if not np.isfinite(arr).all():
            raise NumericFault(f"refusing to export non-finite values in {name}")
    label_list = ", ".join(f'"{label}"' for label in labels.labels)
    out = [
        "// Auto-generated by tinycnn v1.0.0",
        f"//   #define NUM_CLASSES {cfg.num_classes}",
        f"//   String myClassLabels[] = {{{label_list}}};",
        "// To use: copy to sketch folder, then uncomment:",
        "//   #define USE_BAKED_WEIGHTS",
    ]
    for name, arr in weights.arrays():
        out.append(f"const float {HEADER_ARRAY_PREFIX}{name}[] = {{")
        out.append(_format_array(arr))
        out.append("};")
    return "\n".join(out) + "\n"


def export_header(weights: WeightSet, cfg: NetConfig, labels: ClassMap,
                  path: str | Path) -> None:
    Path(path).write_text(render_header(weights, cfg, labels), encoding="utf-8")


_ARRAY_RE = re.compile(
    re.escape(HEADER_ARRAY_PREFIX) + r"(\w+)\[\]\s*=\s*\{(.*?)\};", re.DOTALL)


def load_header(path: str | Path, cfg: NetConfig) -> WeightSet:
    """Parse an exported header back into a bit-identical WeightSet."""
    dims = derive_dims(cfg)
    text = Path(path).read_text(encoding="utf-8")
    found: dict[str, np.ndarray] = {}
    for match in _ARRAY_RE.finditer(text):
        name, body = match.group(1), match.group(2)
        tokens = [tok.strip().rstrip("fF") for tok in body.split(",")]
        values = [float(tok) for tok in tokens if tok]
        found[name] = np.array(values, dtype=F32)
    sizes = WeightSet.sizes(dims)
    for name, size in sizes.items():
        if name not in found:
            raise StoreError(f"{path}: missing array {HEADER_ARRAY_PREFIX}{name}")
        if found[name].size != size:
            raise StoreError(
                f"{path}: {HEADER_ARRAY_PREFIX}{name} has {found[name].size} "
                f"values, expected {size}")
    return WeightSet(**{name: found[name] for name in sizes})


def resolve_weights(binary_path: str | Path | None,
                    baked: WeightSet | None,
                    cfg: NetConfig,
                    seed: int,
                    policy: NumericPolicy | None = None,
                    ) -> tuple[WeightSet, WeightOrigin]:
    """Three-tier priority: saved binary, then baked-in set, then He init.

    A binary file that exists but fails validation is an error, never a
    silent fallback: quietly replacing a trained model with random weights
    would destroy a session invisibly.
    """
    if binary_path is not None and Path(binary_path).is_file():
        weights = load_binary(binary_path, cfg)
        return weights, WeightOrigin(OriginKind.FROM_BINARY, str(binary_path))
    if baked is not None:
        baked.validate_shapes(derive_dims(cfg))
        return baked.copy(), WeightOrigin(OriginKind.FROM_BAKED, "baked-in")
    weights = he_init(cfg, seed, policy)
    return weights, WeightOrigin(OriginKind.FROM_HE_INIT, f"seed={seed}")
