"""Shared fixtures: synthetic datasets and small network configurations."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from tinycnn.config import ClassMap, NetConfig, NumericPolicy, TrainConfig, derive_dims
from tinycnn.dataset import write_ppm

# solid base colors, one per class: linearly separable by channel dominance
CLASS_COLORS = ((200, 40, 40), (40, 200, 40), (40, 40, 200),
                (200, 200, 40), (200, 40, 200), (40, 200, 200))

DEFAULT_LABELS = ("0Blank", "1Cup", "2Pen")


def make_solid_dataset(root: Path, labels=DEFAULT_LABELS, images_per_class: int = 8,
                       side: int = 16, seed: int = 42, noise: float = 0.10) -> Path:
    """Folder-per-class PPM dataset of noisy solid-color fields."""
    rng = np.random.default_rng(seed)
    for idx, label in enumerate(labels):
        class_dir = root / label
        class_dir.mkdir(parents=True, exist_ok=True)
        base = np.array(CLASS_COLORS[idx % len(CLASS_COLORS)], dtype=np.float64)
        for n in range(images_per_class):
            multiplier = rng.uniform(1.0 - noise, 1.0 + noise, (side, side, 3))
            pixels = np.clip(base * multiplier, 0, 255).astype(np.uint8)
            write_ppm(class_dir / f"img{n:03d}.ppm", pixels)
    return root


@pytest.fixture
def tiny_cfg() -> NetConfig:
    """The 435-parameter instance used by the gradient checks."""
    return NetConfig(input_size=8)


@pytest.fixture
def policy() -> NumericPolicy:
    return NumericPolicy()


@pytest.fixture
def tiny_dims(tiny_cfg):
    return derive_dims(tiny_cfg)


@pytest.fixture
def class_map() -> ClassMap:
    return ClassMap(DEFAULT_LABELS)


@pytest.fixture
def solid_dataset(tmp_path) -> Path:
    """Small 3-class dataset of 16x16 images, 8 per class."""
    return make_solid_dataset(tmp_path / "data")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
