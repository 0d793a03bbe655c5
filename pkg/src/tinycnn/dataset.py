"""Folder-per-class dataset indexing, deterministic validation splits, and
binary PPM image loading.

Layout on disk: ``<root>/<label>/<files>.ppm`` with one directory per class
label, plus a ``header/`` directory for weight files.  The validation split
takes the last N files of each class under bytewise filename order, so the
same directory always yields the same split on every platform.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ClassMap, NumericPolicy
from .errors import DatasetError
from .forward import ResizePlan, resize_normalize

PPM_SUFFIX = ".ppm"
WEIGHTS_SUBDIR = "header"


def read_ppm(path: str | Path) -> np.ndarray:
    """Decode a binary PPM ("P6", maxval 255) into a (H, W, 3) uint8 array."""
    data = Path(path).read_bytes()
    pos = 0

    def next_token() -> bytes:
        nonlocal pos
        while pos < len(data):
            byte = data[pos:pos + 1]
            if byte == b"#":
                while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif byte.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DatasetError(f"{path}: truncated PPM header")
        return data[start:pos]

    magic = next_token()
    if magic != b"P6":
        raise DatasetError(f"{path}: not a binary PPM (magic {magic!r}, expected b'P6')")
    try:
        width = int(next_token())
        height = int(next_token())
        maxval = int(next_token())
    except ValueError as exc:
        raise DatasetError(f"{path}: malformed PPM header: {exc}") from None
    if width < 1 or height < 1:
        raise DatasetError(f"{path}: invalid PPM dimensions {width}x{height}")
    if maxval != 255:
        raise DatasetError(f"{path}: PPM maxval {maxval} unsupported (need 255)")
    pos += 1  # single whitespace byte separates header and pixels
    expected = width * height * 3
    pixels = data[pos:pos + expected]
    if len(pixels) != expected:
        raise DatasetError(
            f"{path}: truncated pixel data ({len(pixels)} of {expected} bytes)")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width, 3).copy()


def write_ppm(path: str | Path, pixels: np.ndarray) -> None:
    """Write a (H, W, 3) uint8 array as binary PPM."""
    if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
        raise DatasetError(f"write_ppm needs (H, W, 3) uint8, got "
                           f"{pixels.shape} {pixels.dtype}")
    height, width = pixels.shape[:2]
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())


def center_crop_square(pixels: np.ndarray) -> np.ndarray:
    """Crop the longer dimension symmetrically to the shorter side."""
    height, width = pixels.shape[:2]
    side = min(height, width)
    top = (height - side) // 2
    left = (width - side) // 2
    return pixels[top:top + side, left:left + side, :]


def load_image(path: str | Path, plan: ResizePlan, policy: NumericPolicy) -> np.ndarray:
    """Decode, center-crop to square, and resize-normalize one image."""
    square = center_crop_square(read_ppm(path))
    if square.shape[0] != plan.source_side:
        raise DatasetError(
            f"{path}: cropped side {square.shape[0]} does not match resize plan "
            f"source {plan.source_side}")
    return resize_normalize(square, plan, policy)


@dataclass(frozen=True)
class ClassFiles:
    label: str
    train: tuple[Path, ...]
    validation: tuple[Path, ...]


@dataclass(frozen=True)
class DatasetIndex:
    """Per-class file lists with the train/validation partition applied."""

    root: Path
    classes: tuple[ClassFiles, ...]

    def train_pairs(self) -> list[tuple[Path, int]]:
        return [(path, idx) for idx, cls in enumerate(self.classes)
                for path in cls.train]

    def validation_pairs(self) -> list[tuple[Path, int]]:
        return [(path, idx) for idx, cls in enumerate(self.classes)
                for path in cls.validation]

    def all_pairs(self) -> list[tuple[Path, int]]:
        return [(path, idx) for idx, cls in enumerate(self.classes)
                for path in cls.train + cls.validation]


def scan(root: str | Path, class_map: ClassMap, validation_images: int) -> DatasetIndex:
    """Index ``root`` by the class map's labels.

    Files sort bytewise by filename (locale-independent); the last
    ``validation_images`` of each class become the hold-out set.  Every class
    needs at least one training image beyond the hold-out.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root does not exist: {root}")
    if validation_images < 0:
        raise DatasetError(f"validation_images must be >= 0, got {validation_images}")
    classes = []
    for label in class_map.labels:
        class_dir = root / label
        if not class_dir.is_dir():
            raise DatasetError(f"missing class directory: {class_dir}")
        try:
            names = [entry.name for entry in class_dir.iterdir()
                     if entry.is_file() and entry.suffix == PPM_SUFFIX]
        except OSError as exc:
            raise DatasetError(f"cannot read class directory {class_dir}: {exc}") from exc
        names.sort(key=os.fsencode)
        if len(names) < validation_images + 1:
            raise DatasetError(
                f"class {label!r} has {len(names)} images; needs at least "
                f"{validation_images + 1} (validation split of {validation_images} "
                f"plus one training image)")
        files = tuple(class_dir / name for name in names)
        if validation_images > 0:
            split = len(files) - validation_images
            classes.append(ClassFiles(label, files[:split], files[split:]))
        else:
            classes.append(ClassFiles(label, files, ()))
    return DatasetIndex(root=root, classes=tuple(classes))
