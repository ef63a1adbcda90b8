"""Dataset sources: a seeded synthetic generator and the CIFAR-10 binary reader."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import LabelOutOfRange, TruncatedFile

CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)


@dataclass(frozen=True, eq=False)
class Sample:
    image: np.ndarray  # (C, H, W) in [0, 1]
    label: int


def stack(samples: list[Sample]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.image for s in samples]).astype(np.float64)
    y = np.array([s.label for s in samples], dtype=np.int64)
    return x, y


def load_cifar_binary(path, num_classes: int = 10) -> list[Sample]:
    """Parse ``label byte + 1024 R + 1024 G + 1024 B`` records, pixels scaled by 1/255."""
    raw = Path(path).read_bytes()
    if len(raw) % CIFAR_RECORD:
        raise TruncatedFile(f"{path}: {len(raw)} bytes is not a multiple of {CIFAR_RECORD}")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        raise LabelOutOfRange(f"{path}: record {bad[0]} has label {labels[bad[0]]}")
    images = records[:, 1:].reshape(-1, *CIFAR_SHAPE).astype(np.float64) / 255.0
    return [Sample(img, int(lab)) for img, lab in zip(images, labels)]


def _templates(classes: int, channels: int, extent: int) -> np.ndarray:
    """One Gaussian blob per class on a ring around the image centre, with a class hue."""
    coords = np.arange(extent) - (extent - 1) / 2
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    radius, sigma = extent / 4, extent / 5
    out = np.empty((classes, channels, extent, extent))
    for c in range(classes):
        angle = 2 * np.pi * c / classes
        cy, cx = radius * np.sin(angle), radius * np.cos(angle)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
        for ch in range(channels):
            hue = 0.5 + 0.5 * np.cos(2 * np.pi * (c / classes + ch / channels))
            out[c, ch] = blob * hue
    return out


def gen_synthetic(num: int, classes: int = 4, extent: int = 20, seed: int = 0,
                  channels: int = 3, noise: float = 0.25) -> list[Sample]:
    """Class-conditional blob images with additive Gaussian noise, clipped to [0, 1]."""
    if num < classes:
        raise ValueError("need at least one sample per class")
    rng = np.random.default_rng(seed)
    templates = 0.1 + 0.8 * _templates(classes, channels, extent)
    labels = rng.permutation(np.arange(num) % classes)
    images = templates[labels] + noise * rng.standard_normal((num, channels, extent, extent))
    images = np.clip(images, 0.0, 1.0)
    return [Sample(img, int(lab)) for img, lab in zip(images, labels)]
