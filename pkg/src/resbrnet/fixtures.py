"""Synthetic four-class MRI-like fixture images for tests and demos.

Each image is a noisy elliptical "brain" on a black background. Tumour
classes add a bright lesion whose size and placement depend on the class.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .rng import generator

CLASS_NAMES = ("glioma_tumor", "meningioma_tumor", "normal", "pituitary_tumor")


def _blob(yy, xx, cy, cx, radius):
    return np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * radius**2)))


def synth_image(label: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """One ``size`` x ``size`` grayscale image in [0, 1] for class index ``label``."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / (size - 1)
    cy, cx = 0.5 + rng.normal(0, 0.02), 0.5 + rng.normal(0, 0.02)
    ry, rx = 0.40 + rng.normal(0, 0.02), 0.33 + rng.normal(0, 0.02)
    inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    img = np.where(inside, 0.35, 0.0)
    img = img + inside * 0.05 * np.sin(12 * yy + rng.uniform(0, 6)) * np.cos(9 * xx)

    name = CLASS_NAMES[label]
    if name == "glioma_tumor":
        ang = rng.uniform(0, 2 * np.pi)
        img = img + 0.55 * _blob(yy, xx, cy + 0.15 * np.sin(ang), cx + 0.12 * np.cos(ang), 0.09)
    elif name == "meningioma_tumor":
        ang = rng.uniform(0, 2 * np.pi)
        img = img + 0.6 * _blob(yy, xx, cy + 0.34 * np.sin(ang), cx + 0.28 * np.cos(ang), 0.035)
    elif name == "pituitary_tumor":
        img = img + 0.55 * _blob(yy, xx, cy + 0.22 + rng.normal(0, 0.02), cx + rng.normal(0, 0.02), 0.05)
    img = img * inside + rng.normal(0, 0.03, img.shape) * inside
    return np.clip(img, 0.0, 1.0)


def write_fixture_tree(root, per_class: int = 20, size: int = 64, seed: int = 0, classes=CLASS_NAMES) -> Path:
    """Write ``root/<class>/<class>_NNN.png`` and return ``root``."""
    root = Path(root)
    for label, name in enumerate(classes):
        d = root / name
        d.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            img = synth_image(label % len(CLASS_NAMES), size, generator(seed, label, i))
            Image.fromarray(np.round(img * 255).astype(np.uint8)).save(d / f"{name}_{i:03d}.png")
    return root
