"""Image ingestion, affine augmentation, stratified splits and mini-batching."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import IngestionError, IterationError, SplitError
from .rng import generator

# stream tags keep the split, shuffle and augmentation generators independent
SPLIT_STREAM, SHUFFLE_STREAM, AUGMENT_STREAM = 101, 102, 103

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}
LUMA = (0.299, 0.587, 0.114)


@dataclass
class LabeledDataset:
    """Images ``[N, C, H, W]`` in [0, 1] with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    class_names: list
    paths: list = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and self.labels.max() >= len(self.class_names):
            raise ValueError("label outside class_names")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def samples(self):
        return list(zip(self.images, self.labels.tolist()))

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        paths = [self.paths[i] for i in idx] if self.paths else []
        return LabeledDataset(self.images[idx], self.labels[idx], list(self.class_names), paths)


@dataclass
class Batch:
    images: np.ndarray
    labels: np.ndarray
    indices: np.ndarray


# ---------------------------------------------------------------------------
# ingestion


def resize_bilinear(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of ``[C, H, W]`` using pixel-centre alignment, edges clamped."""
    c, h, w = image.shape

    def axis_weights(n_in, n_out):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, wy = axis_weights(h, height)
    x0, x1, wx = axis_weights(w, width)
    img = image.astype(np.float64)
    top = img[:, y0, :] * (1 - wy)[None, :, None] + img[:, y1, :] * wy[None, :, None]
    out = top[:, :, x0] * (1 - wx)[None, None, :] + top[:, :, x1] * wx[None, None, :]
    return out


def decode_image(path, channels: int = 1) -> np.ndarray:
    """Decode a PNG/JPEG into ``[C, H, W]`` float64 in [0, 1]."""
    with Image.open(path) as im:
        im.load()
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64)
            gray = arr / (65535.0 if arr.max() > 255 else 255.0)
            rgb = None
        elif im.mode == "L":
            gray = np.asarray(im, dtype=np.float64) / 255.0
            rgb = None
        else:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
            gray = None
    if channels == 1:
        if gray is None:
            gray = rgb[..., 0] * LUMA[0] + rgb[..., 1] * LUMA[1] + rgb[..., 2] * LUMA[2]
        return np.clip(gray, 0.0, 1.0)[None]
    if channels == 3:
        if rgb is None:
            return np.repeat(gray[None], 3, axis=0)
        return rgb.transpose(2, 0, 1)
    raise ValueError(f"channels must be 1 or 3, got {channels}")


def load_image(path, target=(1, 227, 227)) -> np.ndarray:
    c, h, w = target
    img = decode_image(path, c)
    if img.shape[1:] != (h, w):
        img = resize_bilinear(img, h, w)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def list_image_tree(root) -> list[tuple[str, list[Path]]]:
    """``(class_name, sorted image paths)`` for each class subdirectory, sorted by name."""
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"dataset root {root} is not a directory")
    classes = sorted(p for p in root.iterdir() if p.is_dir())
    if not classes:
        raise IngestionError(f"no class subdirectories under {root}")
    return [
        (d.name, sorted(f for f in d.iterdir() if f.is_file() and f.suffix.lower() in IMAGE_SUFFIXES))
        for d in classes
    ]


def ingest(root_dir, target=(1, 227, 227)) -> LabeledDataset:
    """Decode ``root/<class>/*.png|jpg|jpeg`` into a dataset resized to ``target``.

    Undecodable files are skipped with a warning; a class that ends up with no
    images is an error.
    """
    tree = list_image_tree(root_dir)
    images, labels, paths, class_names = [], [], [], []
    empty = []
    for label, (name, files) in enumerate(tree):
        class_names.append(name)
        kept = 0
        for f in files:
            try:
                img = load_image(f, target)
            except (UnidentifiedImageError, OSError, ValueError) as exc:
                logger.warning("skipping undecodable image %s: %s", f, exc)
                continue
            images.append(img)
            labels.append(label)
            paths.append(str(f))
            kept += 1
        if kept == 0:
            empty.append(name)
    if empty:
        raise IngestionError(f"no decodable images for class(es): {', '.join(empty)}")
    c, h, w = target
    return LabeledDataset(np.stack(images).reshape(-1, c, h, w), np.array(labels), class_names, paths)


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentSpec:
    rotation_deg: tuple = (0.0, 360.0)
    scale: tuple = (0.5, 1.0)
    shear: tuple = (-0.05, 0.05)
    reflect_prob: float = 0.5  # per axis, horizontal and vertical
    enabled: bool = True

    def __post_init__(self):
        for name in ("rotation_deg", "scale", "shear"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range is empty: {lo} > {hi}")
        if self.scale[0] <= 0:
            raise ValueError("scale range must be positive")
        if not 0.0 <= self.reflect_prob <= 1.0:
            raise ValueError("reflect_prob must lie in [0, 1]")


@dataclass(frozen=True)
class AugmentParams:
    rotation_deg: float = 0.0
    scale: float = 1.0
    shear: float = 0.0
    flip_h: bool = False
    flip_v: bool = False


def sample_augment_params(spec: AugmentSpec, rng: np.random.Generator) -> AugmentParams:
    flips = rng.random(2) < spec.reflect_prob
    return AugmentParams(
        rotation_deg=float(rng.uniform(*spec.rotation_deg)),
        scale=float(rng.uniform(*spec.scale)),
        shear=float(rng.uniform(*spec.shear)),
        flip_h=bool(flips[0]),
        flip_v=bool(flips[1]),
    )


def inverse_affine(params: AugmentParams) -> np.ndarray:
    """Output-to-input map for ``shear @ scale @ rotate @ reflect`` in (x, y)."""
    theta = math.radians(params.rotation_deg)
    c, s = math.cos(theta), math.sin(theta)
    shear_inv = np.array([[1.0, -params.shear], [0.0, 1.0]])
    scale_inv = np.eye(2) / params.scale
    rot_inv = np.array([[c, s], [-s, c]])
    reflect = np.diag([-1.0 if params.flip_h else 1.0, -1.0 if params.flip_v else 1.0])
    return reflect @ rot_inv @ scale_inv @ shear_inv


def warp_bilinear(image: np.ndarray, inv: np.ndarray) -> np.ndarray:
    """Resample ``[C, H, W]`` through ``inv`` about the image centre, zero fill."""
    c, h, w = image.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xs - cx, ys - cy
    sx = inv[0, 0] * dx + inv[0, 1] * dy + cx
    sy = inv[1, 0] * dx + inv[1, 1] * dy + cy

    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx, fy = sx - x0, sy - y0
    out = np.zeros((c, h, w), dtype=np.float64)
    for oy, wy in ((0, 1.0 - fy), (1, fy)):
        for ox, wx in ((0, 1.0 - fx), (1, fx)):
            yy, xx = y0 + oy, x0 + ox
            valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            vals = image[:, np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
            out += np.where(valid, vals * (wy * wx), 0.0)
    return out


def apply_augmentation(image: np.ndarray, params: AugmentParams) -> np.ndarray:
    return warp_bilinear(image, inverse_affine(params)).astype(image.dtype)


def augment(image: np.ndarray, spec: AugmentSpec, seed) -> np.ndarray:
    """Randomly reflect, rotate, scale and shear ``image`` as one affine warp."""
    if not spec.enabled:
        return image
    keys = seed if isinstance(seed, (tuple, list)) else (seed,)
    return apply_augmentation(image, sample_augment_params(spec, generator(*keys)))


# ---------------------------------------------------------------------------
# splitting and batching


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    val_fraction_of_train: float = 0.1
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        for name in ("train_fraction", "val_fraction_of_train"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")


def round_half_up(fraction: float, n: int) -> int:
    return int((Decimal(repr(float(fraction))) * n).to_integral_value(rounding=ROUND_HALF_UP))


def split_counts(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    """``(train, val, test)`` sizes for a group of ``n`` samples."""
    test_fraction = Decimal(1) - Decimal(repr(float(spec.train_fraction)))
    n_test = int((test_fraction * n).to_integral_value(rounding=ROUND_HALF_UP))
    n_val = round_half_up(spec.val_fraction_of_train, n - n_test)
    return n - n_test - n_val, n_val, n_test


def split_indices(labels: Sequence[int], num_classes: int, spec: SplitSpec):
    """Sorted ``(train, val, test)`` index arrays."""
    labels = np.asarray(labels, dtype=np.int64)
    groups = []
    if spec.stratified:
        for k in range(num_classes):
            idx = np.flatnonzero(labels == k)
            if len(idx) < 3:
                raise SplitError(f"class {k} has {len(idx)} samples; stratified split needs at least 3")
            groups.append((k, idx))
    else:
        groups.append((num_classes, np.arange(len(labels))))
    parts = ([], [], [])
    for key, idx in groups:
        perm = generator(spec.seed, SPLIT_STREAM, key).permutation(idx)
        n_train, n_val, n_test = split_counts(len(idx), spec)
        if n_train < 1:
            raise SplitError(f"group {key} leaves no training samples")
        parts[2].append(perm[:n_test])
        parts[1].append(perm[n_test : n_test + n_val])
        parts[0].append(perm[n_test + n_val :])
    return tuple(np.sort(np.concatenate(p)).astype(np.int64) for p in parts)


def split(ds: LabeledDataset, spec: SplitSpec):
    train, val, test = split_indices(ds.labels, len(ds.class_names), spec)
    return ds.subset(train), ds.subset(val), ds.subset(test)


def batches(
    ds: LabeledDataset,
    batch_size: int = 16,
    epoch: int = 0,
    seed: int = 0,
    augment_spec: Optional[AugmentSpec] = None,
) -> Iterator[Batch]:
    """Shuffled mini-batches for one epoch; the last partial batch is kept.

    Ordering depends only on ``(seed, epoch)``; each sample's augmentation on
    ``(seed, epoch, sample_index)``.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if len(ds) == 0:
        raise IterationError("cannot batch an empty dataset")
    order = generator(seed, SHUFFLE_STREAM, epoch).permutation(len(ds))
    return _iter_batches(ds, order, batch_size, epoch, seed, augment_spec)


def _iter_batches(ds, order, batch_size, epoch, seed, augment_spec):
    use_aug = augment_spec is not None and augment_spec.enabled
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        imgs = ds.images[idx]
        if use_aug:
            imgs = np.stack([augment(ds.images[i], augment_spec, (seed, AUGMENT_STREAM, epoch, int(i))) for i in idx])
        yield Batch(imgs, ds.labels[idx], idx)
