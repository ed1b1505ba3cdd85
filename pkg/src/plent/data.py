"""Dataset ingestion: IDX (MNIST-family) and CIFAR-10 binary formats,
random-crop/flip augmentation, deterministic subsetting, and a seeded
synthetic 28x28 set for offline runs.

Images are float32 in [0, 1], laid out count x channels x H x W. Labels
are int64 in [0, 10). Parsing is total: a byte stream either yields a
valid dataset or raises ``IngestError`` with offset diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3*32*32 pixels
NUM_CLASSES = 10


class IngestError(ValueError):
    """Raised when a dataset file fails to parse."""


@dataclass
class Dataset:
    images: np.ndarray  # (count, channels, H, W) float32 in [0, 1]
    labels: np.ndarray  # (count,) int64 in [0, 10)
    name: str = ""

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be (count, C, H, W), got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError(
                f"label count {self.labels.shape} does not match image count "
                f"{self.images.shape[0]}"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= NUM_CLASSES):
            raise ValueError(f"labels must lie in [0, {NUM_CLASSES})")

    def __len__(self):
        return self.images.shape[0]


# ---------------------------------------------------------------------------
# IDX format (big endian):  i32 magic | i32 dims... | u8 payload
# ---------------------------------------------------------------------------


def _read_idx(path, expected_magic, ndim):
    raw = Path(path).read_bytes()
    header = 4 * (1 + ndim)
    if len(raw) < header:
        raise IngestError(
            f"{path}: truncated header, need {header} bytes, file has {len(raw)}"
        )
    magic = int.from_bytes(raw[0:4], "big")
    if magic != expected_magic:
        raise IngestError(
            f"{path}: bad magic at offset 0: expected 0x{expected_magic:08x}, "
            f"found 0x{magic:08x}"
        )
    dims = [int.from_bytes(raw[4 * (i + 1) : 4 * (i + 2)], "big") for i in range(ndim)]
    count = int(np.prod(dims))
    if len(raw) != header + count:
        raise IngestError(
            f"{path}: payload length mismatch at offset {header}: dims {dims} "
            f"need {count} bytes, file has {len(raw) - header}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, name="idx") -> Dataset:
    """Parse an IDX image/label file pair into a single-channel dataset."""
    images = _read_idx(images_path, IDX_IMAGE_MAGIC, ndim=3)
    labels = _read_idx(labels_path, IDX_LABEL_MAGIC, ndim=1)
    if images.shape[0] != labels.shape[0]:
        raise IngestError(
            f"{images_path} holds {images.shape[0]} images but {labels_path} "
            f"holds {labels.shape[0]} labels"
        )
    return Dataset(
        images=(images[:, None, :, :].astype(np.float32) / 255.0),
        labels=labels.astype(np.int64),
        name=name,
    )


def write_idx(images_u8, labels, images_path, labels_path):
    """Serialize uint8 images (count, H, W) and labels to IDX files."""
    images_u8 = np.ascontiguousarray(images_u8, dtype=np.uint8)
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    n, h, w = images_u8.shape
    with open(images_path, "wb") as f:
        f.write(IDX_IMAGE_MAGIC.to_bytes(4, "big"))
        for d in (n, h, w):
            f.write(int(d).to_bytes(4, "big"))
        f.write(images_u8.tobytes())
    with open(labels_path, "wb") as f:
        f.write(IDX_LABEL_MAGIC.to_bytes(4, "big"))
        f.write(int(labels.shape[0]).to_bytes(4, "big"))
        f.write(labels.tobytes())


# ---------------------------------------------------------------------------
# CIFAR-10 binary batches: records of 1 label byte + 3072 pixel bytes
# ---------------------------------------------------------------------------


def load_cifar10(batch_paths, name="cifar10") -> Dataset:
    """Parse one or more CIFAR-10 binary batch files."""
    all_images = []
    all_labels = []
    for path in batch_paths:
        raw = Path(path).read_bytes()
        if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES != 0:
            raise IngestError(
                f"{path}: length {len(raw)} is not a positive multiple of "
                f"{CIFAR_RECORD_BYTES}-byte records"
            )
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        all_labels.append(records[:, 0].astype(np.int64))
        all_images.append(records[:, 1:].reshape(-1, 3, 32, 32))
    images = np.concatenate(all_images)
    labels = np.concatenate(all_labels)
    return Dataset(images=images.astype(np.float32) / 255.0, labels=labels, name=name)


def write_cifar10(path, images_u8, labels):
    """Serialize uint8 images (count, 3, 32, 32) and labels to one batch file."""
    images_u8 = np.ascontiguousarray(images_u8, dtype=np.uint8)
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    n = images_u8.shape[0]
    records = np.empty((n, CIFAR_RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = labels
    records[:, 1:] = images_u8.reshape(n, -1)
    Path(path).write_bytes(records.tobytes())


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------


@dataclass
class AugmentSpec:
    """Random resized crop plus horizontal flip.

    ``crop_scale`` bounds the crop area as a fraction of the image area;
    ``aspect`` bounds the height/width ratio of the crop.
    """

    crop_scale: tuple = (0.6, 1.0)
    aspect: tuple = (0.75, 4.0 / 3.0)
    hflip_prob: float = 0.5
    enabled: bool = True

    def __post_init__(self):
        for name, (lo, hi) in (("crop_scale", self.crop_scale), ("aspect", self.aspect)):
            if not (0 < lo <= hi):
                raise ValueError(f"{name} interval must satisfy 0 < lo <= hi, got ({lo}, {hi})")
        if not 0 <= self.hflip_prob <= 1:
            raise ValueError("hflip_prob must lie in [0, 1]")


def bilinear_resize(img, out_h, out_w):
    """Bilinear resize of a (C, H, W) image; exact no-op at identical size."""
    c, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).astype(img.dtype)[None, :, None]
    wx = (xs - x0).astype(img.dtype)[None, None, :]
    top = img[:, y0][:, :, x0] * (1 - wx) + img[:, y0][:, :, x1] * wx
    bot = img[:, y1][:, :, x0] * (1 - wx) + img[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


def augment(image, spec: AugmentSpec, rng) -> np.ndarray:
    """Random resized crop then horizontal flip of a (C, H, W) image.

    Area fraction and aspect ratio are sampled uniformly within the spec.
    Degenerate crop geometry is resampled up to 10 times, then the whole
    image is used (center fallback).
    """
    if not spec.enabled:
        return image.copy()
    c, h, w = image.shape
    crop_h, crop_w = h, w
    top = left = 0
    for _ in range(10):
        area = rng.uniform(*spec.crop_scale) * h * w
        ratio = rng.uniform(*spec.aspect)  # height / width
        ch = int(round(np.sqrt(area * ratio)))
        cw = int(round(np.sqrt(area / ratio)))
        if 1 <= ch <= h and 1 <= cw <= w:
            crop_h, crop_w = ch, cw
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            break
    crop = image[:, top : top + crop_h, left : left + crop_w]
    out = bilinear_resize(crop, h, w)
    if rng.uniform() < spec.hflip_prob:
        out = out[:, :, ::-1].copy()
    return out


def augment_batch(images, spec: AugmentSpec, rng) -> np.ndarray:
    return np.stack([augment(img, spec, rng) for img in images])


def resize_dataset(dataset: Dataset, out_h, out_w) -> Dataset:
    """Bilinear-resize every image (used to feed reduced-resolution models)."""
    if dataset.images.shape[2:] == (out_h, out_w):
        return dataset
    images = np.stack([bilinear_resize(img, out_h, out_w) for img in dataset.images])
    return Dataset(images=np.clip(images, 0.0, 1.0), labels=dataset.labels, name=dataset.name)


# ---------------------------------------------------------------------------
# Subsetting and synthetic data
# ---------------------------------------------------------------------------


def subset(dataset: Dataset, n, seed) -> Dataset:
    """Seeded sample of n items without replacement (n == count permutes)."""
    count = len(dataset)
    if n > count:
        raise ValueError(f"cannot take {n} items from a dataset of {count}")
    idx = np.random.default_rng(seed).permutation(count)[:n]
    return Dataset(
        images=dataset.images[idx], labels=dataset.labels[idx], name=dataset.name
    )


def class_counts(dataset: Dataset) -> np.ndarray:
    return np.bincount(dataset.labels, minlength=NUM_CLASSES)


def synthetic28(n_train, n_test, seed=0, noise=0.25, max_shift=4):
    """Seeded synthetic 10-class 28x28 dataset (train, test).

    Each class is a smooth random prototype image; samples are the
    prototype cyclically shifted by up to ``max_shift`` pixels per axis
    plus Gaussian pixel noise, clipped to [0, 1]. Learnable to high
    accuracy yet not linearly trivial, which is what the desk-scale
    training experiments need when no real corpus is on disk.
    """
    rng = np.random.default_rng(seed)
    protos = []
    for _ in range(NUM_CLASSES):
        coarse = rng.uniform(0.0, 1.0, size=(1, 7, 7)).astype(np.float32)
        protos.append(bilinear_resize(coarse, 28, 28)[0])
    protos = np.stack(protos)

    def draw(n):
        labels = rng.integers(0, NUM_CLASSES, size=n)
        images = np.empty((n, 1, 28, 28), dtype=np.float32)
        shifts = rng.integers(-max_shift, max_shift + 1, size=(n, 2))
        for i in range(n):
            img = np.roll(protos[labels[i]], shift=tuple(shifts[i]), axis=(0, 1))
            images[i, 0] = img
        images += rng.normal(0.0, noise, size=images.shape).astype(np.float32)
        np.clip(images, 0.0, 1.0, out=images)
        return Dataset(images=images, labels=labels, name="synthetic28")

    return draw(n_train), draw(n_test)
