"""Datasets and binary containers: IDX (read), GRCT tensors (read/write), synthetic blobs."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..rng import Xoshiro256, sub_seed

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
GRCT_MAGIC = b"GRCT"
GRCT_VERSION = 1


class FormatError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # (n, H, W, C) in [0, 1]
    labels: np.ndarray  # (n,) int64
    name: str
    class_count: int

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 and self.images.size:
            raise ValueError(f"images must be (n, H, W, C), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels out of range for {self.class_count} classes")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], self.name, self.class_count)


def load_idx(images_path, labels_path, class_count: int | None = None) -> Dataset:
    """Read an IDX image/label file pair (e.g. MNIST).  Pixels are scaled by 1/255."""
    img = Path(images_path).read_bytes()
    lab = Path(labels_path).read_bytes()
    if len(img) < 16:
        raise FormatError(f"{images_path}: truncated header ({len(img)} bytes)")
    magic, n, rows, cols = struct.unpack(">IIII", img[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"{images_path}: bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    if len(lab) < 8:
        raise FormatError(f"{labels_path}: truncated header ({len(lab)} bytes)")
    lmagic, ln = struct.unpack(">II", lab[:8])
    if lmagic != IDX_LABELS_MAGIC:
        raise FormatError(f"{labels_path}: bad label magic 0x{lmagic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    if ln != n:
        raise FormatError(f"image count {n} does not match label count {ln}")
    need = 16 + n * rows * cols
    if len(img) < need:
        raise FormatError(f"{images_path}: truncated payload, {len(img)} of {need} bytes")
    if len(lab) < 8 + n:
        raise FormatError(f"{labels_path}: truncated payload, {len(lab)} of {8 + n} bytes")
    pixels = np.frombuffer(img, dtype=np.uint8, count=n * rows * cols, offset=16)
    images = pixels.reshape(n, rows, cols, 1).astype(np.float64) / 255.0
    labels = np.frombuffer(lab, dtype=np.uint8, count=n, offset=8).astype(np.int64)
    if class_count is None:
        class_count = int(labels.max()) + 1 if n else 0
    return Dataset(images, labels, Path(images_path).stem, class_count)


def write_grct(path, array) -> None:
    """``GRCT`` | u32 version | u8 rank | u32 dims[rank] | f64 payload, all little-endian."""
    a = np.ascontiguousarray(array, dtype="<f8")
    if a.ndim > 255:
        raise ValueError("rank too large for GRCT")
    with open(path, "wb") as fh:
        fh.write(GRCT_MAGIC)
        fh.write(struct.pack("<IB", GRCT_VERSION, a.ndim))
        fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
        fh.write(a.tobytes())


def read_grct(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != GRCT_MAGIC:
        raise FormatError(f"{path}: bad GRCT magic {raw[:4]!r}")
    if len(raw) < 9:
        raise FormatError(f"{path}: truncated GRCT header")
    version, rank = struct.unpack("<IB", raw[4:9])
    if version != GRCT_VERSION:
        raise FormatError(f"{path}: unsupported GRCT version {version}")
    end = 9 + 4 * rank
    if len(raw) < end:
        raise FormatError(f"{path}: truncated GRCT dims")
    dims = struct.unpack(f"<{rank}I", raw[9:end])
    count = int(np.prod(dims)) if rank else 1
    if len(raw) != end + 8 * count:
        raise FormatError(f"{path}: payload is {len(raw) - end} bytes, expected {8 * count}")
    return np.frombuffer(raw, dtype="<f8", offset=end).astype(np.float64).reshape(dims)


def _blob_field(size: int, centers: np.ndarray, widths: np.ndarray, amps: np.ndarray) -> np.ndarray:
    r = np.arange(size) + 0.5
    yy, xx = np.meshgrid(r, r, indexing="ij")
    field = np.zeros((size, size))
    for (cy, cx), w, a in zip(centers, widths, amps):
        field += a * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * w * w))
    return field


def gen_synthetic(
    classes: int = 10,
    per_class: int = 20,
    image_size: int = 32,
    seed: int = 0,
    *,
    split: int = 0,
    channels: int = 1,
    blobs: int = 3,
    noise: float = 0.3,
    jitter: float = 1.0,
    contrast: float = 0.4,
    background: float = 0.3,
) -> Dataset:
    """Class-conditional smooth blob images on a grey background.

    ``seed`` fixes the class prototypes: each class owns ``blobs`` Gaussian
    bumps with fixed centres, widths and per-channel amplitudes
    (``contrast * U[0.5, 1]``).  ``split`` selects an independent sample
    stream over the same prototypes, so ``split=0`` and ``split=1`` make a
    train/test pair.  A sample shifts every centre by up to ``jitter`` pixels,
    rescales the amplitudes by U[0.8, 1.2], adds N(0, noise^2) pixel noise
    and clips to [0, 1].  Samples are emitted class by class.
    """
    if classes < 2:
        raise ValueError(f"need at least two classes, got {classes}")
    rng = Xoshiro256(seed)
    protos = []
    for _ in range(classes):
        centers = 1.5 + rng.uniform_array(2 * blobs).reshape(blobs, 2) * (image_size - 3.0)
        widths = image_size * (0.08 + 0.10 * rng.uniform_array(blobs))
        tint = contrast * (0.5 + 0.5 * rng.uniform_array(blobs * channels).reshape(blobs, channels))
        protos.append((centers, widths, tint))

    rng = Xoshiro256(sub_seed(seed, split + 1))
    images = np.zeros((classes * per_class, image_size, image_size, channels))
    labels = np.zeros(classes * per_class, dtype=np.int64)
    i = 0
    for c, (centers, widths, tint) in enumerate(protos):
        for _ in range(per_class):
            shift = (2.0 * rng.uniform_array(2 * blobs).reshape(blobs, 2) - 1.0) * jitter
            scale = 0.8 + 0.4 * rng.uniform_array(blobs)
            for ch in range(channels):
                images[i, :, :, ch] = background + _blob_field(image_size, centers + shift, widths, scale * tint[:, ch])
            images[i] += noise * rng.normal_array(image_size * image_size * channels).reshape(
                image_size, image_size, channels
            )
            labels[i] = c
            i += 1
    np.clip(images, 0.0, 1.0, out=images)
    return Dataset(images, labels, f"synthetic-s{seed}-split{split}", classes)
