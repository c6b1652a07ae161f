"""
Dataset acquisition and preparation: the IDX files MNIST is distributed in, bilinear resizing, class
subsets and synthetic Gaussian clusters.
"""

import logging
import math
import os
import typing as t
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._errors import ConsistencyError, FormatError, InvalidArgumentError

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

#: Environment variable that overrides the dataset root directory.
DATA_DIR_ENV = "MCDC_DATA_DIR"


@dataclass
class LabeledDataset:
    """Images (or vectors) in `[0, 1]` with their class ids in `[0, class_count)`."""

    images: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self) -> None:
        if self.images.shape[0] != self.labels.shape[0]:
            raise ConsistencyError(f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise InvalidArgumentError(f"labels must lie in [0, {self.class_count})")

    def __len__(self) -> int:
        return int(self.images.shape[0])

    @property
    def item_shape(self) -> t.Tuple[int, ...]:
        return tuple(self.images.shape[1:])


def _read_idx(path: Path, magic: int, dims: int) -> t.Tuple[t.Tuple[int, ...], np.ndarray]:
    data = path.read_bytes()
    header_size = 4 * (1 + dims)
    if len(data) < header_size:
        raise FormatError(f"truncated IDX header, expected {header_size} bytes", str(path), len(data))
    header = np.frombuffer(data[:header_size], dtype=">u4")
    if int(header[0]) != magic:
        raise FormatError(f"bad IDX magic 0x{int(header[0]):08x}, expected 0x{magic:08x}", str(path), 0)
    extents = tuple(int(v) for v in header[1:])
    expected = int(np.prod(extents, dtype=np.int64))
    payload = data[header_size:]
    if len(payload) < expected:
        raise FormatError(f"truncated IDX payload, expected {expected} bytes", str(path), len(data))
    if len(payload) > expected:
        raise FormatError("trailing bytes after the IDX payload", str(path), header_size + expected)
    return extents, np.frombuffer(payload, dtype=np.uint8).reshape(extents)


def load_idx(images_path: t.Union[str, Path], labels_path: t.Union[str, Path]) -> LabeledDataset:
    """
    Load an IDX image file (`[N, H, W]` unsigned bytes) and the matching IDX label file. Pixels are scaled
    to `[0, 1]` by 1/255; the images get a single channel axis.
    """

    _, pixels = _read_idx(Path(images_path), IDX_IMAGES_MAGIC, 3)
    _, labels = _read_idx(Path(labels_path), IDX_LABELS_MAGIC, 1)
    if pixels.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"{images_path} holds {pixels.shape[0]} images but {labels_path} holds {labels.shape[0]} labels"
        )
    images = (pixels.astype(np.float32) / np.float32(255.0))[:, None, :, :]
    labels = labels.astype(np.int64)
    class_count = int(labels.max()) + 1 if labels.size else 0
    return LabeledDataset(images, labels, class_count)


def save_idx(ds: LabeledDataset, images_path: t.Union[str, Path], labels_path: t.Union[str, Path]) -> None:
    """Write a single-channel dataset back to IDX files (pixels rounded to the nearest 1/255 step)."""

    if ds.images.ndim != 4 or ds.images.shape[1] != 1:
        raise InvalidArgumentError(f"IDX images must be single-channel [N, 1, H, W], got {ds.images.shape}")
    n, _, height, width = ds.images.shape
    pixels = np.rint(np.clip(ds.images[:, 0], 0.0, 1.0) * 255.0).astype(np.uint8)
    header = np.array([IDX_IMAGES_MAGIC, n, height, width], dtype=">u4")
    Path(images_path).write_bytes(header.tobytes() + pixels.tobytes())
    labels = ds.labels.astype(np.uint8)
    Path(labels_path).write_bytes(np.array([IDX_LABELS_MAGIC, n], dtype=">u4").tobytes() + labels.tobytes())


def _bilinear_axis(in_size: int, out_size: int) -> t.Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Source indices and weights for half-pixel-center sampling along one axis."""

    src = (np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    lower = np.floor(src).astype(np.int64)
    upper = np.minimum(lower + 1, in_size - 1)
    return lower, upper, src - lower


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """
    Resize a `[C, H, W]` (or `[N, C, H, W]`) image with bilinear sampling at half-pixel centers (the
    `align_corners=False` convention); samples outside the image clamp to the border.
    """

    if out_h < 1 or out_w < 1:
        raise InvalidArgumentError(f"output extents must be >= 1, got {out_h}x{out_w}")
    height, width = img.shape[-2:]
    if height < 1 or width < 1:
        raise InvalidArgumentError(f"input extents must be >= 1, got {height}x{width}")
    if (height, width) == (out_h, out_w):
        return img.copy()

    y0, y1, wy = _bilinear_axis(height, out_h)
    x0, x1, wx = _bilinear_axis(width, out_w)
    wy = wy.astype(img.dtype)[:, None]
    wx = wx.astype(img.dtype)
    top, bottom = img[..., y0, :], img[..., y1, :]
    rows = top + (bottom - top) * wy
    left, right = rows[..., x0], rows[..., x1]
    return left + (right - left) * wx


def resize_dataset(ds: LabeledDataset, out_h: int, out_w: int) -> LabeledDataset:
    return LabeledDataset(bilinear_resize(ds.images, out_h, out_w), ds.labels.copy(), ds.class_count)


def subset_by_classes(
    ds: LabeledDataset, classes: t.Sequence[int], per_class_cap: int, rng: np.random.Generator
) -> LabeledDataset:
    """
    Select at most *per_class_cap* random samples of each of the *classes* and relabel them densely in the
    given order (`classes[i]` becomes label `i`). The result is shuffled.
    """

    if not classes:
        raise InvalidArgumentError("at least one class must be selected")
    if per_class_cap < 1:
        raise InvalidArgumentError(f"per_class_cap must be >= 1, got {per_class_cap}")
    indices, labels = [], []
    for new_label, cls in enumerate(classes):
        members = np.flatnonzero(ds.labels == cls)
        if members.size == 0:
            raise InvalidArgumentError(f"class {cls} is not present in the dataset")
        chosen = rng.permutation(members)[:per_class_cap]
        indices.append(chosen)
        labels.append(np.full(chosen.shape, new_label, dtype=np.int64))
    order = rng.permutation(sum(len(chunk) for chunk in indices))
    selected = np.concatenate(indices)[order]
    return LabeledDataset(ds.images[selected], np.concatenate(labels)[order], len(classes))


def synthetic_blobs(
    n_per_class: int, k: int, dim: int, separation: float, rng: np.random.Generator
) -> LabeledDataset:
    """
    *k* isotropic unit-variance Gaussian clusters in `R^dim`. Neighbouring means are *separation* apart
    (on a regular polygon in the first two axes, or along the only axis if `dim == 1`). The values are
    squashed affinely into `[0, 1]` over the whole sample.
    """

    if k < 1 or dim < 1 or n_per_class < 1:
        raise InvalidArgumentError("k, dim and n_per_class must be >= 1")
    means = np.zeros((k, dim))
    if k > 1 and dim == 1:
        means[:, 0] = np.arange(k) * separation
    elif k > 1:
        radius = separation / (2.0 * math.sin(math.pi / k))
        angles = 2.0 * math.pi * np.arange(k) / k
        means[:, 0] = radius * np.cos(angles)
        means[:, 1] = radius * np.sin(angles)

    labels = np.repeat(np.arange(k), n_per_class)
    points = means[labels] + rng.standard_normal((labels.size, dim))
    low, high = points.min(), points.max()
    points = (points - low) / (high - low) if high > low else np.full_like(points, 0.5)
    order = rng.permutation(labels.size)
    return LabeledDataset(points[order].astype(np.float32), labels[order], k)


@dataclass
class DataConfig:
    """Selects and prepares the dataset of a run."""

    #: One of `mnist` (all classes), `mnist2` (a class subset, digits 0 and 1 by default) or `blobs`.
    dataset: str = "mnist2"

    #: Dataset root; the #DATA_DIR_ENV environment variable takes precedence.
    data_dir: str = "data"

    #: `train` or `test`.
    split: str = "train"

    #: Resize MNIST images to this square extent with bilinear interpolation (0 keeps the native 28x28).
    image_size: int = 32

    classes: t.Tuple[int, ...] = (0, 1)
    per_class_cap: int = 500

    blobs_k: int = 4
    blobs_dim: int = 2
    blobs_per_class: int = 250
    blobs_separation: float = 20.0

    def validate(self) -> None:
        if self.dataset not in ("mnist", "mnist2", "blobs"):
            raise InvalidArgumentError(f"unknown dataset {self.dataset!r}")
        if self.split not in ("train", "test"):
            raise InvalidArgumentError(f"split must be 'train' or 'test', got {self.split!r}")
        if self.image_size < 0 or self.per_class_cap < 1:
            raise InvalidArgumentError("image_size must be >= 0 and per_class_cap >= 1")


def data_root(cfg: DataConfig) -> Path:
    return Path(os.environ.get(DATA_DIR_ENV) or cfg.data_dir)


def mnist_paths(root: t.Union[str, Path], split: str) -> t.Tuple[Path, Path]:
    """The cache layout `<root>/mnist/{train,test}-{images,labels}`."""

    if split not in ("train", "test"):
        raise InvalidArgumentError(f"split must be 'train' or 'test', got {split!r}")
    base = Path(root) / "mnist"
    return base / f"{split}-images", base / f"{split}-labels"


def load_dataset(cfg: DataConfig, rng: np.random.Generator) -> LabeledDataset:
    """Load and prepare the dataset selected by *cfg*."""

    if cfg.dataset == "blobs":
        return synthetic_blobs(cfg.blobs_per_class, cfg.blobs_k, cfg.blobs_dim, cfg.blobs_separation, rng)
    if cfg.dataset not in ("mnist", "mnist2"):
        raise InvalidArgumentError(f"unknown dataset {cfg.dataset!r}")

    images_path, labels_path = mnist_paths(data_root(cfg), cfg.split)
    logger.info("loading %s and %s", images_path, labels_path)
    ds = load_idx(images_path, labels_path)
    if cfg.dataset == "mnist2":
        ds = subset_by_classes(ds, cfg.classes, cfg.per_class_cap, rng)
    if cfg.image_size:
        ds = resize_dataset(ds, cfg.image_size, cfg.image_size)
    return ds
