"""
Writers for the artifacts of a run: binary PGM images, comma separated tables and flat `key = value` files.
"""

import typing as t
from pathlib import Path

import numpy as np

from ._analysis import InterpolationGrid, PcaProfile
from ._errors import ShapeError
from ._train import LossBreakdown

#: Gray value of the separator lines between tiles.
SEPARATOR_GRAY = 128

METRICS_HEADER = ("epoch", "recon", "adversarial", "mix_consistency", "total", "discriminator")

PathLike = t.Union[str, Path]


def to_gray(images: np.ndarray) -> np.ndarray:
    """Map values in `[0, 1]` linearly to 8-bit gray, clipping anything outside."""

    return np.rint(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8)


def tile_grid(images: np.ndarray, separator: int = SEPARATOR_GRAY) -> np.ndarray:
    """
    Tile a `[rows, cols, C, H, W]` (or `[rows, cols, H, W]`) stack of single-channel images row-major into
    one 8-bit image, with 1 pixel separator lines between tiles.
    """

    if images.ndim == 5:
        if images.shape[2] != 1:
            raise ShapeError(f"only single-channel images can be tiled, got {images.shape[2]} channels")
        images = images[:, :, 0]
    if images.ndim != 4:
        raise ShapeError(f"expected a [rows, cols, H, W] image stack, got shape {images.shape}")
    rows, cols, height, width = images.shape
    canvas = np.full((rows * (height + 1) - 1, cols * (width + 1) - 1), separator, dtype=np.uint8)
    gray = to_gray(images)
    for r in range(rows):
        for c in range(cols):
            top, left = r * (height + 1), c * (width + 1)
            canvas[top : top + height, left : left + width] = gray[r, c]
    return canvas


def write_pgm(path: PathLike, image: np.ndarray) -> None:
    """Write an 8-bit `[H, W]` image as binary PGM (`P5`, maxval 255)."""

    if image.ndim != 2 or image.dtype != np.uint8:
        raise ShapeError(f"PGM needs an [H, W] uint8 image, got {image.dtype} {image.shape}")
    height, width = image.shape
    Path(path).write_bytes(f"P5\n{width} {height}\n255\n".encode("ascii") + image.tobytes())


def write_grid_pgm(path: PathLike, grid: InterpolationGrid) -> None:
    write_pgm(path, tile_grid(grid.images))


def _write_csv(path: PathLike, header: t.Sequence[str], columns: t.Sequence[np.ndarray], fmt: t.Sequence[str]) -> None:
    table = np.column_stack([np.asarray(column, dtype=np.float64) for column in columns])
    np.savetxt(path, table, fmt=list(fmt), delimiter=",", header=",".join(header), comments="", newline="\n")


def write_metrics_csv(path: PathLike, history: t.Sequence[LossBreakdown]) -> None:
    """One row per epoch, numbered from 1."""

    rows = np.array([[epoch + 1] + losses.as_row() for epoch, losses in enumerate(history)], dtype=np.float64)
    rows = rows.reshape(len(history), len(METRICS_HEADER))
    _write_csv(path, METRICS_HEADER, rows.T, ["%d"] + ["%.9g"] * (len(METRICS_HEADER) - 1))


def write_profile_csv(path: PathLike, profile: PcaProfile) -> None:
    _write_csv(
        path,
        ("component_index", "mean_share", "std_share"),
        (np.arange(profile.cutoff), profile.mean_share, profile.std_share),
        ("%d", "%.9g", "%.9g"),
    )


def write_projection_csv(path: PathLike, coords: np.ndarray, labels: np.ndarray) -> None:
    _write_csv(path, ("x", "y", "label"), (coords[:, 0], coords[:, 1], labels), ("%.9g", "%.9g", "%d"))


def format_key_values(items: t.Mapping[str, t.Any]) -> str:
    return "".join(f"{key} = {value}\n" for key, value in items.items())


def write_key_values(path: PathLike, items: t.Mapping[str, t.Any]) -> None:
    Path(path).write_bytes(format_key_values(items).encode("utf-8"))
