"""Block-wise ridge orientation estimation and foreground segmentation.

Orientation is estimated per 16x16 block from averaged squared gradients.
Because ridge flow is a direction without polarity, all averaging happens
in doubled-angle space; estimates live in [0, pi). A single 3x3 Gaussian
pass smooths the doubled-angle vector field before angles are read off.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy import ndimage

from .errors import DimensionError

BLOCK_SIZE = 16

# minimum fraction of pixels a partial border block needs to count as data
MIN_BLOCK_FILL = 0.25

# [1 2 1] x [1 2 1] / 16, the separable 3x3 Gaussian used for smoothing
_SMOOTH_KERNEL = np.outer([1.0, 2.0, 1.0], [1.0, 2.0, 1.0]) / 16.0


@dataclasses.dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit grayscale raster with a nominal capture resolution in ppi."""

    pixels: np.ndarray
    resolution: int = 500

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels)
        if px.dtype != np.uint8:
            raise DimensionError(f"pixels must be uint8, got {px.dtype}")
        if px.ndim != 2 or px.shape[0] == 0 or px.shape[1] == 0:
            raise DimensionError(f"pixels must be a nonempty 2-D array, got shape {px.shape}")
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclasses.dataclass(frozen=True, eq=False)
class OrientationField:
    """Per-block ridge angles in [0, pi) with a coherence weight in [0, 1].

    Grid shape is ceil(height/16) x ceil(width/16) for the source image;
    the source dimensions are kept for coordinate lookups.
    """

    angles: np.ndarray
    coherence: np.ndarray
    width: int
    height: int
    block_size: int = BLOCK_SIZE

    def __post_init__(self):
        if self.angles.shape != self.coherence.shape:
            raise DimensionError("angle and coherence grids must share a shape")
        expect = (_grid_len(self.height), _grid_len(self.width))
        if self.angles.shape != expect:
            raise DimensionError(
                f"grid shape {self.angles.shape} does not cover a "
                f"{self.width}x{self.height} image (want {expect})")

    @property
    def rows(self) -> int:
        return self.angles.shape[0]

    @property
    def cols(self) -> int:
        return self.angles.shape[1]


@dataclasses.dataclass(frozen=True, eq=False)
class RoiMask:
    """Boolean foreground map on the same block grid as the field."""

    flags: np.ndarray

    def __post_init__(self):
        if self.flags.dtype != bool or self.flags.ndim != 2:
            raise DimensionError("ROI flags must be a 2-D boolean array")

    @property
    def rows(self) -> int:
        return self.flags.shape[0]

    @property
    def cols(self) -> int:
        return self.flags.shape[1]


def _grid_len(extent: int, block: int = BLOCK_SIZE) -> int:
    return -(-extent // block)


def _block_reduce(values: np.ndarray) -> np.ndarray:
    """Sum values over the 16x16 block grid; border blocks may be partial."""
    rows = np.arange(0, values.shape[0], BLOCK_SIZE)
    cols = np.arange(0, values.shape[1], BLOCK_SIZE)
    return np.add.reduceat(np.add.reduceat(values, rows, axis=0), cols, axis=1)


def _block_pixel_counts(height: int, width: int) -> np.ndarray:
    """Pixel count of each block; interior blocks hold 256."""
    row_sizes = np.minimum(np.arange(0, height, BLOCK_SIZE) + BLOCK_SIZE, height) \
        - np.arange(0, height, BLOCK_SIZE)
    col_sizes = np.minimum(np.arange(0, width, BLOCK_SIZE) + BLOCK_SIZE, width) \
        - np.arange(0, width, BLOCK_SIZE)
    return np.outer(row_sizes, col_sizes)


def _gradients(image: GrayImage) -> tuple[np.ndarray, np.ndarray]:
    f = image.pixels.astype(np.float64)
    gy, gx = np.gradient(f)
    return gx, gy


def estimate_orientation_field(image: GrayImage) -> OrientationField:
    """Estimate the block-wise ridge orientation field of an image.

    Images smaller than one block in either dimension are rejected. Partial
    border blocks with under 25% of a full block's pixels get zero coherence
    so downstream consumers treat them as background.
    """
    if image.width < BLOCK_SIZE or image.height < BLOCK_SIZE:
        raise DimensionError(
            f"image {image.width}x{image.height} smaller than one "
            f"{BLOCK_SIZE}x{BLOCK_SIZE} block")
    gx, gy = _gradients(image)
    bxx = _block_reduce(gx * gx)
    byy = _block_reduce(gy * gy)
    bxy = _block_reduce(gx * gy)

    # doubled-angle vector per block; smoothing happens in this space so
    # opposite gradient polarities reinforce instead of cancelling
    vx = bxx - byy
    vy = 2.0 * bxy
    trace = bxx + byy
    vx = ndimage.correlate(vx, _SMOOTH_KERNEL, mode="nearest")
    vy = ndimage.correlate(vy, _SMOOTH_KERNEL, mode="nearest")
    trace = ndimage.correlate(trace, _SMOOTH_KERNEL, mode="nearest")

    angles = np.mod(0.5 * np.arctan2(vy, vx) + np.pi / 2.0, np.pi)
    coherence = np.sqrt(vx * vx + vy * vy) / (trace + 1e-12)
    np.clip(coherence, 0.0, 1.0, out=coherence)

    counts = _block_pixel_counts(image.height, image.width)
    coherence[counts < MIN_BLOCK_FILL * BLOCK_SIZE * BLOCK_SIZE] = 0.0
    return OrientationField(angles=angles, coherence=coherence,
                            width=image.width, height=image.height)


def default_mag_threshold(image: GrayImage) -> float:
    """Segmentation default: 10% of the largest block-mean gradient magnitude."""
    gx, gy = _gradients(image)
    mag = np.hypot(gx, gy)
    means = _block_reduce(mag) / _block_pixel_counts(image.height, image.width)
    return 0.1 * float(means.max())


def segment_roi(image: GrayImage, field: OrientationField,
                mag_threshold: float | None = None) -> RoiMask:
    """Split the block grid into ridge foreground and background.

    A block is foreground when its mean gradient magnitude reaches
    mag_threshold (default: 10% of the image's largest block mean). A 3x3
    morphological opening then closing removes speckle; partial border
    blocks below the fill minimum are forced to background.
    """
    if (field.width, field.height) != (image.width, image.height):
        raise DimensionError(
            f"field covers {field.width}x{field.height}, "
            f"image is {image.width}x{image.height}")
    if mag_threshold is None:
        mag_threshold = default_mag_threshold(image)
    gx, gy = _gradients(image)
    mag = np.hypot(gx, gy)
    counts = _block_pixel_counts(image.height, image.width)
    means = _block_reduce(mag) / counts
    fg = means >= mag_threshold
    fg &= counts >= MIN_BLOCK_FILL * BLOCK_SIZE * BLOCK_SIZE

    # pad with the edge value so opening cannot eat a fully-covered border
    structure = np.ones((3, 3), dtype=bool)
    padded = np.pad(fg, 1, mode="edge")
    padded = ndimage.binary_opening(padded, structure=structure)
    padded = ndimage.binary_closing(padded, structure=structure)
    return RoiMask(flags=padded[1:-1, 1:-1])


def orientation_at(field: OrientationField, x: float, y: float) -> float:
    """Ridge angle at pixel (x, y), read from the nearest block center.

    Ties on the center distance go to the smaller row-major block index.
    """
    if not (0 <= x < field.width and 0 <= y < field.height):
        raise DimensionError(
            f"({x}, {y}) outside {field.width}x{field.height} image")
    half = field.block_size / 2.0
    cx = np.arange(field.cols) * field.block_size + half
    cy = np.arange(field.rows) * field.block_size + half
    d2 = (cy[:, None] - y) ** 2 + (cx[None, :] - x) ** 2
    idx = int(np.argmin(d2))  # first occurrence = smallest row-major index
    return float(field.angles.flat[idx])


def write_field_csv(path, field: OrientationField, roi: RoiMask | None = None) -> None:
    """Dump a field (and optional ROI) as CSV rows of block-level values."""
    if roi is not None and roi.flags.shape != field.angles.shape:
        raise DimensionError("ROI grid does not match the field grid")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("row,col,angle,coherence,roi\n")
        for r in range(field.rows):
            for c in range(field.cols):
                flag = 1 if roi is not None and roi.flags[r, c] else 0
                fh.write(f"{r},{c},{field.angles[r, c]:.8f},"
                         f"{field.coherence[r, c]:.8f},{flag}\n")
