"""
Bit-exact frame resizing and video-to-image grid aggregation.
"""
from dataclasses import dataclass, field

import numpy as np

from core.exceptions import InvalidInputError, ShapeMismatchError


@dataclass(frozen=True)
class GridLayout:
    n: int
    m: int
    cell_h: int
    cell_w: int

    def __post_init__(self):
        if min(self.n, self.m, self.cell_h, self.cell_w) < 1:
            raise InvalidInputError(f"grid layout dimensions must be positive: {self}")

    @property
    def canvas_h(self):
        return self.n * self.cell_h

    @property
    def canvas_w(self):
        return self.m * self.cell_w

    @property
    def capacity(self):
        return self.n * self.m

    def cell_slices(self, k):
        """Row and column slices of grid cell k (row-major)."""
        row, col = divmod(k, self.m)
        return (
            slice(row * self.cell_h, (row + 1) * self.cell_h),
            slice(col * self.cell_w, (col + 1) * self.cell_w),
        )


# 16 frames of 56x56 into a 224x224 canvas.
FULL_RES_LAYOUT = GridLayout(n=4, m=4, cell_h=56, cell_w=56)
# The same grid shrunk to 8x8 cells for CPU-scale training.
DESK_LAYOUT = GridLayout(n=4, m=4, cell_h=8, cell_w=8)


@dataclass
class AggregatedImage:
    pixels: np.ndarray
    source_video_id: str = ''
    source_indices: list = field(default_factory=list)
    label: int | None = None


def _bilinear_taps(src_size, dst_size):
    # half-pixel centers, clamped to the source edge
    pos = (np.arange(dst_size, dtype=np.float64) + 0.5) * (src_size / dst_size) - 0.5
    pos = np.clip(pos, 0.0, src_size - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, src_size - 1)
    return lo, hi, pos - lo


def resize_frame(frame, cell_h, cell_w):
    """
    Resize an RGB raster to cell_h x cell_w with bilinear interpolation.

    Sampling uses half-pixel centers with edge clamping; channel values are
    rounded half-up to 8 bits.
    """
    frame = np.asarray(frame)
    if cell_h < 1 or cell_w < 1:
        raise InvalidInputError(f"target size must be positive, got {cell_h}x{cell_w}")
    if frame.ndim != 3 or frame.shape[0] == 0 or frame.shape[1] == 0:
        raise ShapeMismatchError(f"expected a non-empty HxWxC raster, got shape {frame.shape}")

    src = frame.astype(np.float64)
    y0, y1, wy = _bilinear_taps(frame.shape[0], cell_h)
    x0, x1, wx = _bilinear_taps(frame.shape[1], cell_w)

    wy = wy[:, None, None]
    rows = src[y0] * (1.0 - wy) + src[y1] * wy
    wx = wx[None, :, None]
    out = rows[:, x0] * (1.0 - wx) + rows[:, x1] * wx
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def aggregate_to_grid(frames, layout, source_video_id='', source_indices=None, label=None):
    """
    Place frames left to right, top to bottom on a zero canvas.

    Cells past len(frames) stay black.
    """
    if len(frames) > layout.capacity:
        raise InvalidInputError(
            f"{len(frames)} frames do not fit a {layout.n}x{layout.m} grid"
        )
    canvas = np.zeros((layout.canvas_h, layout.canvas_w, 3), dtype=np.uint8)
    for k, frame in enumerate(frames):
        if frame.shape != (layout.cell_h, layout.cell_w, 3):
            raise ShapeMismatchError(
                f"frame {k} has shape {frame.shape}, cell expects "
                f"{(layout.cell_h, layout.cell_w, 3)}"
            )
        rows, cols = layout.cell_slices(k)
        canvas[rows, cols] = frame
    indices = list(source_indices) if source_indices is not None else list(range(len(frames)))
    return AggregatedImage(
        pixels=canvas,
        source_video_id=source_video_id,
        source_indices=indices,
        label=label,
    )


def extract_cell(pixels, layout, k):
    """Return grid cell k of an aggregated canvas."""
    if not 0 <= k < layout.capacity:
        raise InvalidInputError(f"cell {k} outside a {layout.n}x{layout.m} grid")
    rows, cols = layout.cell_slices(k)
    return pixels[rows, cols]


def make_montage(view_a, view_b, gap=4):
    """Two aggregated views side by side, separated by a black strip."""
    a = np.asarray(view_a)
    b = np.asarray(view_b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"views differ in shape: {a.shape} vs {b.shape}")
    if gap < 0:
        raise InvalidInputError(f"montage gap must be non-negative, got {gap}")
    strip = np.zeros((a.shape[0], gap, a.shape[2]), dtype=a.dtype)
    return np.concatenate([a, strip, b], axis=1)
