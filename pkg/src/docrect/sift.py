"""Dense SIFT descriptors: one 128-d vector per pixel.

Gradient magnitudes are split between the two nearest of 8 orientation
bins, aggregated over 4x4 spatial cells of ``cell_size`` pixels around
each location, L2-normalized, clamped at 0.2, and renormalized. A pixel
with no gradient support anywhere in its window falls back to the
all-equal unit vector, so constant images produce identical descriptors
everywhere.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError
from .imaging import luma

NUM_BINS = 8
GRID_CELLS = 4
DESCRIPTOR_DIM = GRID_CELLS * GRID_CELLS * NUM_BINS
CLAMP = 0.2


def _cell_offsets(cell_size: int) -> list[int]:
    # cell centers tiling [-2c, 2c) around the pixel, c odd
    half = (cell_size - 1) // 2
    return [-2 * cell_size + k * cell_size + half for k in range(GRID_CELLS)]


def dense_sift(img: np.ndarray, cell_size: int = 3) -> np.ndarray:
    """Per-pixel descriptors of shape (H, W, 128), unit L2 norm."""
    if cell_size < 1 or cell_size % 2 == 0:
        raise ParameterError(f"cell_size must be odd and positive, got {cell_size}")
    gray = luma(img).astype(np.float32)
    h, w = gray.shape
    support = GRID_CELLS * cell_size
    if h < support or w < support:
        raise ParameterError(
            f"image {h}x{w} smaller than the {support}x{support} descriptor window"
        )

    padded = np.pad(gray, 1, mode="edge")
    gx = padded[1:-1, 2:] - padded[1:-1, :-2]
    gy = padded[2:, 1:-1] - padded[:-2, 1:-1]
    mag = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx), 2.0 * np.pi)

    # bilinear binning over orientation
    tb = theta * (NUM_BINS / (2.0 * np.pi))
    b0 = np.floor(tb).astype(np.int8) % NUM_BINS
    frac = (tb - np.floor(tb)).astype(np.float32)
    lo = mag * (1.0 - frac)
    hi = mag * frac
    planes = np.zeros((NUM_BINS, h, w), np.float32)
    for b in range(NUM_BINS):
        planes[b] += np.where(b0 == b, lo, 0.0)
        planes[b] += np.where(b0 == (b - 1) % NUM_BINS, hi, 0.0)

    # per-cell aggregation: box filter of the cell size, then gather the
    # 4x4 cell centers around each pixel with edge replication
    half = (cell_size - 1) // 2
    boxed = np.zeros_like(planes)
    pp = np.pad(planes, ((0, 0), (half, half), (half, half)), mode="edge")
    for dy in range(cell_size):
        for dx in range(cell_size):
            boxed += pp[:, dy : dy + h, dx : dx + w]

    offsets = _cell_offsets(cell_size)
    margin = 2 * cell_size
    padded_boxed = np.pad(boxed, ((0, 0), (margin, margin), (margin, margin)), mode="edge")
    desc = np.empty((h, w, GRID_CELLS, GRID_CELLS, NUM_BINS), np.float32)
    for ci, oy in enumerate(offsets):
        for cj, ox in enumerate(offsets):
            block = padded_boxed[:, margin + oy : margin + oy + h, margin + ox : margin + ox + w]
            desc[:, :, ci, cj, :] = block.transpose(1, 2, 0)
    desc = desc.reshape(h, w, DESCRIPTOR_DIM)

    norms = np.sqrt(np.einsum("ijk,ijk->ij", desc, desc))[:, :, None]
    flat = norms[:, :, 0] < 1e-12
    desc /= np.where(norms < 1e-12, 1.0, norms)
    np.minimum(desc, CLAMP, out=desc)
    norms2 = np.sqrt(np.einsum("ijk,ijk->ij", desc, desc))[:, :, None]
    desc /= np.where(norms2 < 1e-12, 1.0, norms2)
    if flat.any():
        desc[flat] = np.float32(1.0 / np.sqrt(DESCRIPTOR_DIM))
    return np.ascontiguousarray(desc, dtype=np.float32)
