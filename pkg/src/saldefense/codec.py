"""JPEG-style transform coding of independent 8x8 windows.

Each window goes through RGB -> YCbCr (BT.601 full range), a level shift, an
orthonormal 2-D DCT-II, quantization against quality-scaled tables, and the
inverse chain. There is no entropy coding, no chroma subsampling and no file
container, so every window is coded independently of its neighbours.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .image import (
    WINDOW,
    as_image,
    crop_from_windows,
    from_windows,
    pad_to_windows,
    to_windows,
    window_grid_shape,
)

# Example tables from Annex K of the JPEG standard.
BASE_LUMA = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.int64,
)
BASE_CHROMA = np.array(
    [
        [17, 18, 24, 47, 99, 99, 99, 99],
        [18, 21, 26, 66, 99, 99, 99, 99],
        [24, 26, 56, 99, 99, 99, 99, 99],
        [47, 66, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
    ],
    dtype=np.int64,
)


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    """BT.601 full-range RGB -> YCbCr on float arrays ``(..., 3)``."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
    return np.stack([y, cb, cr], axis=-1)


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = ycc[..., 0], ycc[..., 1] - 128.0, ycc[..., 2] - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b], axis=-1)


@dataclass(frozen=True)
class QuantTables:
    luma: np.ndarray
    chroma: np.ndarray
    quality: int


def _check_quality(quality) -> int:
    if isinstance(quality, bool) or int(quality) != quality or not 1 <= quality <= 100:
        raise ValueError(f"quality must be an integer in [1, 100], got {quality!r}")
    return int(quality)


def quality_scale(quality: int) -> int:
    # integer division, as in the IJG reference encoder
    return 5000 // quality if quality < 50 else 200 - 2 * quality


def _scale(base: np.ndarray, quality: int) -> np.ndarray:
    table = (quality_scale(quality) * base + 50) // 100
    return np.clip(table, 1, 255).astype(np.int64)


@lru_cache(maxsize=None)
def build_quant_tables(quality: int) -> QuantTables:
    """Quality-scaled luma/chroma tables (the usual IJG 5000/q, 200-2q rule)."""
    quality = _check_quality(quality)
    luma = _scale(BASE_LUMA, quality)
    chroma = _scale(BASE_CHROMA, quality)
    luma.setflags(write=False)
    chroma.setflags(write=False)
    return QuantTables(luma=luma, chroma=chroma, quality=quality)


@lru_cache(maxsize=1)
def dct_matrix() -> np.ndarray:
    """Orthonormal 8-point DCT-II matrix ``D`` (so ``D @ D.T == I``)."""
    k = np.arange(WINDOW)[:, None]
    n = np.arange(WINDOW)[None, :]
    d = np.sqrt(2.0 / WINDOW) * np.cos(np.pi * (2 * n + 1) * k / (2 * WINDOW))
    d[0] /= np.sqrt(2.0)
    d.setflags(write=False)
    return d


def dct2(block: np.ndarray) -> np.ndarray:
    """2-D DCT over the last two axes of ``(..., 8, 8)`` real arrays."""
    d = dct_matrix()
    return d @ block @ d.T


def idct2(coef: np.ndarray) -> np.ndarray:
    d = dct_matrix()
    return d.T @ coef @ d


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _tables_for(qualities: np.ndarray) -> np.ndarray:
    """Stack ``(..., 3, 8, 8)`` quantizers (Y, Cb, Cr) for a quality array."""
    uniq, inverse = np.unique(qualities, return_inverse=True)
    stacks = []
    for q in uniq:
        t = build_quant_tables(int(q))
        stacks.append(np.stack([t.luma, t.chroma, t.chroma]))
    return np.asarray(stacks, dtype=np.float64)[inverse.reshape(qualities.shape)]


def code_blocks(blocks: np.ndarray, qualities) -> np.ndarray:
    """Code a batch of ``(..., 8, 8, 3)`` uint8 blocks at per-block qualities.

    ``qualities`` broadcasts against the batch shape ``blocks.shape[:-3]``.
    """
    blocks = np.asarray(blocks)
    batch = blocks.shape[:-3]
    qualities = np.broadcast_to(np.asarray(qualities, dtype=np.int64), batch)
    for q in np.unique(qualities):
        _check_quality(int(q))

    # element-wise colour maths keeps every block's result independent of
    # the batch it is coded in (BLAS kernels may vary with array size)
    ycc = rgb_to_ycbcr(blocks.astype(np.float64)) - 128.0

    planes = np.moveaxis(ycc, -1, -3)  # (..., 3, 8, 8)
    tables = _tables_for(qualities)
    coef = dct2(planes)
    coef = _round_half_away(coef / tables) * tables
    planes = idct2(coef)

    rgb = ycbcr_to_rgb(np.moveaxis(planes, -3, -1) + 128.0)
    return np.clip(np.floor(rgb + 0.5), 0, 255).astype(np.uint8)


def compress_window(window, quality: int) -> np.ndarray:
    """Code a single ``(8, 8, 3)`` window at ``quality``."""
    window = np.asarray(window)
    if window.shape != (WINDOW, WINDOW, 3):
        raise ValueError(f"window must be 8x8x3, got {window.shape}")
    return code_blocks(window[None], [_check_quality(quality)])[0]


def compress_image_map(img, quality_grid) -> np.ndarray:
    """Code window ``(i, j)`` of ``img`` at ``quality_grid[i][j]``.

    The image is edge-padded to whole windows and cropped back afterwards.
    """
    img = as_image(img)
    h, w = img.shape[:2]
    grid = np.asarray(quality_grid)
    if grid.shape != window_grid_shape(h, w):
        raise ValueError(
            f"quality grid {grid.shape} does not match window grid {window_grid_shape(h, w)}"
        )
    blocks = to_windows(pad_to_windows(img))
    coded = code_blocks(blocks, grid)
    return crop_from_windows(from_windows(coded), w, h)


def compress_image_uniform(img, quality: int) -> np.ndarray:
    """Global JPEG-style compression at a single quality."""
    img = as_image(img)
    quality = _check_quality(quality)
    grid = np.full(window_grid_shape(*img.shape[:2]), quality, dtype=np.int64)
    return compress_image_map(img, grid)
