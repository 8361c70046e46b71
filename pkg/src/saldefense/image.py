"""Raster images, saliency maps, 8x8 windowing and lossless file I/O.

Images are plain numpy arrays:

* RGB image: ``uint8`` array of shape ``(H, W, 3)``
* saliency map: ``uint8`` array of shape ``(H, W)``
* fixation map: ``bool`` array of shape ``(H, W)``

All functions return new arrays and never modify their inputs.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image

WINDOW = 8

_SUFFIXES = {".png": "PNG", ".ppm": "PPM", ".pgm": "PPM", ".pnm": "PPM"}


class ImageFormatError(ValueError):
    """Raised for unreadable, unsupported or malformed image data."""


def as_image(arr) -> np.ndarray:
    """Validate ``arr`` as an RGB image and return it as ``uint8``."""
    arr = np.asarray(arr)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ImageFormatError(f"expected an (H, W, 3) image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ImageFormatError("image has a zero dimension")
    if arr.dtype != np.uint8:
        if np.any(arr < 0) or np.any(arr > 255):
            raise ImageFormatError("sample values outside [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def as_map(arr) -> np.ndarray:
    """Validate ``arr`` as an 8-bit grayscale map."""
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ImageFormatError(f"expected an (H, W) map, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ImageFormatError("map has a zero dimension")
    if arr.dtype != np.uint8:
        if np.any(arr < 0) or np.any(arr > 255):
            raise ImageFormatError("map values outside [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def _open(path) -> Image.Image:
    path = Path(path)
    if path.suffix.lower() not in _SUFFIXES:
        raise ImageFormatError(f"unsupported image format: {path.suffix!r}")
    try:
        pil = Image.open(path)
        pil.load()
    except FileNotFoundError:
        raise
    except Exception as exc:  # PIL raises a zoo of exception types
        raise ImageFormatError(f"cannot decode {path}: {exc}") from exc
    if pil.format not in ("PNG", "PPM"):
        raise ImageFormatError(f"{path} is {pil.format}, not PNG/PPM/PGM")
    if pil.width < 1 or pil.height < 1:
        raise ImageFormatError(f"{path} has a zero dimension")
    return pil


def _to_8bit(pil: Image.Image, mode: str) -> np.ndarray:
    if pil.mode in ("I", "I;16", "I;16B", "F"):
        raise ImageFormatError(f"only 8-bit images are supported, got mode {pil.mode}")
    if pil.mode in ("RGBA", "LA", "PA") or (pil.mode == "P" and "transparency" in pil.info):
        raise ImageFormatError("images with an alpha channel are not supported")
    return np.asarray(pil.convert(mode), dtype=np.uint8).copy()


def load_image(path) -> np.ndarray:
    """Read a PNG or binary PPM/PGM file as an ``(H, W, 3)`` uint8 array.

    Grayscale files are replicated across the three channels.
    """
    pil = _open(path)
    if pil.mode in ("L", "1"):
        gray = _to_8bit(pil, "L")
        return np.repeat(gray[:, :, None], 3, axis=2)
    return _to_8bit(pil, "RGB")


def load_map(path) -> np.ndarray:
    """Read a saliency map. RGB files must be gray (R == G == B)."""
    pil = _open(path)
    if pil.mode in ("L", "1"):
        return _to_8bit(pil, "L")
    rgb = _to_8bit(pil, "RGB")
    if not (np.array_equal(rgb[..., 0], rgb[..., 1]) and np.array_equal(rgb[..., 0], rgb[..., 2])):
        raise ImageFormatError(f"{path}: saliency map is not grayscale")
    return rgb[..., 0].copy()


def load_fixations(path) -> np.ndarray:
    """Read a fixation map; any nonzero pixel is a fixation."""
    return load_map(path) > 0


def _save(arr: np.ndarray, path, gray: bool) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix not in _SUFFIXES:
        raise ImageFormatError(f"unsupported image format: {path.suffix!r}")
    if suffix == ".pgm" and not gray:
        raise ImageFormatError("PGM holds grayscale maps only; use .ppm or .png")
    if suffix == ".ppm" and gray:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
        gray = False
    pil = Image.fromarray(np.ascontiguousarray(arr))
    # PIL writes binary P5/P6 for PPM; PNG is always lossless
    pil.save(path, format=_SUFFIXES[suffix])


def save_image(img, path) -> None:
    """Write an RGB image losslessly as PNG or PPM (chosen by suffix)."""
    _save(as_image(img), path, gray=False)


def save_map(sal, path) -> None:
    """Write a grayscale map as PNG or PGM."""
    _save(as_map(sal), path, gray=True)


def padded_shape(height: int, width: int) -> tuple[int, int]:
    return WINDOW * math.ceil(height / WINDOW), WINDOW * math.ceil(width / WINDOW)


def window_grid_shape(height: int, width: int) -> tuple[int, int]:
    return math.ceil(height / WINDOW), math.ceil(width / WINDOW)


def pad_to_windows(arr: np.ndarray) -> np.ndarray:
    """Edge-replicate ``arr`` so both spatial sizes are multiples of 8.

    Works for images ``(H, W, C)`` and maps ``(H, W)``; original content stays
    in the top-left corner.
    """
    arr = np.asarray(arr)
    h, w = arr.shape[:2]
    ph, pw = padded_shape(h, w)
    if (ph, pw) == (h, w):
        return arr.copy()
    pad = [(0, ph - h), (0, pw - w)] + [(0, 0)] * (arr.ndim - 2)
    return np.pad(arr, pad, mode="edge")


def crop_from_windows(arr: np.ndarray, orig_w: int, orig_h: int) -> np.ndarray:
    """Return the top-left ``orig_w`` x ``orig_h`` sub-image."""
    arr = np.asarray(arr)
    h, w = arr.shape[:2]
    if not (1 <= orig_w <= w and 1 <= orig_h <= h):
        raise ValueError(f"crop {orig_w}x{orig_h} does not fit in {w}x{h}")
    return arr[:orig_h, :orig_w].copy()


def to_windows(arr: np.ndarray) -> np.ndarray:
    """View a window-aligned array as ``(rows, cols, 8, 8, ...)`` blocks."""
    h, w = arr.shape[:2]
    if h % WINDOW or w % WINDOW:
        raise ValueError(f"array of size {h}x{w} is not window aligned")
    rows, cols = h // WINDOW, w // WINDOW
    blocks = arr.reshape((rows, WINDOW, cols, WINDOW) + arr.shape[2:])
    return np.swapaxes(blocks, 1, 2)


def from_windows(blocks: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_windows`."""
    rows, cols = blocks.shape[:2]
    arr = np.swapaxes(blocks, 1, 2)
    return arr.reshape((rows * WINDOW, cols * WINDOW) + blocks.shape[4:])


def window_average_saliency(sal) -> np.ndarray:
    """Per-window mean saliency ``Sal_ij`` as a ``(rows, cols)`` uint8 grid.

    The map is edge-padded to whole windows first; means are rounded half-up.
    """
    sal = as_map(sal)
    blocks = to_windows(pad_to_windows(sal)).astype(np.int64)
    # exact integer rounding: floor(sum / 64 + 1/2) == (2*sum + 64) // 128
    sums = blocks.sum(axis=(2, 3))
    means = (2 * sums + WINDOW * WINDOW) // (2 * WINDOW * WINDOW)
    return np.clip(means, 0, 255).astype(np.uint8)
