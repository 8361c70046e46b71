"""Saliency map sources.

Deep saliency models are not run here. Their outputs are ingested from files
(``kind="file"``), and a classical spectral-residual estimator is available
for self-contained runs (``kind="spectral_residual"``).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from .image import as_image, as_map, load_map

KINDS = ("file", "spectral_residual")

_LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class SaliencySource:
    kind: str
    path_template: Optional[str] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown saliency source {self.kind!r}; expected one of {KINDS}")
        if self.kind == "file" and not self.path_template:
            raise ValueError("file saliency source needs a path template")
        if self.kind == "spectral_residual" and self.path_template:
            raise ValueError("spectral_residual source takes no path template")

    def resolve(self, image_id: str, **fields) -> Path:
        """Fill ``{id}`` (and any extra fields such as ``{condition}``)."""
        return Path(self.path_template.format(id=image_id, **fields))


def _next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def luma(img) -> np.ndarray:
    img = as_image(img).astype(np.float64)
    return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]


def normalize_to_8bit(x: np.ndarray) -> np.ndarray:
    """Linearly stretch to [0, 255]; flat inputs map to all zeros."""
    lo, hi = float(x.min()), float(x.max())
    if not hi > lo:
        return np.zeros(x.shape, dtype=np.uint8)
    return np.floor((x - lo) * (255.0 / (hi - lo)) + 0.5).clip(0, 255).astype(np.uint8)


def spectral_residual_float(img, sigma: float = 2.5) -> np.ndarray:
    """Real-valued spectral-residual saliency before 8-bit normalization."""
    gray = luma(img)
    h, w = gray.shape
    if gray.max() == gray.min():
        return np.zeros((h, w))
    ph, pw = _next_pow2(h), _next_pow2(w)
    # padding with the mean rather than zeros avoids a synthetic step edge
    padded = np.full((ph, pw), gray.mean())
    padded[:h, :w] = gray

    spectrum = np.fft.fft2(padded)
    log_amp = np.log(np.maximum(np.abs(spectrum), _LOG_FLOOR))
    phase = np.angle(spectrum)
    residual = log_amp - ndimage.uniform_filter(log_amp, size=3, mode="wrap")
    sal = np.abs(np.fft.ifft2(np.exp(residual + 1j * phase))) ** 2
    sal = ndimage.gaussian_filter(sal, sigma=sigma, mode="reflect")
    return sal[:h, :w]


def spectral_residual(img, sigma: float = 2.5) -> np.ndarray:
    """Spectral-residual saliency map as an ``(H, W)`` uint8 array."""
    return normalize_to_8bit(spectral_residual_float(img, sigma))


def get_saliency(img, source: SaliencySource, image_id: str = "", **fields) -> np.ndarray:
    """Produce the saliency map of ``img`` from ``source``.

    File maps must have exactly the image's dimensions; no resampling is done.
    """
    img = as_image(img)
    if source.kind == "spectral_residual":
        return spectral_residual(img)
    path = source.resolve(image_id, **fields)
    if not path.exists():
        raise FileNotFoundError(f"saliency map not found: {path}")
    sal = load_map(path)
    if sal.shape != img.shape[:2]:
        raise ValueError(
            f"saliency map {path} is {sal.shape[1]}x{sal.shape[0]}, "
            f"image is {img.shape[1]}x{img.shape[0]}"
        )
    return sal


def binarize_map(sal, threshold: int) -> np.ndarray:
    """Pixels strictly above ``threshold`` become 255, the rest 0."""
    if not 0 <= threshold <= 255:
        raise ValueError(f"threshold must be in [0, 255], got {threshold}")
    sal = as_map(sal)
    return np.where(sal > threshold, 255, 0).astype(np.uint8)
