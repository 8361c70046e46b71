"""Input-cleaning defenses: bit-depth reduction, global JPEG, SHIELD and SAD.

SAD picks each window's compression quality from an ordered quality list,
indexed by the window's mean saliency::

    C(W_ij) = Q[ min(floor(Sal_ij * |Q| / 255), |Q| - 1) ]

so fully salient windows get the last (highest) quality and background
windows the first one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .codec import compress_image_map, compress_image_uniform
from .image import as_image, as_map, window_average_saliency, window_grid_shape

METHODS = ("bitdepth", "jpeg", "shield", "sad")

SHIELD_QUALITIES = (20, 40, 60, 80)
SAD_QUALITIES = (20, 50, 70, 70, 80, 90)


def _check_qualities(qualities: Sequence[int]) -> tuple[int, ...]:
    qualities = tuple(int(q) for q in qualities)
    if not qualities:
        raise ValueError("quality list must not be empty")
    bad = [q for q in qualities if not 1 <= q <= 100]
    if bad:
        raise ValueError(f"qualities outside [1, 100]: {bad}")
    return qualities


@dataclass(frozen=True)
class DefenseConfig:
    method: str
    bits: int = 3
    quality: int = 80
    shield_qualities: tuple[int, ...] = SHIELD_QUALITIES
    sad_qualities: tuple[int, ...] = SAD_QUALITIES
    rng_seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown defense {self.method!r}; expected one of {METHODS}")
        if not 1 <= self.bits <= 8:
            raise ValueError(f"bits must be in [1, 8], got {self.bits}")
        if not 1 <= self.quality <= 100:
            raise ValueError(f"quality must be in [1, 100], got {self.quality}")
        object.__setattr__(self, "shield_qualities", _check_qualities(self.shield_qualities))
        object.__setattr__(self, "sad_qualities", _check_qualities(self.sad_qualities))

    @property
    def label(self) -> str:
        """Row label in the style of the published result tables."""
        if self.method == "bitdepth":
            return "Bit-depth Reduction"
        if self.method == "jpeg":
            return f"JPEG{self.quality} Compression"
        if self.method == "shield":
            return "SHIELD"
        return "SAD (" + " ".join(str(q) for q in self.sad_qualities) + ")"


@dataclass
class CleanResult:
    image: np.ndarray
    quality_grid: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=np.int64))
    saliency_used: Optional[np.ndarray] = None


def bit_depth_reduce(img, bits: int) -> np.ndarray:
    """Uniformly requantize every channel to ``2**bits`` levels, keeping 0 and 255."""
    if not 1 <= bits <= 8:
        raise ValueError(f"bits must be in [1, 8], got {bits}")
    img = as_image(img)
    levels = (1 << bits) - 1
    # ties cannot occur (255 and 2**b - 1 are odd), so floor(x + .5) is plain rounding
    q = np.floor(img.astype(np.float64) * levels / 255.0 + 0.5)
    out = np.floor(q * 255.0 / levels + 0.5)
    return out.astype(np.uint8)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def window_uniforms(seed: int, rows: int, cols: int) -> np.ndarray:
    """Counter-based uniforms in [0, 1), one per window, keyed by (seed, row, col).

    The draw for a window does not depend on the grid size or iteration order.
    """
    with np.errstate(over="ignore"):
        key = _splitmix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))
        r = np.arange(rows, dtype=np.uint64)[:, None]
        c = np.arange(cols, dtype=np.uint64)[None, :]
        h = _splitmix64(key ^ _splitmix64((r << np.uint64(32)) | c))
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def shield_grid(shape: tuple[int, int], qualities: Sequence[int], seed: int) -> np.ndarray:
    qualities = np.asarray(_check_qualities(qualities), dtype=np.int64)
    u = window_uniforms(seed, *shape)
    idx = np.minimum((u * len(qualities)).astype(np.int64), len(qualities) - 1)
    return qualities[idx]


def shield_clean(img, qualities: Sequence[int] = SHIELD_QUALITIES, seed: int = 0) -> CleanResult:
    """Compress every window at a quality drawn uniformly from ``qualities``."""
    img = as_image(img)
    grid = shield_grid(window_grid_shape(*img.shape[:2]), qualities, seed)
    return CleanResult(image=compress_image_map(img, grid), quality_grid=grid)


def sad_quality_index(sal, q_len: int):
    """Index into the quality list for window saliency ``sal`` (scalar or array)."""
    if q_len < 1:
        raise ValueError("quality list must not be empty")
    sal = np.asarray(sal, dtype=np.int64)
    if np.any(sal < 0) or np.any(sal > 255):
        raise ValueError("window saliency must lie in [0, 255]")
    idx = np.minimum(sal * q_len // 255, q_len - 1)
    return int(idx) if idx.ndim == 0 else idx


def sad_grid(sal_map, qualities: Sequence[int]) -> np.ndarray:
    qualities = np.asarray(_check_qualities(qualities), dtype=np.int64)
    return qualities[sad_quality_index(window_average_saliency(sal_map), len(qualities))]


def sad_clean(img, sal_map, qualities: Sequence[int] = SAD_QUALITIES) -> CleanResult:
    """Saliency-indexed per-window compression (SAD)."""
    img = as_image(img)
    sal_map = as_map(sal_map)
    if sal_map.shape != img.shape[:2]:
        raise ValueError(
            f"saliency map {sal_map.shape[::-1]} does not match image {img.shape[1::-1]} (WxH)"
        )
    grid = sad_grid(sal_map, qualities)
    return CleanResult(
        image=compress_image_map(img, grid), quality_grid=grid, saliency_used=sal_map
    )


def clean(img, cfg: DefenseConfig, sal_map=None) -> CleanResult:
    """Apply the defense described by ``cfg``."""
    if cfg.method == "sad":
        if sal_map is None:
            raise ValueError("the sad defense needs a saliency map")
        return sad_clean(img, sal_map, cfg.sad_qualities)
    if sal_map is not None:
        raise ValueError(f"a saliency map is only used by sad, not {cfg.method}")
    if cfg.method == "bitdepth":
        return CleanResult(image=bit_depth_reduce(img, cfg.bits))
    if cfg.method == "jpeg":
        return CleanResult(image=compress_image_uniform(img, cfg.quality))
    return shield_clean(img, cfg.shield_qualities, cfg.rng_seed)
