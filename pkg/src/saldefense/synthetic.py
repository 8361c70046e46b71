"""Seeded synthetic shape images (square / circle / triangle) with object masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CLASSES = ("square", "circle", "triangle")


@dataclass
class ShapeSet:
    images: np.ndarray  # (N, S, S, 3) uint8
    labels: np.ndarray  # (N,) int64
    masks: np.ndarray  # (N, S, S) bool, True on the object

    def __len__(self) -> int:
        return len(self.labels)

    def saliency_maps(self) -> np.ndarray:
        """Object masks as 0/255 uint8 maps."""
        return np.where(self.masks, 255, 0).astype(np.uint8)


def _shape_mask(kind: int, size: int, rng: np.random.Generator, jitter: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    extent = rng.uniform(0.50, 0.65) * size
    # objects stay near the centre, like a photographed subject
    cy = size / 2 + rng.uniform(-1, 1) * size * jitter
    cx = size / 2 + rng.uniform(-1, 1) * size * jitter
    if kind == 0:
        half = extent / 2
        return (np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= half)
    if kind == 1:
        r = extent / 2
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    # upright isosceles triangle with apex at the top
    top, bottom = cy - extent / 2, cy + extent / 2
    t = (yy - top) / (bottom - top)
    return (t >= 0) & (t <= 1) & (np.abs(xx - cx) <= t * extent / 2)


def _colors(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    while True:
        bg = rng.uniform(0, 255, 3)
        fg = rng.uniform(0, 255, 3)
        if np.abs(fg - bg).sum() >= 180:
            return bg, fg


def make_shapes(n: int, seed: int = 0, size: int = 32, jitter: float = 0.08) -> ShapeSet:
    """Generate ``n`` labelled images with balanced classes."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % len(CLASSES))
    images = np.empty((n, size, size, 3), dtype=np.uint8)
    masks = np.empty((n, size, size), dtype=bool)
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    for i, kind in enumerate(labels):
        bg, fg = _colors(rng)
        # soft background gradient so the scene is not perfectly flat
        slope = rng.uniform(-20, 20, 2)
        back = bg[None, None, :] + (slope[0] * yy + slope[1] * xx)[..., None]
        mask = _shape_mask(int(kind), size, rng, jitter)
        img = np.where(mask[..., None], fg[None, None, :], back)
        images[i] = np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)
        masks[i] = mask
    return ShapeSet(images=images, labels=labels.astype(np.int64), masks=masks)
