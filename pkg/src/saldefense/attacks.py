"""FGSM and DeepFool against a small numpy convolutional classifier.

Images are handled in normalized ``[0, 1]`` float space of shape ``(S, S, 3)``.
The classifier is conv(3->8, 3x3, same padding) -> ReLU -> 2x2 mean pool ->
fully connected logits, with hand-written backpropagation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .image import as_image

CHANNELS = 8
KERNEL = 3

MAGIC = b"TCLF"
VERSION = 1
_HEADER = struct.Struct("<4sIII")  # magic, version, class_count, input_size


class AttackError(RuntimeError):
    pass


def to_unit(img) -> np.ndarray:
    """uint8 image -> float image in [0, 1]."""
    return as_image(img).astype(np.float64) / 255.0


def to_uint8(x) -> np.ndarray:
    """Float image in [0, 1] -> uint8, rounding half up."""
    return np.floor(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(
        np.uint8
    )


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels) -> np.ndarray:
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(labels)
    return -_log_softmax(logits)[np.arange(len(labels)), labels]


@dataclass
class TinyClassifier:
    conv_w: np.ndarray  # (CHANNELS, 3, KERNEL, KERNEL): out, in, ky, kx
    conv_b: np.ndarray  # (CHANNELS,)
    fc_w: np.ndarray  # (classes, features)
    fc_b: np.ndarray  # (classes,)
    input_size: int = 32

    def __post_init__(self):
        if self.input_size < 2 or self.input_size % 2:
            raise ValueError("input_size must be an even number >= 2")
        feats = CHANNELS * (self.input_size // 2) ** 2
        if self.conv_w.shape != (CHANNELS, 3, KERNEL, KERNEL) or self.conv_b.shape != (CHANNELS,):
            raise ValueError("bad convolution parameter shapes")
        if self.fc_w.ndim != 2 or self.fc_w.shape[1] != feats:
            raise ValueError(f"fc weights must have {feats} columns")
        if self.fc_w.shape[0] < 2 or self.fc_b.shape != (self.fc_w.shape[0],):
            raise ValueError("need at least two classes with matching biases")

    @property
    def class_count(self) -> int:
        return self.fc_w.shape[0]

    @classmethod
    def initialize(cls, class_count: int = 3, input_size: int = 32, seed: int = 0):
        """He-normal weights, zero biases."""
        rng = np.random.default_rng(seed)
        feats = CHANNELS * (input_size // 2) ** 2
        return cls(
            conv_w=rng.normal(0, np.sqrt(2 / (3 * KERNEL * KERNEL)), (CHANNELS, 3, KERNEL, KERNEL)),
            conv_b=np.zeros(CHANNELS),
            fc_w=rng.normal(0, np.sqrt(1 / feats), (class_count, feats)),
            fc_b=np.zeros(class_count),
            input_size=input_size,
        )

    @classmethod
    def zeros(cls, class_count: int = 3, input_size: int = 32):
        feats = CHANNELS * (input_size // 2) ** 2
        return cls(
            np.zeros((CHANNELS, 3, KERNEL, KERNEL)),
            np.zeros(CHANNELS),
            np.zeros((class_count, feats)),
            np.zeros(class_count),
            input_size,
        )

    def copy(self) -> "TinyClassifier":
        return TinyClassifier(
            self.conv_w.copy(), self.conv_b.copy(), self.fc_w.copy(), self.fc_b.copy(), self.input_size
        )

    def params(self) -> list[np.ndarray]:
        return [self.conv_w, self.conv_b, self.fc_w, self.fc_b]

    # -- forward / backward -------------------------------------------------

    def _check_batch(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        s = self.input_size
        if x.shape[-3:] != (s, s, 3):
            raise ValueError(f"model expects {s}x{s}x3 input, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("input contains non-finite values")
        return x.reshape((-1, s, s, 3))

    def _forward(self, xb: np.ndarray):
        n, s = xb.shape[0], self.input_size
        xpad = np.pad(xb, ((0, 0), (1, 1), (1, 1), (0, 0)))
        # (n, s, s, 3, 3, 3) ordered as (in, ky, kx) to match conv_w
        patches = sliding_window_view(xpad, (KERNEL, KERNEL), axis=(1, 2)).reshape(n, s, s, -1)
        z = patches @ self.conv_w.reshape(CHANNELS, -1).T + self.conv_b
        a = np.maximum(z, 0.0)
        pooled = a.reshape(n, s // 2, 2, s // 2, 2, CHANNELS).mean(axis=(2, 4))
        flat = pooled.reshape(n, -1)
        logits = flat @ self.fc_w.T + self.fc_b
        return logits, (patches, z, flat)

    def _backward(self, cache, dlogits: np.ndarray, params: bool = True, inputs: bool = True):
        patches, z, flat = cache
        s = self.input_size
        grads = {}
        if params:
            grads["fc_w"] = dlogits.T @ flat
            grads["fc_b"] = dlogits.sum(axis=0)
        dpooled = (dlogits @ self.fc_w).reshape(-1, s // 2, s // 2, CHANNELS)
        da = np.repeat(np.repeat(dpooled, 2, axis=1), 2, axis=2) / 4.0
        dz = da * (z > 0)
        if params:
            grads["conv_w"] = (
                dz.reshape(-1, CHANNELS).T @ patches.reshape(-1, patches.shape[-1])
            ).reshape(self.conv_w.shape)
            grads["conv_b"] = dz.sum(axis=(0, 1, 2))
        if inputs:
            dpatch = (dz @ self.conv_w.reshape(CHANNELS, -1)).reshape(-1, s, s, 3, KERNEL, KERNEL)
            dxpad = np.zeros((dpatch.shape[0], s + 2, s + 2, 3))
            for ky in range(KERNEL):
                for kx in range(KERNEL):
                    dxpad[:, ky : ky + s, kx : kx + s, :] += dpatch[..., ky, kx]
            grads["x"] = dxpad[:, 1:-1, 1:-1, :]
        return grads

    def logits(self, x) -> np.ndarray:
        """Logits for one image ``(S, S, 3)`` or a batch ``(N, S, S, 3)``."""
        x = np.asarray(x)
        out, _ = self._forward(self._check_batch(x))
        return out[0] if x.ndim == 3 else out

    def predict(self, x):
        return np.argmax(self.logits(x), axis=-1)

    def input_gradient(self, x, label: int) -> np.ndarray:
        """d cross_entropy(logits(x), label) / dx."""
        if not 0 <= label < self.class_count:
            raise ValueError(f"class index {label} out of range")
        xb = self._check_batch(x)
        logits, cache = self._forward(xb)
        dlogits = np.exp(_log_softmax(logits))
        dlogits[0, label] -= 1.0
        return self._backward(cache, dlogits, params=False)["x"][0]

    def jacobian(self, x) -> np.ndarray:
        """Gradients of every logit w.r.t. ``x``: shape ``(classes, S, S, 3)``."""
        logits, cache = self._forward(self._check_batch(x))
        return self._backward(cache, np.eye(self.class_count), params=False)["x"]

    def loss_and_grads(self, xb, labels):
        """Mean cross-entropy of a batch and its parameter gradients."""
        xb = self._check_batch(xb)
        logits, cache = self._forward(xb)
        probs = np.exp(_log_softmax(logits))
        loss = cross_entropy(logits, labels).mean()
        dlogits = probs
        dlogits[np.arange(len(labels)), labels] -= 1.0
        dlogits /= len(labels)
        return loss, self._backward(cache, dlogits, params=True, inputs=False)

    # -- serialization -----------------------------------------------------

    def save(self, path) -> None:
        """Flat little-endian float64 weights after a 16-byte header."""
        header = _HEADER.pack(MAGIC, VERSION, self.class_count, self.input_size)
        body = np.concatenate([p.ravel() for p in self.params()]).astype("<f8")
        Path(path).write_bytes(header + body.tobytes())

    @classmethod
    def load(cls, path) -> "TinyClassifier":
        raw = Path(path).read_bytes()
        if len(raw) < _HEADER.size:
            raise ValueError(f"{path}: truncated weights file")
        magic, version, classes, size = _HEADER.unpack_from(raw)
        if magic != MAGIC or version != VERSION:
            raise ValueError(f"{path}: not a TinyClassifier v{VERSION} weights file")
        model = cls.zeros(classes, size)
        body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
        expected = sum(p.size for p in model.params())
        if body.size != expected:
            raise ValueError(f"{path}: expected {expected} weights, found {body.size}")
        offset = 0
        for p in model.params():
            p[...] = body[offset : offset + p.size].reshape(p.shape)
            offset += p.size
        return model


class LinearClassifier:
    """Affine classifier ``logits = W x + b``; handy for closed-form checks."""

    def __init__(self, weights, bias, input_shape):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        self.input_shape = tuple(input_shape)

    @property
    def class_count(self) -> int:
        return self.weights.shape[0]

    def logits(self, x) -> np.ndarray:
        return self.weights @ np.asarray(x, dtype=np.float64).ravel() + self.bias

    def predict(self, x) -> int:
        return int(np.argmax(self.logits(x)))

    def jacobian(self, x) -> np.ndarray:
        return self.weights.reshape((self.class_count,) + self.input_shape)

    def input_gradient(self, x, label: int) -> np.ndarray:
        p = np.exp(_log_softmax(self.logits(x)))
        p[label] -= 1.0
        return (p @ self.weights).reshape(self.input_shape)


# -- module-level API --------------------------------------------------------


def forward(model, x) -> np.ndarray:
    return model.logits(x)


def input_gradient(model, x, true_class: int) -> np.ndarray:
    return model.input_gradient(x, true_class)


def fgsm(model, x, true_class: int, epsilon: float) -> np.ndarray:
    """One signed-gradient step of size ``epsilon``, clipped to [0, 1]."""
    if not (np.isfinite(epsilon) and epsilon >= 0):
        raise ValueError("epsilon must be finite and nonnegative")
    x = np.asarray(x, dtype=np.float64)
    grad = model.input_gradient(x, true_class)
    return np.clip(x + epsilon * np.sign(grad), 0.0, 1.0)


@dataclass
class DeepFoolResult:
    image: np.ndarray
    iterations: int
    perturbation_norm: float
    original_class: int
    final_class: int

    @property
    def flipped(self) -> bool:
        return self.final_class != self.original_class


def deepfool(model, x, max_iters: int = 50, overshoot: float = 0.02, clip: bool = True) -> DeepFoolResult:
    """Multi-class DeepFool: repeatedly step to the nearest linearized boundary.

    ``clip`` keeps every iterate inside [0, 1].
    """
    if not (np.isfinite(overshoot) and overshoot >= 0):
        raise ValueError("overshoot must be finite and nonnegative")
    x0 = np.asarray(x, dtype=np.float64)
    orig = int(np.argmax(model.logits(x0)))
    r_total = np.zeros_like(x0)
    x_adv = x0.copy()
    label = orig
    it = 0
    while label == orig and it < max_iters:
        logits = model.logits(x_adv)
        jac = model.jacobian(x_adv)
        if not (np.all(np.isfinite(jac)) and np.all(np.isfinite(logits))):
            raise AttackError("non-finite gradient in DeepFool")
        w = jac - jac[orig]
        f = logits - logits[orig]
        norms = np.sqrt((w.reshape(len(f), -1) ** 2).sum(axis=1))
        with np.errstate(divide="ignore", invalid="ignore"):
            dist = np.abs(f) / norms
        dist[orig] = np.inf
        dist[norms == 0] = np.inf
        k = int(np.argmin(dist))
        if not np.isfinite(dist[k]):
            raise AttackError("DeepFool found no reachable decision boundary")
        r_total = r_total + (np.abs(f[k]) / norms[k] ** 2) * w[k]
        x_adv = x0 + (1.0 + overshoot) * r_total
        if clip:
            x_adv = np.clip(x_adv, 0.0, 1.0)
        it += 1
        label = int(np.argmax(model.logits(x_adv)))
    return DeepFoolResult(
        image=x_adv,
        iterations=it,
        perturbation_norm=float(np.sqrt(((x_adv - x0) ** 2).sum())),
        original_class=orig,
        final_class=label,
    )


@dataclass(frozen=True)
class AttackConfig:
    method: str
    epsilon: float = 8 / 255
    overshoot: float = 0.02
    max_iters: int = 50

    def __post_init__(self):
        if self.method not in ("fgsm", "deepfool"):
            raise ValueError(f"unknown attack {self.method!r}")
        for name in ("epsilon", "overshoot"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")

    @property
    def label(self) -> str:
        return "FGSM" if self.method == "fgsm" else "DeepFool"


def _attack_tile(model, tile: np.ndarray, cfg: AttackConfig, true_class: Optional[int]) -> np.ndarray:
    if cfg.method == "fgsm":
        label = int(np.argmax(model.logits(tile))) if true_class is None else true_class
        return fgsm(model, tile, label, cfg.epsilon)
    return deepfool(model, tile, cfg.max_iters, cfg.overshoot).image


def attack_image(model, img, cfg: AttackConfig, true_class: Optional[int] = None) -> np.ndarray:
    """Attack a uint8 image and return the adversarial uint8 image.

    Images larger than the model input are attacked tile by tile (edge-padded
    to whole tiles); each tile uses the model's own prediction as its label.
    ``true_class`` is only honoured when the image is exactly one tile.
    """
    img = as_image(img)
    h, w = img.shape[:2]
    s = model.input_size
    x = to_unit(img)
    if (h, w) == (s, s):
        return to_uint8(_attack_tile(model, x, cfg, true_class))
    ph, pw = -(-h // s) * s, -(-w // s) * s
    xpad = np.pad(x, ((0, ph - h), (0, pw - w), (0, 0)), mode="edge")
    out = np.empty_like(xpad)
    for r in range(0, ph, s):
        for c in range(0, pw, s):
            out[r : r + s, c : c + s] = _attack_tile(model, xpad[r : r + s, c : c + s], cfg, None)
    return to_uint8(out[:h, :w])


# -- training ------------------------------------------------------------------


@dataclass
class TrainHistory:
    epoch_loss: list[float] = field(default_factory=list)
    train_accuracy: float = 0.0


def accuracy(model, images, labels) -> float:
    x = np.asarray(images)
    if x.dtype == np.uint8:
        x = x.astype(np.float64) / 255.0
    return float((model.predict(x) == np.asarray(labels)).mean())


def train_tiny(
    model: TinyClassifier,
    images,
    labels,
    epochs: int = 20,
    seed: int = 0,
    lr: float = 0.05,
    batch_size: int = 8,
) -> tuple[TinyClassifier, TrainHistory]:
    """Mini-batch SGD with a fixed step size and seeded shuffling.

    ``images`` may be uint8 or floats in [0, 1]. Returns a trained copy.
    """
    x = np.asarray(images)
    if x.dtype == np.uint8:
        x = x.astype(np.float64) / 255.0
    y = np.asarray(labels, dtype=np.int64)
    if len(x) != len(y) or len(y) == 0:
        raise ValueError("images and labels must be non-empty and equally long")
    if np.unique(y).size < 2:
        raise ValueError("training needs at least two classes")
    if y.min() < 0 or y.max() >= model.class_count:
        raise ValueError("labels out of range for the model")
    model = model.copy()
    rng = np.random.default_rng(seed)
    history = TrainHistory()
    for _ in range(epochs):
        order = rng.permutation(len(y))
        total = 0.0
        for start in range(0, len(y), batch_size):
            idx = order[start : start + batch_size]
            loss, grads = model.loss_and_grads(x[idx], y[idx])
            total += loss * len(idx)
            model.conv_w -= lr * grads["conv_w"]
            model.conv_b -= lr * grads["conv_b"]
            model.fc_w -= lr * grads["fc_w"]
            model.fc_b -= lr * grads["fc_b"]
        history.epoch_loss.append(total / len(y))
    history.train_accuracy = accuracy(model, x, y)
    return model, history
