"""Saliency-guided JPEG-style defenses against adversarial images."""

__version__ = "0.1.0"
