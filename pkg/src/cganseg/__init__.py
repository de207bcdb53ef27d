"""Conditional-GAN mass segmentation and binary-mask shape classification."""

__version__ = "0.1.0"
