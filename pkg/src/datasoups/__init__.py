"""Desk-scale windowed-attention classifier with continuous fine-tuning,
test-time augmentation and k-fold prediction averaging."""

__version__ = "0.1.0"
