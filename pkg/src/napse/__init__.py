"""Noise-aware pre-training of speech encoders with a MOS regression probe."""

__version__ = "0.1.0"
