"""Learned error-correction codec for AWGN channels with one-bit receiver quantization."""

__version__ = "0.1.0"
