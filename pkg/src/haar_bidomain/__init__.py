"""Haar wavelet collocation solver for degenerate bidomain reaction-diffusion systems."""

__version__ = "0.1.0"
