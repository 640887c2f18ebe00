"""Wavelet/memory video segmentation network on a small numpy autodiff core."""

__version__ = "0.1.0"
