"""Dilated partial convolutions for irregular-hole image inpainting."""
from ._accel import backend
from .convspec import ConvSpec, ShapeError
from .ops import dpconv_backward, dpconv_forward, mask_update, window_mask_sum

__version__ = "0.1.0"

__all__ = ["ConvSpec", "ShapeError", "backend", "dpconv_backward", "dpconv_forward",
           "mask_update", "window_mask_sum", "__version__"]
