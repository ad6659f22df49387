"""Init file."""
from .preproc import preprocess, resize_xy, zscore

__all__ = ["preprocess", "resize_xy", "zscore"]
