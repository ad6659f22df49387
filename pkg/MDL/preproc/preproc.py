"""Intensity normalization and in-plane resizing."""
import logging

import numpy as np
from skimage.transform import resize

from ..dataset.volume import Volume

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-8


def zscore(voxels: np.ndarray) -> np.ndarray:
    """Zero mean, unit standard deviation over all voxels.

    :param voxels: Intensities.
    :type voxels: np.ndarray
    :rtype: np.ndarray
    """
    std = voxels.std()
    if std < STD_FLOOR:
        logger.warning("Constant volume (std %.3g); normalized to zeros.", std)
    return (voxels - voxels.mean()) / max(std, STD_FLOOR)


def resize_xy(voxels: np.ndarray, target_xy: int) -> np.ndarray:
    """Bilinear in-plane resize to ``target_xy`` × ``target_xy`` with edge clamping; depth kept.

    :param voxels: [D, H, W] array.
    :type voxels: np.ndarray
    :param target_xy: Output extent S.
    :type target_xy: int
    :rtype: np.ndarray
    """
    d, h, w = voxels.shape
    if (h, w) == (target_xy, target_xy):
        return voxels.copy()
    return resize(
        voxels,
        (d, target_xy, target_xy),
        order=1,
        mode="edge",
        anti_aliasing=False,
        preserve_range=True,
    )


def preprocess(volume: Volume, target_xy: int = 64) -> np.ndarray:
    """Z-score then resize; returns a [1, D, S, S] array ready for batching.

    :param volume: Input volume.
    :type volume: Volume
    :param target_xy: Output in-plane extent S, divisible by 16.
    :type target_xy: int
    :rtype: np.ndarray
    """
    if target_xy < 16 or target_xy % 16:
        raise ValueError(f"target_xy must be a positive multiple of 16, got {target_xy}.")
    return resize_xy(zscore(volume.voxels), target_xy)[None]
