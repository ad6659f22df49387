"""Module with functions for visualization."""
from itertools import cycle
from typing import List, Sequence, Tuple

import matplotlib
import numpy as np
import pandas as pd
from matplotlib import pyplot as plt

from ..dataset.volume import Volume


def get_ax(
    rows: int = 1, cols: int = 1, scale: int = 4, shape: Tuple[int] = None
) -> Tuple[matplotlib.figure.Figure, matplotlib.axes.Axes]:
    """Return a figure and Axes array to be used in all visualizations.

    :param rows: Number of rows.
    :type rows: int
    :param cols: Number of columns.
    :type cols: int
    :param scale: Scale factor.
    :type scale: int
    :param shape: Shape of figure in scale units.
    :type shape: Tuple[int]
    :rtype: Tuple[matplotlib.figure.Figure, matplotlib.axes.Axes]
    """
    if shape is None:
        shape = (scale * cols, scale * rows)
    else:
        shape = (shape[0] * scale, shape[1] * scale)
    f, ax = plt.subplots(rows, cols, figsize=shape, squeeze=False)
    return f, ax


def show_history(
    ax: matplotlib.axes.Axes,
    path: str,
    metrics: List[str] = None,
    epochs: List = None,
    find_min: str = "loss",
) -> matplotlib.axes.Axes:
    """Plot the per-epoch loss components of one fold.

    :param ax: Axes to plot train curve; a new one when None.
    :type ax: matplotlib.axes.Axes
    :param path: Path to history.csv file.
    :type path: str
    :param metrics: Columns to show; all but 'epoch' when None.
    :type metrics: List
    :param epochs: Epochs to show in format [min_epoch, max_epoch).
    :type epochs: list
    :param find_min: Column whose minimum is marked; skipped when None.
    :type find_min: str
    :rtype: matplotlib.axes.Axes
    """
    if ax is None:
        ax = get_ax()[1][0, 0]
    df = pd.read_csv(path)
    if epochs is not None:
        df = df[np.isin(df["epoch"], range(*epochs))].reset_index(drop=True)
    if metrics is None:
        metrics = [k for k in list(df) if k != "epoch"]

    for metric, c in zip(metrics, cycle("bgrcmyk")):
        (s,) = ax.plot(df["epoch"], df[metric], c=c)
        s.set_label(metric)

    if find_min is not None and find_min in df.columns and len(df):
        m = df[find_min].idxmin()
        v = ax.axvline(df.loc[m, "epoch"], c="r", linestyle="--")
        v.set_label(f"Minimum of {find_min} at {df.loc[m, 'epoch']}")

    ax.set_xlabel("epoch")
    ax.grid()
    ax.legend()
    return ax


def show_volume(volume: Volume, slices: Sequence[int] = None, cols: int = 4):
    """Show slices of a volume in a grid; representative slices are titled in red.

    :param volume: Volume.
    :type volume: Volume
    :param slices: Slice indices; all when None.
    :type slices: Sequence[int]
    :param cols: Grid columns.
    :type cols: int
    :rtype: matplotlib.figure.Figure
    """
    slices = list(range(volume.depth)) if slices is None else list(slices)
    rows = int(np.ceil(len(slices) / cols))
    f, ax = get_ax(rows, cols, scale=3)
    vmin, vmax = np.percentile(volume.voxels, [1, 99])
    for k, a in enumerate(ax.flat):
        a.axis("off")
        if k >= len(slices):
            continue
        d = slices[k]
        a.imshow(volume.voxels[d], cmap="gray", vmin=vmin, vmax=vmax)
        rep = d in volume.representative_slices
        a.set_title(f"slice {d}", color="r" if rep else "k")
    f.suptitle(f"{volume.name} label={volume.label}")
    return f
