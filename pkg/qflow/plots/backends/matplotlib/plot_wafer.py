# Author: Nicolas Legrand <nicolas.legrand@cfin.au.dk>

from typing import Optional, Tuple

import matplotlib.pyplot as plt
from matplotlib.axes import Axes
from matplotlib.collections import PatchCollection
from matplotlib.patches import Circle, Rectangle


def plot_wafer(
    geometry: dict,
    figsize: Tuple[float, float] = (8, 8),
    ax: Optional[Axes] = None,
    **kwargs
) -> Axes:
    """Plot a wafer map.

    Parameters
    ----------
    geometry :
        Output of :py:func:`qflow.plots.plot_wafer.wafer_geometry`.
    figsize :
        Figure size. Default is `(8, 8)`.
    ax :
        Where to draw the plot. Default is `None` (create a new figure).

    Returns
    -------
    ax :
        The matplotlib axes containing the plot.

    """
    if ax is None:
        _, ax = plt.subplots(figsize=figsize)

    r = geometry["radius"]
    ax.add_patch(Circle((0, 0), r, facecolor="#f2f2f2", edgecolor="k", linewidth=1.5))
    ax.add_patch(
        Circle(
            (0, 0),
            geometry["usable_radius"],
            fill=False,
            edgecolor="gray",
            linestyle="--",
            linewidth=1,
        )
    )

    lanes = [
        Rectangle((x0, y0), x1 - x0, y1 - y0) for x0, y0, x1, y1 in geometry["lanes"]
    ]
    ax.add_collection(
        PatchCollection(
            lanes, facecolor="none", edgecolor="#9ac1d4", hatch="////", linewidth=0
        )
    )

    dies = [Rectangle((x0, y0), x1 - x0, y1 - y0) for x0, y0, x1, y1 in geometry["dies"]]
    ax.add_collection(
        PatchCollection(
            dies, facecolor="#4c72b0", edgecolor="k", alpha=0.6, linewidth=0.5
        )
    )

    ax.set_xlim(-r * 1.05, r * 1.05)
    ax.set_ylim(-r * 1.05, r * 1.05)
    ax.set_aspect("equal")
    ax.set_xlabel("x (mm)")
    ax.set_ylabel("y (mm)")
    ax.set_title(geometry["title"])

    return ax
