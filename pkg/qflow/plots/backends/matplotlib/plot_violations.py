# Author: Nicolas Legrand <nicolas.legrand@cfin.au.dk>

from typing import Optional, Tuple

import matplotlib.pyplot as plt
from matplotlib.axes import Axes
from matplotlib.collections import PolyCollection
from matplotlib.patches import Rectangle


def plot_violations(
    geometry: dict,
    figsize: Tuple[float, float] = (10, 10),
    ax: Optional[Axes] = None,
    **kwargs
) -> Axes:
    """Plot a violation map.

    Parameters
    ----------
    geometry :
        Output of :py:func:`qflow.plots.plot_violations.violation_geometry`.
    figsize :
        Figure size. Default is `(10, 10)`.
    ax :
        Where to draw the plot. Default is `None` (create a new figure).

    Returns
    -------
    ax :
        The matplotlib axes containing the plot.

    """
    if ax is None:
        _, ax = plt.subplots(figsize=figsize)

    colors = plt.get_cmap("tab10")
    for k, (label, polygons) in enumerate(geometry["layers"].items()):
        ax.add_collection(
            PolyCollection(
                polygons,
                facecolor="none",
                edgecolor=colors(k % 10),
                linewidth=0.3,
                label=label,
            )
        )

    for (x0, y0, x1, y1), rule in zip(geometry["violations"], geometry["rules"]):
        ax.add_patch(
            Rectangle(
                (x0, y0),
                max(x1 - x0, 1.0),
                max(y1 - y0, 1.0),
                facecolor="#c56c5e",
                edgecolor="#9d2b39",
                alpha=0.6,
                zorder=10,
            )
        )
        ax.annotate(rule, (x1, y1), color="#9d2b39", fontsize=8, zorder=11)

    ax.autoscale_view()
    ax.set_aspect("equal")
    ax.set_xlabel("x (um)")
    ax.set_ylabel("y (um)")
    ax.set_title(geometry["title"])
    if geometry["layers"]:
        ax.legend(loc="upper right", fontsize=7)

    return ax
